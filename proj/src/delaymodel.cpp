#include "podlab/delaymodel.hpp"

#include <cmath>
#include <sstream>

namespace podlab {

namespace {
constexpr std::size_t kValidationPoints = 200;
}

double expected_delay(const DelayDistribution& dist) { return dist.mean_s(); }

TransferFunction pade_approx(double theta_s, int order) {
  if (order < 1 || order > 8) {
    throw Error("delaymodel", "Pade order " + std::to_string(order) + " outside 1..8");
  }
  if (!(theta_s >= 0.0)) throw Error("delaymodel", "delay must be non-negative");
  if (theta_s == 0.0) return TransferFunction();

  // c_k = (2n-k)! n! / ((2n)! k! (n-k)!), built by the ratio
  // c_{k+1}/c_k = (n-k) / ((2n-k)(k+1)).
  const auto n = static_cast<std::size_t>(order);
  std::vector<double> num(n + 1);
  std::vector<double> den(n + 1);
  double c = 1.0;
  double tp = 1.0;
  for (std::size_t k = 0; k <= n; ++k) {
    den[k] = c * tp;
    num[k] = (k % 2 == 0 ? 1.0 : -1.0) * c * tp;
    c *= static_cast<double>(n - k) / (static_cast<double>(2 * n - k) * static_cast<double>(k + 1));
    tp *= theta_s;
  }
  return TransferFunction(std::move(num), std::move(den));
}

double validate_surrogate(const TransferFunction& pade, double theta_s, Band band) {
  if (!(band.low_hz < band.high_hz) || !(band.low_hz > 0.0)) {
    throw Error("delaymodel", "validation band must satisfy 0 < low < high");
  }
  double worst = 0.0;
  for (double f : logspace(band.low_hz, band.high_hz, kValidationPoints)) {
    const double w = 2.0 * kPi * f;
    const double err = std::abs(continuous_phase_deg(pade, w) + w * theta_s * kRadToDeg);
    worst = std::max(worst, err);
  }
  return worst;
}

DelaySurrogate select_surrogate(double theta_s, Band band, double max_phase_err_deg,
                                int max_order) {
  DelaySurrogate s;
  s.theta_s = theta_s;
  s.band = band;
  for (int order = 1; order <= max_order; ++order) {
    s.order = order;
    s.pade = pade_approx(theta_s, order);
    s.max_phase_err_deg = validate_surrogate(s.pade, theta_s, band);
    if (s.max_phase_err_deg < max_phase_err_deg) return s;
  }
  std::ostringstream os;
  os << "no Pade order up to " << max_order << " meets " << max_phase_err_deg
     << " deg over " << band.low_hz << "-" << band.high_hz << " Hz for theta " << theta_s << " s";
  throw Error("delaymodel", os.str());
}

}  // namespace podlab
