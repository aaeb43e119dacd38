#include "podlab/sysid.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace podlab {

namespace {

// Feedback taps (polynomial exponents) of maximal-length Fibonacci LFSRs.
std::vector<int> lfsr_taps(int n) {
  switch (n) {
    case 3: return {3, 2};
    case 4: return {4, 3};
    case 5: return {5, 3};
    case 6: return {6, 5};
    case 7: return {7, 6};
    case 8: return {8, 6, 5, 4};
    case 9: return {9, 5};
    case 10: return {10, 7};
    case 11: return {11, 9};
    case 12: return {12, 6, 4, 1};
    case 13: return {13, 4, 3, 1};
    case 14: return {14, 5, 3, 1};
    case 15: return {15, 14};
    case 16: return {16, 15, 13, 4};
    default: break;
  }
  throw Error("sysid", "no primitive polynomial table entry for a " + std::to_string(n) +
                           "-bit register");
}

std::size_t auto_segment_length(std::size_t n) {
  std::size_t seg = 16;
  while (seg * 2 * 9 <= 2 * n) seg *= 2;
  return seg;
}

}  // namespace

void PrbsConfig::validate() const {
  if (register_bits < 3 || register_bits > 16) {
    throw Error("sysid", "PRBS register length must lie in 3..16");
  }
  if (!(chip_period_s > 0.0)) throw Error("sysid", "PRBS chip period must be positive");
  if (!(amplitude_pu > 0.0)) throw Error("sysid", "PRBS amplitude must be positive");
  if (!(duration_s > 0.0)) throw Error("sysid", "PRBS duration must be positive");
}

std::vector<int> mls_chips(int register_bits) {
  const auto taps = lfsr_taps(register_bits);
  const std::uint32_t period = (1u << register_bits) - 1u;
  std::uint32_t state = period;  // all ones
  std::vector<int> chips;
  chips.reserve(period);
  for (std::uint32_t i = 0; i < period; ++i) {
    chips.push_back((state & 1u) ? 1 : -1);
    std::uint32_t bit = 0;
    for (int t : taps) bit ^= state >> (register_bits - t);
    state = (state >> 1) | ((bit & 1u) << (register_bits - 1));
  }
  return chips;
}

std::vector<double> gen_prbs(const PrbsConfig& cfg, double sample_rate_hz) {
  cfg.validate();
  if (!(sample_rate_hz > 0.0)) throw Error("sysid", "sample rate must be positive");
  const auto chips = mls_chips(cfg.register_bits);
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * sample_rate_hz));
  const double dt = 1.0 / sample_rate_hz;
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto chip = static_cast<std::size_t>(std::floor(static_cast<double>(k) * dt / cfg.chip_period_s + 1e-9));
    out[k] = cfg.amplitude_pu * chips[chip % chips.size()];
  }
  return out;
}

FrfEstimate estimate_frf(std::span<const double> u, std::span<const double> y,
                         double sample_rate_hz, Band band, std::size_t segment_length) {
  if (u.size() != y.size()) throw Error("sysid", "input and output traces differ in length");
  if (!(sample_rate_hz > 0.0)) throw Error("sysid", "sample rate must be positive");
  if (!(band.low_hz > 0.0 && band.low_hz < band.high_hz)) throw Error("sysid", "invalid band");
  const double duration = static_cast<double>(u.size()) / sample_rate_hz;
  if (duration < 20.0 / band.low_hz) {
    std::ostringstream os;
    os << "record of " << duration << " s too short; need >= " << 20.0 / band.low_hz
       << " s for the " << band.low_hz << " Hz band edge";
    throw Error("sysid", os.str());
  }
  const std::size_t nseg = segment_length ? segment_length : auto_segment_length(u.size());
  if (nseg < 8 || nseg > u.size()) throw Error("sysid", "invalid Welch segment length");
  const std::size_t hop = nseg / 2;
  const std::size_t count = (u.size() - nseg) / hop + 1;

  std::vector<double> window(nseg);
  for (std::size_t i = 0; i < nseg; ++i) {
    window[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(nseg)));
  }
  const double df = sample_rate_hz / static_cast<double>(nseg);
  const auto k_lo = static_cast<std::size_t>(std::ceil(band.low_hz / df - 1e-9));
  const auto k_hi = std::min(static_cast<std::size_t>(std::floor(band.high_hz / df + 1e-9)), nseg / 2);
  if (k_lo < 1 || k_hi < k_lo) throw Error("sysid", "band contains no frequency bins");

  const std::size_t nbins = k_hi - k_lo + 1;
  std::vector<double> suu(nbins, 0.0);
  std::vector<double> syy(nbins, 0.0);
  std::vector<Complex> suy(nbins, Complex(0.0, 0.0));

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> ub(nseg);
  std::vector<double> yb(nseg);
  std::vector<Complex> U;
  std::vector<Complex> Y;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t off = s * hop;
    double mu = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < nseg; ++i) {
      mu += u[off + i];
      my += y[off + i];
    }
    mu /= static_cast<double>(nseg);
    my /= static_cast<double>(nseg);
    for (std::size_t i = 0; i < nseg; ++i) {
      ub[i] = (u[off + i] - mu) * window[i];
      yb[i] = (y[off + i] - my) * window[i];
    }
    fft.fwd(U, ub);
    fft.fwd(Y, yb);
    for (std::size_t k = 0; k < nbins; ++k) {
      const Complex& a = U[k_lo + k];
      const Complex& b = Y[k_lo + k];
      suu[k] += std::norm(a);
      syy[k] += std::norm(b);
      suy[k] += std::conj(a) * b;
    }
  }

  FrfEstimate est;
  est.segment_length = nseg;
  est.segments = count;
  std::size_t poor = 0;
  for (std::size_t k = 0; k < nbins; ++k) {
    const double f = static_cast<double>(k_lo + k) * df;
    const Complex h = suu[k] > 0.0 ? suy[k] / suu[k] : Complex(0.0, 0.0);
    const double denom = suu[k] * syy[k];
    const double coh = denom > 0.0 ? std::norm(suy[k]) / denom : 0.0;
    if (coh < 0.6) ++poor;
    est.points.push_back({f, h});
    est.coherence.push_back(coh);
  }
  if (static_cast<double>(poor) > 0.2 * static_cast<double>(nbins)) {
    std::ostringstream os;
    os << "low excitation: coherence below 0.6 on " << poor << " of " << nbins << " band points";
    throw Error("sysid", os.str());
  }
  return est;
}

IdentifiedPlant fit_rational(std::span<const FrequencyResponsePoint> frf, int order) {
  FitOptions opts;
  opts.order = order;
  return fit_rational(frf, opts);
}

IdentifiedPlant fit_rational(std::span<const FrequencyResponsePoint> frf, const FitOptions& opts) {
  const int n = opts.order;
  const int m = opts.num_degree < 0 ? n - 1 : opts.num_degree;
  if (n < 1 || m < 0 || m > n) throw Error("sysid", "invalid rational fit orders");
  if (frf.size() < static_cast<std::size_t>(4 * n)) {
    throw Error("sysid", "rational fit of order " + std::to_string(n) + " needs at least " +
                             std::to_string(4 * n) + " frequency points");
  }
  double f_max = 0.0;
  double f_min = frf.front().freq_hz;
  for (const auto& p : frf) {
    if (!(std::isfinite(p.value.real()) && std::isfinite(p.value.imag())) || std::abs(p.value) == 0.0) {
      throw Error("sysid", "degenerate data: zero or non-finite response sample");
    }
    f_max = std::max(f_max, p.freq_hz);
    f_min = std::min(f_min, p.freq_hz);
  }
  const double w0 = 2.0 * kPi * f_max;
  const auto K = static_cast<Eigen::Index>(frf.size());
  const Eigen::Index cols = (m + 1) + n;

  // Scaled variable s/w0 keeps the Vandermonde columns of comparable size.
  std::vector<Complex> sh(frf.size());
  for (std::size_t k = 0; k < frf.size(); ++k) sh[k] = Complex(0.0, frf[k].freq_hz * 2.0 * kPi / w0);

  Vector a = Vector::Zero(n + 1);
  a(n) = 1.0;
  std::vector<double> prev_weight(frf.size(), 1.0);
  Vector theta = Vector::Zero(cols);
  int iterations = 0;
  Matrix M(2 * K, cols);
  Vector rhs(2 * K);
  for (int it = 0; it < opts.max_iterations; ++it) {
    ++iterations;
    for (Eigen::Index k = 0; k < K; ++k) {
      const Complex H = frf[static_cast<std::size_t>(k)].value;
      const double w = 1.0 / (prev_weight[static_cast<std::size_t>(k)] * std::abs(H));
      const Complex s = sh[static_cast<std::size_t>(k)];
      Complex pw(1.0, 0.0);
      for (int i = 0; i <= n; ++i) {
        if (i <= m) {
          M(2 * k, i) = w * pw.real();
          M(2 * k + 1, i) = w * pw.imag();
        }
        const Complex hv = -w * H * pw;
        if (i < n) {
          M(2 * k, m + 1 + i) = hv.real();
          M(2 * k + 1, m + 1 + i) = hv.imag();
        } else {
          rhs(2 * k) = -hv.real();
          rhs(2 * k + 1) = -hv.imag();
        }
        pw *= s;
      }
    }
    Vector colscale = M.colwise().norm().transpose();
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (colscale(c) == 0.0) colscale(c) = 1.0;
    }
    const Matrix Ms = M * colscale.cwiseInverse().asDiagonal();
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Ms);
    cod.setThreshold(1e-12);
    if (cod.rank() < (cols + 1) / 2) {
      throw Error("sysid", "degenerate data: singular normal equations (rank " +
                               std::to_string(cod.rank()) + " of " + std::to_string(cols) + ")");
    }
    const Vector next = cod.solve(rhs).cwiseQuotient(colscale);
    const double change = (next - theta).cwiseAbs().maxCoeff() / std::max(next.cwiseAbs().maxCoeff(), 1e-300);
    theta = next;
    for (int j = 0; j < n; ++j) a(j) = theta(m + 1 + j);
    std::vector<double> den(a.data(), a.data() + a.size());
    for (std::size_t k = 0; k < frf.size(); ++k) prev_weight[k] = std::abs(poly_eval(den, sh[k]));
    if (it > 0 && change < opts.tolerance) break;
  }

  std::vector<double> num(static_cast<std::size_t>(m) + 1);
  std::vector<double> den(static_cast<std::size_t>(n) + 1);
  double sc = 1.0;
  for (int i = 0; i <= n; ++i) {
    if (i <= m) num[static_cast<std::size_t>(i)] = theta(i) / sc;
    den[static_cast<std::size_t>(i)] = a(i) / sc;
    sc *= w0;
  }

  IdentifiedPlant out;
  out.iterations = iterations;
  out.fit_band = {f_min, f_max};

  auto poles = poly_roots(den);
  bool reflected = false;
  for (Complex& p : poles) {
    if (p.real() > 0.0) {
      p = Complex(-p.real(), p.imag());
      reflected = true;
    }
  }
  if (reflected) {
    const double lead = den.back();
    den = poly_from_roots(poles);
    for (double& c : den) c *= lead;
    out.warnings.push_back("unstable fitted poles reflected into the left half-plane");
  }
  out.tf = TransferFunction(num, den);

  for (const auto& p : frf) {
    const Complex h = out.tf.eval(Complex(0.0, 2.0 * kPi * p.freq_hz));
    const Complex ratio = h / p.value;
    out.frf_fit_mag_err_db = std::max(out.frf_fit_mag_err_db, std::abs(20.0 * std::log10(std::abs(ratio))));
    out.frf_fit_phase_err_deg = std::max(out.frf_fit_phase_err_deg, std::abs(std::arg(ratio)) * kRadToDeg);
  }
  for (const Complex& p : out.tf.poles()) {
    if (p.imag() > 0.0) out.modes.push_back(mode_report(p));
  }
  std::sort(out.modes.begin(), out.modes.end(),
            [](const ModeReport& x, const ModeReport& y) { return x.freq_hz < y.freq_hz; });
  return out;
}

std::pair<double, double> find_modes(std::span<const Complex> poles, Band band) {
  std::vector<ModeReport> cand;
  for (const Complex& p : poles) {
    if (p.imag() <= 0.0) continue;
    const ModeReport r = mode_report(p);
    if (r.damping_ratio < 1.0 && r.freq_hz >= band.low_hz && r.freq_hz <= band.high_hz) cand.push_back(r);
  }
  if (cand.size() < 2) {
    throw Error("sysid", "fewer than two underdamped pole pairs in the " + std::to_string(band.low_hz) +
                             "-" + std::to_string(band.high_hz) + " Hz band");
  }
  // Lightest damping first; ties go to the lower frequency.
  std::stable_sort(cand.begin(), cand.end(), [](const ModeReport& x, const ModeReport& y) {
    if (std::abs(x.damping_ratio - y.damping_ratio) > 1e-12) return x.damping_ratio < y.damping_ratio;
    return x.freq_hz < y.freq_hz;
  });
  double w1 = std::abs(cand[0].eigenvalue.imag());
  double w2 = std::abs(cand[1].eigenvalue.imag());
  if (w2 < w1) std::swap(w1, w2);
  return {w1, w2};
}

std::pair<double, double> find_modes(const IdentifiedPlant& plant) {
  const auto poles = plant.tf.poles();
  return find_modes(poles, plant.fit_band);
}

void write_experiment_csv(std::ostream& os, const ExperimentRecord& rec) {
  os << "t_s,u_pu,y_pu\n";
  char buf[96];
  for (std::size_t k = 0; k < rec.u.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g\n", static_cast<double>(k) * rec.dt, rec.u[k], rec.y[k]);
    os << buf;
  }
}

ExperimentRecord read_experiment_csv(std::istream& is) {
  ExperimentRecord rec;
  std::string line;
  bool header = false;
  std::vector<double> t;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "t_s,u_pu,y_pu") throw Error("sysid", "unexpected experiment header '" + line + "'");
      header = true;
      continue;
    }
    std::array<double, 3> v{};
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &v[0], &v[1], &v[2]) != 3) {
      throw Error("sysid", "malformed experiment row '" + line + "'");
    }
    t.push_back(v[0]);
    rec.u.push_back(v[1]);
    rec.y.push_back(v[2]);
  }
  if (t.size() < 2) throw Error("sysid", "experiment record has fewer than two samples");
  rec.dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
  return rec;
}

ExperimentRecord run_prbs_experiment(const StateSpace& path, const PrbsConfig& cfg,
                                     double sample_rate_hz) {
  ExperimentRecord rec;
  rec.dt = 1.0 / sample_rate_hz;
  rec.u = gen_prbs(cfg, sample_rate_hz);
  rec.y = simulate(path, rec.u, rec.dt);
  return rec;
}

Identification identify(const ExperimentRecord& rec, Band band, const FitOptions& opts,
                        std::size_t segment_length) {
  Identification out;
  out.frf = estimate_frf(rec.u, rec.y, 1.0 / rec.dt, band, segment_length);
  // Sampled u is the held input seen half a sample early: remove
  // exp(-j w dt/2) sinc(w dt/2) so the points describe the continuous plant.
  for (auto& p : out.frf.points) {
    const double x = kPi * p.freq_hz * rec.dt;
    const double sinc = x == 0.0 ? 1.0 : std::sin(x) / x;
    p.value *= std::polar(1.0 / sinc, x);
  }
  out.plant = fit_rational(out.frf.points, opts);
  out.plant.fit_band = band;
  return out;
}

}  // namespace podlab
