#include "podlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace podlab {

namespace {

constexpr double kAmbiguityFraction = 0.05;

// Sign- and gain-scaled realization of W C D', factor by factor.
StateSpace controller_ss(const LoopParts& loop) {
  StateSpace k = series(series(to_state_space(loop.washout), to_state_space(loop.compensator)),
                        to_state_space(loop.delay));
  const double g = loop.feedback_sign * loop.gain;
  k.C *= g;
  k.D *= g;
  return k;
}

double natural_hz(Complex lambda) { return std::abs(lambda) / (2.0 * kPi); }

}  // namespace

TransferFunction LoopParts::shaping() const { return washout * compensator * delay; }

TransferFunction open_loop(const TransferFunction& compensator, const TransferFunction& washout,
                           double gain, const TransferFunction& surrogate,
                           const TransferFunction& plant) {
  if (gain == 0.0) return TransferFunction::gain(0.0);
  return scale(washout * compensator * surrogate * plant, gain);
}

TransferFunction open_loop(const LoopParts& loop, const TransferFunction& plant) {
  return open_loop(loop.compensator, loop.washout, loop.gain, loop.delay, plant);
}

Matrix closed_loop_matrix(const StateSpace& plant, std::span<const LoopParts> loops) {
  plant.validate();
  if (plant.outputs() != 1) throw Error("analysis", "plant must have a single measured output");
  if (plant.D.cwiseAbs().maxCoeff() != 0.0) throw Error("analysis", "plant feedthrough must be zero");
  std::vector<StateSpace> ks;
  Eigen::Index n = plant.order();
  for (const auto& loop : loops) {
    if (loop.plant_input < 0 || loop.plant_input >= plant.inputs()) {
      throw Error("analysis", "loop drives a plant input that does not exist");
    }
    ks.push_back(controller_ss(loop));
    n += ks.back().order();
  }
  if (n > 100) throw Error("analysis", "closed-loop order " + std::to_string(n) + " exceeds 100");

  const Eigen::Index np = plant.order();
  Matrix A = Matrix::Zero(n, n);
  A.topLeftCorner(np, np) = plant.A;
  Eigen::Index off = np;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const StateSpace& k = ks[i];
    const Vector b = plant.B.col(loops[i].plant_input);
    const Eigen::Index nk = k.order();
    A.topLeftCorner(np, np) += b * k.D(0, 0) * plant.C;
    if (nk > 0) {
      A.block(0, off, np, nk) = b * k.C;
      A.block(off, 0, nk, np) = k.B * plant.C;
      A.block(off, off, nk, nk) = k.A;
    }
    off += nk;
  }
  return A;
}

std::vector<ModeReport> baseline_modes(const StateSpace& plant, Band band) {
  std::vector<ModeReport> cand;
  for (const Complex& l : eigen(plant.A)) {
    if (l.imag() <= 0.0) continue;
    const ModeReport r = mode_report(l);
    if (r.freq_hz >= band.low_hz && r.freq_hz <= band.high_hz) cand.push_back(r);
  }
  if (cand.size() < 2) throw Error("analysis", "plant has fewer than two oscillatory modes in band");
  std::stable_sort(cand.begin(), cand.end(), [](const ModeReport& a, const ModeReport& b) {
    return a.damping_ratio < b.damping_ratio;
  });
  cand.resize(2);
  std::sort(cand.begin(), cand.end(),
            [](const ModeReport& a, const ModeReport& b) { return a.freq_hz < b.freq_hz; });
  return cand;
}

EigenCase closed_loop_eigs(const StateSpace& plant, std::span<const LoopParts> loops,
                           std::span<const ModeReport> baseline, const std::string& label) {
  std::vector<Complex> tracked;
  for (const ModeReport& b : baseline) tracked.push_back(b.eigenvalue);
  std::vector<LoopParts> scaled(loops.begin(), loops.end());

  // Follow each target from its open-loop position while all gains ramp up
  // together; a step with two nearby candidates is subdivided before giving up.
  auto eigs_at = [&](double s) {
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i].gain = s * loops[i].gain;
    std::vector<Complex> up;
    for (const Complex& l : eigen(closed_loop_matrix(plant, scaled))) {
      if (l.imag() > 0.0) up.push_back(l);
    }
    return up;
  };
  auto match = [&](const std::vector<Complex>& up, const std::vector<Complex>& from, std::vector<Complex>& to) {
    to.clear();
    std::vector<bool> used(up.size(), false);
    for (const Complex& prev : from) {
      std::size_t best = up.size();
      std::size_t second = up.size();
      for (std::size_t i = 0; i < up.size(); ++i) {
        if (used[i]) continue;
        if (best == up.size() || std::abs(up[i] - prev) < std::abs(up[best] - prev)) {
          second = best;
          best = i;
        } else if (second == up.size() || std::abs(up[i] - prev) < std::abs(up[second] - prev)) {
          second = i;
        }
      }
      if (best == up.size()) return std::string("no oscillatory eigenvalue left to match");
      if (second != up.size() && std::abs(up[second] - prev) <= kAmbiguityFraction * std::abs(prev) &&
          std::abs(up[best] - prev) >= 0.5 * std::abs(up[second] - prev)) {
        std::ostringstream os;
        os << "mode-matching ambiguity near " << natural_hz(prev) << " Hz: candidates " << up[best] << " and "
           << up[second];
        return os.str();
      }
      used[best] = true;
      to.push_back(up[best]);
    }
    return std::string();
  };

  constexpr int kSteps = 32;
  constexpr int kMaxDepth = 8;
  std::vector<Complex> next;
  std::vector<Complex> last_up;
  double s = 0.0;
  double h = 1.0 / kSteps;
  int depth = 0;
  bool has_gain = false;
  for (const auto& l : loops) has_gain = has_gain || l.gain != 0.0;
  if (!has_gain) {
    last_up = eigs_at(0.0);
    const std::string err = match(last_up, tracked, next);
    if (!err.empty()) throw Error("analysis", err);
    tracked = next;
  }
  while (has_gain && s < 1.0) {
    const double target = std::min(1.0, s + h);
    auto up = eigs_at(target);
    const std::string err = match(up, tracked, next);
    if (!err.empty()) {
      if (depth >= kMaxDepth) throw Error("analysis", err);
      h *= 0.5;
      ++depth;
      continue;
    }
    tracked = next;
    last_up = std::move(up);
    s = target;
    if (depth > 0 && h < 1.0 / kSteps) {
      h *= 2.0;
      --depth;
    }
  }

  EigenCase out;
  out.label = label;
  for (const auto& loop : loops) out.gains.push_back(loop.gain);
  for (const Complex& l : tracked) out.modes.push_back(mode_report(l));
  const auto eigs = eigen(closed_loop_matrix(plant, loops));
  std::vector<ModeReport> rest;
  for (const Complex& l : eigs) {
    if (l.imag() < 0.0) continue;
    if (std::find(tracked.begin(), tracked.end(), l) != tracked.end()) continue;
    rest.push_back(mode_report(l));
  }
  std::sort(rest.begin(), rest.end(), [](const ModeReport& a, const ModeReport& b) {
    return natural_hz(a.eigenvalue) < natural_hz(b.eigenvalue);
  });
  out.modes.insert(out.modes.end(), rest.begin(), rest.end());
  return out;
}

EigenStudy delay_sweep(const StateSpace& plant, std::span<const LoopParts> loops,
                       std::span<const ModeReport> baseline, std::span<const double> delays_s,
                       double design_delay_s, int pade_order) {
  EigenStudy study;
  study.baseline.assign(baseline.begin(), baseline.end());
  for (double theta : delays_s) {
    std::vector<LoopParts> swept(loops.begin(), loops.end());
    for (auto& l : swept) l.delay = pade_approx(theta, pade_order);
    char label[48];
    std::snprintf(label, sizeof label, "theta=%.3g", theta);
    study.cases.push_back(closed_loop_eigs(plant, swept, baseline, label));
    study.cases.back().delay_s = theta;
    if (std::abs(theta - design_delay_s) < 1e-12) {
      study.design_case = static_cast<int>(study.cases.size()) - 1;
    }
  }
  return study;
}

std::vector<BodeRow> bode_table(const TransferFunction& tf, Band band, std::size_t n_points) {
  if (n_points < 2) throw Error("analysis", "bode table needs at least two points");
  if (!(band.low_hz > 0.0 && band.low_hz < band.high_hz)) throw Error("analysis", "invalid band");
  const auto freqs = logspace(band.low_hz, band.high_hz, n_points);
  const auto resp = freq_response(tf, freqs);
  auto phase = phase_table_deg(resp);
  // Put the table on the branch continued from DC.
  if (!tf.is_zero()) {
    const double anchor = continuous_phase_deg(tf, 2.0 * kPi * freqs.front());
    const double shift = 360.0 * std::round((anchor - phase.front()) / 360.0);
    for (double& p : phase) p += shift;
  }
  std::vector<BodeRow> rows;
  rows.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    rows.push_back({freqs[i], 20.0 * std::log10(std::abs(resp[i].value)), phase[i]});
  }
  return rows;
}

void write_bode_csv(std::ostream& os, std::span<const BodeRow> rows) {
  os << "freq_hz,mag_db,phase_deg\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", r.freq_hz, r.mag_db, r.phase_deg);
    os << buf;
  }
}

}  // namespace podlab
