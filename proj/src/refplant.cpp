#include "podlab/refplant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace podlab {

namespace {

constexpr double kBandLowHz = 0.1;
constexpr double kBandHighHz = 2.0;
constexpr double kMaxDamping = 0.08;

void check_config(const PlantConfig& cfg) {
  const auto n = cfg.mode_freq_hz.size();
  if (n != 2 || cfg.damping_ratio.size() != 2 || cfg.residue_phase_p_deg.size() != 2 ||
      cfg.residue_phase_q_deg.size() != 2) {
    throw Error("refplant", "exactly two modes are required (frequency, damping and residue phases)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double f = cfg.mode_freq_hz[i];
    if (!(f > kBandLowHz && f < kBandHighHz)) {
      std::ostringstream os;
      os << "mode frequency " << f << " Hz outside the (0.1, 2) Hz band";
      throw Error("refplant", os.str());
    }
    const double z = cfg.damping_ratio[i];
    if (!(z > 0.0 && z < kMaxDamping)) {
      std::ostringstream os;
      os << "damping ratio " << z << " outside (0, 0.08)";
      throw Error("refplant", os.str());
    }
  }
  const double lo = std::min(cfg.mode_freq_hz[0], cfg.mode_freq_hz[1]);
  const double hi = std::max(cfg.mode_freq_hz[0], cfg.mode_freq_hz[1]);
  if ((hi - lo) < 0.05 * lo) {
    std::ostringstream os;
    os << "overlapping mode frequencies " << lo << " Hz and " << hi << " Hz (within 5%)";
    throw Error("refplant", os.str());
  }
  if (!(cfg.modal_gain > 0.0)) throw Error("refplant", "modal gain must be positive");
  if (!(2.0 * kPi * cfg.residual_corner_hz > 1.0)) {
    throw Error("refplant", "residual corner must place its pole left of Re = -1");
  }
}

}  // namespace

void DisturbanceScenario::validate() const {
  if (magnitude == 0.0) throw Error("refplant", "disturbance magnitude must be nonzero");
  if (!(start_s >= 0.0)) throw Error("refplant", "disturbance start must be non-negative");
  if (kind == DisturbanceKind::InputStepPulse && !(duration_s > 0.0)) {
    throw Error("refplant", "input pulse duration must be positive");
  }
}

double Excitation::input_at(int index, double t) const noexcept {
  if (index != pulse_input) return 0.0;
  return (t >= pulse_start_s && t < pulse_end_s) ? pulse_magnitude : 0.0;
}

PlantPair build_reference_plant(const PlantConfig& cfg) {
  check_config(cfg);

  std::array<std::size_t, 2> order{0, 1};
  if (cfg.mode_freq_hz[0] > cfg.mode_freq_hz[1]) order = {1, 0};

  // States: [mode 1 (2), mode 2 (2), output lag (1)]. Each mode uses the
  // observable canonical form so that A and C are shared by both inputs and
  // the residue lives entirely in B.
  constexpr Eigen::Index n = 5;
  PlantPair plant;
  StateSpace& ss = plant.combined;
  ss.A = Matrix::Zero(n, n);
  ss.B = Matrix::Zero(n, 2);
  ss.C = Matrix::Zero(1, n);
  ss.D = Matrix::Zero(1, 2);
  const double wr = 2.0 * kPi * cfg.residual_corner_hz;

  for (std::size_t k = 0; k < 2; ++k) {
    const std::size_t i = order[k];
    const double zeta = cfg.damping_ratio[i];
    const double wd = 2.0 * kPi * cfg.mode_freq_hz[i];
    const double wn = wd / std::sqrt(1.0 - zeta * zeta);
    const Complex lambda(-zeta * wn, wd);
    const auto r = static_cast<Eigen::Index>(2 * k);
    ss.A(r, r + 1) = -wn * wn;
    ss.A(r + 1, r) = 1.0;
    ss.A(r + 1, r + 1) = -2.0 * zeta * wn;
    ss.A(4, r + 1) = wr;

    const std::array<double, 2> phases{cfg.residue_phase_p_deg[i], cfg.residue_phase_q_deg[i]};
    for (Eigen::Index in = 0; in < 2; ++in) {
      const Complex R = std::polar(zeta * wn * cfg.modal_gain, phases[static_cast<std::size_t>(in)] * kDegToRad);
      // R/(s - l) + conj(R)/(s - conj(l)) = (2 Re R s - 2 Re(R conj l)) / den
      ss.B(r, in) = -2.0 * (R * std::conj(lambda)).real();
      ss.B(r + 1, in) = 2.0 * R.real();
    }
    plant.true_modes.push_back(mode_report(lambda));
  }
  ss.A(4, 4) = -wr;
  ss.C(0, 4) = 1.0;

  plant.p_path = StateSpace{ss.A, ss.B.col(0), ss.C, ss.D.col(0)};
  plant.q_path = StateSpace{ss.A, ss.B.col(1), ss.C, ss.D.col(1)};
  return plant;
}

Excitation apply_disturbance(const PlantPair& plant, const DisturbanceScenario& scenario) {
  scenario.validate();
  Excitation ex;
  const auto n = plant.combined.order();
  ex.state_kick = Vector::Zero(n);
  ex.kick_time_s = scenario.start_s;
  const int input = scenario.target == DisturbanceTarget::PInput   ? 0
                    : scenario.target == DisturbanceTarget::QInput ? 1
                                                                   : -1;
  switch (scenario.kind) {
    case DisturbanceKind::StateImpulse:
      if (input >= 0) {
        // Unit-area impulse through the chosen input: x jumps by B * magnitude.
        ex.state_kick = scenario.magnitude * plant.combined.B.col(input);
      } else {
        // Both modal output states displaced; n - 1 is the output lag.
        if (n < 4) throw Error("refplant", "plant has no modal states to disturb");
        ex.state_kick(1) = scenario.magnitude;
        ex.state_kick(3) = scenario.magnitude;
      }
      break;
    case DisturbanceKind::InputStepPulse:
      if (input < 0) throw Error("refplant", "input pulse needs an input target (p-input or q-input)");
      if (input >= plant.combined.inputs()) throw Error("refplant", "target input absent from plant");
      ex.pulse_input = input;
      ex.pulse_magnitude = scenario.magnitude;
      ex.pulse_start_s = scenario.start_s;
      ex.pulse_end_s = scenario.start_s + scenario.duration_s;
      break;
  }
  return ex;
}

DisturbanceKind parse_disturbance_kind(const std::string& s) {
  if (s == "state-impulse") return DisturbanceKind::StateImpulse;
  if (s == "input-step-pulse") return DisturbanceKind::InputStepPulse;
  throw Error("refplant", "unknown disturbance kind '" + s + "'");
}

DisturbanceTarget parse_disturbance_target(const std::string& s) {
  if (s == "p-input") return DisturbanceTarget::PInput;
  if (s == "q-input") return DisturbanceTarget::QInput;
  if (s == "mode-states") return DisturbanceTarget::ModeStates;
  throw Error("refplant", "unknown disturbance target '" + s + "'");
}

std::string to_string(DisturbanceKind k) {
  return k == DisturbanceKind::StateImpulse ? "state-impulse" : "input-step-pulse";
}

std::string to_string(DisturbanceTarget t) {
  switch (t) {
    case DisturbanceTarget::PInput: return "p-input";
    case DisturbanceTarget::QInput: return "q-input";
    case DisturbanceTarget::ModeStates: return "mode-states";
  }
  return "mode-states";
}

}  // namespace podlab
