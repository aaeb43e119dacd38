#pragma once

#include "podlab/lti.hpp"

#include <array>
#include <string>
#include <vector>

namespace podlab {

// Reduced two-mode surrogate of a multimachine grid seen from a plant's point
// of connection. Two inputs (active and reactive power command, per unit) and
// one output (grid frequency deviation, per unit) share the same modal
// dynamics; they differ only in the modal residues.
struct PlantConfig {
  std::vector<double> mode_freq_hz{0.45, 0.90};  // damped frequencies
  std::vector<double> damping_ratio{0.02, 0.03};
  std::vector<double> residue_phase_p_deg{20.0, 100.0};
  std::vector<double> residue_phase_q_deg{-15.0, 60.0};
  // Resonance peak of each modal term, |omega_g| / |p| at the mode.
  double modal_gain = 0.1;
  // Output-side first-order lag standing in for the well-damped remainder.
  double residual_corner_hz = 2.0;
};

struct PlantPair {
  StateSpace combined;  // inputs {p, q}, output omega_g
  StateSpace p_path;
  StateSpace q_path;
  std::vector<ModeReport> true_modes;  // ascending frequency, upper half-plane
};

enum class DisturbanceKind { StateImpulse, InputStepPulse };
enum class DisturbanceTarget { PInput, QInput, ModeStates };

struct DisturbanceScenario {
  DisturbanceKind kind = DisturbanceKind::StateImpulse;
  double magnitude = 0.002;
  double start_s = 1.0;
  double duration_s = 0.0;  // pulse only
  DisturbanceTarget target = DisturbanceTarget::ModeStates;

  void validate() const;
};

// Initial-state kick and exogenous input for one scenario.
struct Excitation {
  Vector state_kick;  // added to the plant state at kick_time_s
  double kick_time_s = 0.0;
  int pulse_input = -1;  // 0 = p, 1 = q, -1 = none
  double pulse_magnitude = 0.0;
  double pulse_start_s = 0.0;
  double pulse_end_s = 0.0;

  bool has_kick() const noexcept { return state_kick.size() > 0 && state_kick.squaredNorm() > 0; }
  // Exogenous input added to plant input `index` at time t.
  double input_at(int index, double t) const noexcept;
};

PlantPair build_reference_plant(const PlantConfig& cfg);

Excitation apply_disturbance(const PlantPair& plant, const DisturbanceScenario& scenario);

DisturbanceKind parse_disturbance_kind(const std::string& s);
DisturbanceTarget parse_disturbance_target(const std::string& s);
std::string to_string(DisturbanceKind k);
std::string to_string(DisturbanceTarget t);

}  // namespace podlab
