#pragma once

#include "podlab/delaymodel.hpp"
#include "podlab/lti.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace podlab {

// One POD loop closed around a plant input: u = sign * gain * W C D' (y).
struct LoopParts {
  TransferFunction washout;
  TransferFunction compensator;
  TransferFunction delay;
  double gain = 0.0;
  double feedback_sign = -1.0;
  Eigen::Index plant_input = 0;

  // Unity-gain W C D' without the sign.
  TransferFunction shaping() const;
};

// gain * W * C * D' * P, canonical form.
TransferFunction open_loop(const TransferFunction& compensator, const TransferFunction& washout,
                           double gain, const TransferFunction& surrogate,
                           const TransferFunction& plant);
TransferFunction open_loop(const LoopParts& loop, const TransferFunction& plant);

// Closed-loop state matrix of a single-output plant with the given loops,
// assembled block-wise. Plant D must be zero.
Matrix closed_loop_matrix(const StateSpace& plant, std::span<const LoopParts> loops);

// The two least damped underdamped pairs in the band, ascending frequency.
std::vector<ModeReport> baseline_modes(const StateSpace& plant, Band band = {0.1, 2.0});

struct EigenCase {
  std::string label;
  double delay_s = 0.0;
  std::vector<double> gains;
  std::vector<ModeReport> modes;  // two target modes first, then the rest by frequency
};

struct EigenStudy {
  std::vector<ModeReport> baseline;
  std::vector<EigenCase> cases;
  int design_case = -1;
};

// Closes the loops and follows each baseline mode as the loop gains ramp
// from zero, matching to the nearest eigenvalue at every step. Two candidates
// within 5% that no step refinement separates throw.
EigenCase closed_loop_eigs(const StateSpace& plant, std::span<const LoopParts> loops,
                           std::span<const ModeReport> baseline, const std::string& label = "");

// Replaces each loop's delay by a Pade surrogate of every constant delay.
EigenStudy delay_sweep(const StateSpace& plant, std::span<const LoopParts> loops,
                       std::span<const ModeReport> baseline, std::span<const double> delays_s,
                       double design_delay_s, int pade_order);

struct BodeRow {
  double freq_hz;
  double mag_db;
  double phase_deg;
};

std::vector<BodeRow> bode_table(const TransferFunction& tf, Band band, std::size_t n_points);
void write_bode_csv(std::ostream& os, std::span<const BodeRow> rows);

}  // namespace podlab
