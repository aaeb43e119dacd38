#pragma once

#include "podlab/analysis.hpp"
#include "podlab/delaymodel.hpp"
#include "podlab/lti.hpp"

#include <array>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace podlab {

enum class Loop { Active, Reactive };

std::string to_string(Loop l);

// Phases at one oscillation frequency. phi_P is taken on the branch that puts
// phi_P + phi_D + phi_W in (-180, 180].
struct PhaseBudget {
  double omega_rad_s = 0.0;
  double phi_P_deg = 0.0;
  double phi_D_deg = 0.0;
  double phi_W_deg = 0.0;
  double phi_C_deg = 0.0;
  double phi_G_deg = 0.0;  // phi_C + phi_D + phi_P + phi_W
};

struct CompensatorDesign {
  double T1_s = 1.0;
  double T2_s = 1.0;
  double T3_s = 1.0;
  double T4_s = 1.0;
  double gain = 0.0;
  double washout_Tw_s = 5.0;
  double limit_pu = 0.0;
  Loop loop = Loop::Active;

  std::array<double, 4> time_constants() const { return {T1_s, T2_s, T3_s, T4_s}; }
  void validate() const;
};

struct LimitsInput {
  double k = 0.1;
  double p_R = 0.5;
  double q_R = 0.0;
  double S_n = 1.0;
};

struct PowerLimits {
  double p_l;
  double q_l;
};

inline constexpr double kTimeConstantMin = 0.01;
inline constexpr double kTimeConstantMax = 10.0;

// (1 + sT1)(1 + sT3) / ((1 + sT2)(1 + sT4))
TransferFunction leadlag_tf(double T1, double T2, double T3, double T4);
TransferFunction leadlag_tf(const CompensatorDesign& d);

// sTw / (1 + sTw)
TransferFunction washout(double Tw_s);

// Phase of tf(j omega) in degrees, continued from DC.
double phase_at(const TransferFunction& tf, double omega_rad_s);

// Lead-lag phase from the root factors: atan(wT1) - atan(wT2) + atan(wT3) - atan(wT4).
double leadlag_phase_deg(const std::array<double, 4>& T, double omega_rad_s);

struct ResidualContext {
  std::array<double, 2> omega_rad_s{};
  // Fixed open-loop phase per mode (plant + delay + washout), in (-180, 180].
  std::array<double, 2> fixed_phase_deg{};
};

struct ResidualValue {
  Eigen::Vector2d F;
  bool normalized = true;  // false: cross-mode denominator guard tripped
};

// x holds log(T1..T4); each T is clamped to [0.01, 10] s.
std::array<double, 4> time_constants_from_log(const Vector& x);
ResidualValue residual_F(const Vector& x, const ResidualContext& ctx);

struct DoglegOptions {
  int max_iterations = 200;
  double tolerance = 1e-10;
  double radius_floor = 1e-12;
  double initial_radius = 1.0;
  double relative_step = 1e-6;
};

struct DoglegResult {
  Vector x;
  Vector F;
  double norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> history;  // ||F||_2 after each accepted step, starting at x0
};

using ResidualFunction = std::function<Vector(const Vector&)>;

// Powell dogleg trust-region on a central-difference Jacobian, in
// least-squares mode for non-square systems.
DoglegResult dogleg_solve(const ResidualFunction& F, const Vector& x0, const DoglegOptions& opts = {});

struct StartReport {
  std::array<double, 4> T0{};
  std::array<double, 4> T{};
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  double gain_spread_db = 0.0;  // max - min of |C| over the band
};

struct DesignOptions {
  Loop loop = Loop::Active;
  double washout_Tw_s = 5.0;
  double channel_rate_hz = 3.5;
  Band band{0.1, 2.0};
  DoglegOptions solver;
};

struct DesignResult {
  CompensatorDesign design;
  std::array<PhaseBudget, 2> budgets{};
  double residual_inf_norm = 0.0;
  bool converged = false;
  int selected_start = -1;
  std::vector<StartReport> starts;
  std::vector<std::string> warnings;
};

// Phase budget of a compensator at one frequency.
PhaseBudget phase_budget(const TransferFunction& plant, const TransferFunction& delay,
                         const TransferFunction& washout_tf, const std::array<double, 4>& T,
                         double omega_rad_s);

// Solves for T1..T4 from eight log-spaced starts. Gain and limit are left for
// select_gain and power_limits.
DesignResult design_compensator(const TransferFunction& plant, const DelaySurrogate& surrogate,
                                std::pair<double, double> modes_rad_s, const DesignOptions& opts);

PowerLimits power_limits(const LimitsInput& in);

struct GainCandidate {
  double gain = 0.0;
  bool stable = false;
  bool margin_ok = false;
  bool ambiguous = false;
  double min_damping = 0.0;
};

struct GainSelection {
  double gain = 0.0;
  double min_damping = 0.0;
  double baseline_min_damping = 0.0;
  std::vector<GainCandidate> candidates;
};

// 0 followed by n log-spaced points over `decades` decades centred on the
// reciprocal of the largest open-loop magnitude at the modes.
std::vector<double> default_gain_grid(const TransferFunction& unity_open_loop,
                                      std::pair<double, double> modes_rad_s, std::size_t n = 40,
                                      double decades = 4.0);

// Tunes loops[index].gain over the grid with the other loops held as given.
// A candidate needs every closed-loop eigenvalue in the open left half-plane
// for K and for K scaled up to 2x (6 dB). The feasible K with the largest
// minimum target damping wins; K = 0 is the fallback.
GainSelection select_gain(const StateSpace& plant, std::vector<LoopParts> loops, std::size_t index,
                          std::span<const double> gain_grid, std::span<const ModeReport> baseline);

}  // namespace podlab
