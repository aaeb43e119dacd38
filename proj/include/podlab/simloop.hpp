#pragma once

#include "podlab/channel.hpp"
#include "podlab/poddesign.hpp"
#include "podlab/refplant.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace podlab {

// One CIG unit and its share of each loop's plant-level reference.
struct UnitSpec {
  std::string name;
  double p_weight = 0.0;
  double q_weight = 0.0;
};

// PV1 and PV2 on both loops, battery on P, STATCOM on Q, equal shares.
std::vector<UnitSpec> default_units();

struct SimConfig {
  double dt_s = 1e-3;
  double duration_s = 40.0;
  double window_start_s = 1.0;
  double window_end_s = 40.0;
  double feedback_sign = -1.0;
  DisturbanceScenario scenario;
  std::vector<UnitSpec> units = default_units();
  ChannelConfig channel;

  void validate() const;
};

struct SimTrace {
  std::vector<double> t_s;
  std::vector<double> omega_g_pu;
  std::vector<double> p_sent;
  std::vector<double> p_recv;  // as held by the first unit on the loop
  std::vector<double> q_sent;
  std::vector<double> q_recv;
  bool pod_enabled = false;
  std::uint64_t seed = 0;
};

SimTrace run_closed_loop(const PlantPair& plant, const CompensatorDesign& p_design,
                         const CompensatorDesign& q_design, const SimConfig& cfg, std::uint64_t seed,
                         bool pod_on);

// Trapezoidal integral of omega_g^2 over [t_start, t_end].
double damping_metric(const SimTrace& trace, std::pair<double, double> window);

struct EnsembleStats {
  std::size_t n_runs = 0;
  std::uint64_t base_seed = 0;
  std::vector<double> metrics;
  double baseline = 0.0;
  double median_ratio = 0.0;
  double max_ratio = 0.0;
};

// Run i uses seed base_seed + i; the POD-off baseline uses base_seed.
EnsembleStats ensemble(std::size_t n_runs, std::uint64_t base_seed, const PlantPair& plant,
                       const CompensatorDesign& p_design, const CompensatorDesign& q_design,
                       const SimConfig& cfg);

void write_sim_trace_csv(std::ostream& os, const SimTrace& trace, std::size_t stride = 1);

}  // namespace podlab
