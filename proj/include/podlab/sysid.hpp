#pragma once

#include "podlab/delaymodel.hpp"
#include "podlab/lti.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace podlab {

struct PrbsConfig {
  int register_bits = 11;
  double chip_period_s = 0.1;
  double amplitude_pu = 0.05;
  double duration_s = 1800.0;

  void validate() const;
};

// One period (2^n - 1 chips) of the maximal-length sequence, as +/-1.
std::vector<int> mls_chips(int register_bits);

// PRBS sampled at sample_rate_hz: chips mapped to +/-amplitude, each held for
// chip_period_s, repeated to duration_s.
std::vector<double> gen_prbs(const PrbsConfig& cfg, double sample_rate_hz);

struct FrfEstimate {
  std::vector<FrequencyResponsePoint> points;
  std::vector<double> coherence;  // magnitude-squared, per point
  std::size_t segment_length = 0;
  std::size_t segments = 0;
};

// Welch H1 estimate S_uy / S_uu (Hann window, 50% overlap) restricted to
// the band. segment_length = 0 picks the largest power of two that still
// yields at least eight segments.
FrfEstimate estimate_frf(std::span<const double> u, std::span<const double> y,
                         double sample_rate_hz, Band band, std::size_t segment_length = 0);

struct FitOptions {
  int order = 6;
  int num_degree = -1;  // -1: order - 1 (strictly proper)
  int max_iterations = 20;
  double tolerance = 1e-8;
};

struct IdentifiedPlant {
  TransferFunction tf;
  Band fit_band{0.1, 2.0};
  double frf_fit_mag_err_db = 0.0;
  double frf_fit_phase_err_deg = 0.0;
  std::vector<ModeReport> modes;  // complex pole pairs, ascending frequency
  std::vector<std::string> warnings;
  int iterations = 0;
};

// Sanathanan-Koerner iterated weighted least-squares rational fit.
IdentifiedPlant fit_rational(std::span<const FrequencyResponsePoint> frf, const FitOptions& opts);
IdentifiedPlant fit_rational(std::span<const FrequencyResponsePoint> frf, int order);

// Two most lightly damped underdamped pole pairs inside the band, returned as
// damped frequencies (rad/s) in ascending order.
std::pair<double, double> find_modes(std::span<const Complex> poles, Band band);
std::pair<double, double> find_modes(const IdentifiedPlant& plant);

struct ExperimentRecord {
  double dt = 0.0;
  std::vector<double> u;
  std::vector<double> y;
};

void write_experiment_csv(std::ostream& os, const ExperimentRecord& rec);
ExperimentRecord read_experiment_csv(std::istream& is);

// Drives one plant path with the PRBS from zero initial state.
ExperimentRecord run_prbs_experiment(const StateSpace& path, const PrbsConfig& cfg,
                                     double sample_rate_hz);

struct Identification {
  FrfEstimate frf;  // hold-compensated
  IdentifiedPlant plant;
};

// estimate_frf on a record, removal of the sampled-hold half-sample lag, then
// fit_rational.
Identification identify(const ExperimentRecord& rec, Band band, const FitOptions& opts,
                        std::size_t segment_length = 0);

}  // namespace podlab
