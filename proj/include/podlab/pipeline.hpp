#pragma once

#include "podlab/analysis.hpp"
#include "podlab/channel.hpp"
#include "podlab/delaymodel.hpp"
#include "podlab/poddesign.hpp"
#include "podlab/refplant.hpp"
#include "podlab/simloop.hpp"
#include "podlab/sysid.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace podlab {

struct IdentificationSettings {
  PrbsConfig prbs;
  double sample_rate_hz = 50.0;
  Band band{0.1, 2.0};
  FitOptions fit;
  std::size_t segment_length = 16384;
};

struct DesignSettings {
  double washout_Tw_s = 5.0;
  std::optional<double> delay_s;  // default: mean of the channel delay
  double surrogate_max_phase_err_deg = 10.0;
  int pade_max_order = 8;
  double feedback_sign = -1.0;
  std::size_t gain_points = 40;
  double gain_decades = 4.0;
  LimitsInput limits;
  std::vector<double> sweep_delays_s{0.0, 0.15, 0.3, 0.6};
};

struct SimulationSettings {
  SimConfig sim;  // channel and feedback sign are filled from their own sections
  std::size_t runs = 50;
  std::size_t trace_stride = 1;
};

struct ProjectConfig {
  int schema_version = 1;
  std::uint64_t seed = 1;
  PlantConfig plant;
  ChannelConfig channel;
  std::size_t campaign_messages = 10000;
  IdentificationSettings identification;
  DesignSettings design;
  SimulationSettings simulation;
  std::string hash;  // FNV-1a of the canonical config document

  double design_delay_s() const;
  void set_seed(std::uint64_t s);
};

inline constexpr int kSchemaVersion = 1;

std::string fnv1a_hex(std::string_view bytes);

// Strict: unknown keys and missing referenced files are errors. Relative file
// paths resolve against base_dir.
ProjectConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = ".");
ProjectConfig load_config(const std::filesystem::path& path);
ProjectConfig default_config();
nlohmann::json default_config_json();

// Provenance block embedded in every artifact.
nlohmann::json provenance(const ProjectConfig& cfg);
std::string provenance_comment(const ProjectConfig& cfg);

struct IdentifiedPair {
  Identification p;
  Identification q;
  std::pair<double, double> modes_p;
  std::pair<double, double> modes_q;
};

ExperimentRecord run_experiment(const ProjectConfig& cfg, const StateSpace& path);
Identification identify_record(const ProjectConfig& cfg, const ExperimentRecord& rec);
IdentifiedPair identify_pair(const ProjectConfig& cfg, const ExperimentRecord& p, const ExperimentRecord& q);

struct DesignBundle {
  PlantPair plant;
  IdentifiedPair ident;
  DelaySurrogate surrogate;
  DesignResult p;
  DesignResult q;
  PowerLimits limits{};
  GainSelection gain_p;
  GainSelection gain_q;
  double feedback_sign = -1.0;

  // Both loops around the reference plant with the selected gains.
  std::vector<LoopParts> loops() const;
};

DesignBundle run_design(const ProjectConfig& cfg);
DesignBundle run_design(const ProjectConfig& cfg, const IdentifiedPair& ident);
EigenStudy run_eig_study(const ProjectConfig& cfg, const DesignBundle& d);

SimTrace run_sim(const ProjectConfig& cfg, const DesignBundle& d, bool pod_on);
EnsembleStats run_ensemble(const ProjectConfig& cfg, const DesignBundle& d);

nlohmann::json plant_json(const PlantPair& plant);
nlohmann::json throughput_json(const ThroughputHistogram& h);
nlohmann::json histogram_json(const DelayDistribution& d);
nlohmann::json surrogate_json(const DelaySurrogate& s);
nlohmann::json identified_json(const IdentifiedPlant& p);
nlohmann::json design_json(const DesignBundle& d);
nlohmann::json eig_study_json(const EigenStudy& s);
nlohmann::json ensemble_json(const EnsembleStats& s);

void write_frf_csv(std::ostream& os, std::span<const FrequencyResponsePoint> points);

}  // namespace podlab
