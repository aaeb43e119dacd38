#include "podlab/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace podlab {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object and rejects any it did not ask for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw Error("config", "section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error("config", name_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return name_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw Error("config", "unknown key '" + name_ + "." + item.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

Band read_band(const std::vector<double>& v, const std::string& where) {
  if (v.size() != 2 || !(v[0] > 0.0 && v[0] < v[1])) throw Error("config", where + " must be [low, high] with 0 < low < high");
  return {v[0], v[1]};
}

DelayDistribution read_histogram_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("config", "histogram file '" + p.string() + "' does not exist");
  json j;
  try {
    in >> j;
    return DelayDistribution::histogram(j.at("edges_s").get<std::vector<double>>(),
                                        j.at("probabilities").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw Error("config", "histogram file '" + p.string() + "': " + e.what());
  }
}

DelayDistribution read_delay(const json& j, const std::filesystem::path& base) {
  Section s(j, "channel.delay");
  std::string kind = "empirical-histogram";
  s.get("kind", kind);
  DelayDistribution d = DelayDistribution::lab_default();
  switch (parse_delay_kind(kind)) {
    case DelayKind::EmpiricalHistogram: {
      std::string file;
      s.get("file", file);
      if (!file.empty()) {
        std::filesystem::path p(file);
        if (p.is_relative()) p = base / p;
        d = read_histogram_file(p);
      }
      break;
    }
    case DelayKind::Uniform: {
      double lo = 0.0;
      double hi = 0.6;
      s.get("low_s", lo);
      s.get("high_s", hi);
      d = DelayDistribution::uniform(lo, hi);
      break;
    }
    case DelayKind::TruncatedNormal: {
      double mu = 0.3;
      double sigma = 0.1;
      double lo = 0.0;
      double hi = 1.5;
      s.get("mu_s", mu);
      s.get("sigma_s", sigma);
      s.get("low_s", lo);
      s.get("high_s", hi);
      d = DelayDistribution::truncated_normal(mu, sigma, lo, hi);
      break;
    }
    case DelayKind::PointMass: {
      double v = 0.3;
      s.get("value_s", v);
      d = DelayDistribution::point_mass(v);
      break;
    }
  }
  s.finish();
  return d;
}

EmissionMode parse_emission(const std::string& s) {
  if (s == "jittered-periodic") return EmissionMode::JitteredPeriodic;
  if (s == "poisson") return EmissionMode::Poisson;
  throw Error("config", "unknown emission mode '" + s + "'");
}

std::string emission_name(EmissionMode m) { return m == EmissionMode::Poisson ? "poisson" : "jittered-periodic"; }

json complex_json(Complex c) { return json::array({c.real(), c.imag()}); }

json mode_json(const ModeReport& m) {
  return {{"eigenvalue", complex_json(m.eigenvalue)}, {"freq_hz", m.freq_hz}, {"damping_ratio", m.damping_ratio}};
}

json modes_json(std::span<const ModeReport> ms) {
  json a = json::array();
  for (const auto& m : ms) a.push_back(mode_json(m));
  return a;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

json tf_json(const TransferFunction& tf) { return {{"num", tf.num()}, {"den", tf.den()}}; }

json budget_json(const PhaseBudget& b) {
  return {{"omega_rad_s", b.omega_rad_s}, {"freq_hz", b.omega_rad_s / (2.0 * kPi)}, {"phi_P_deg", b.phi_P_deg},
          {"phi_D_deg", b.phi_D_deg},     {"phi_W_deg", b.phi_W_deg},                {"phi_C_deg", b.phi_C_deg},
          {"phi_G_deg", b.phi_G_deg}};
}

json loop_json(const DesignResult& r, const GainSelection& g) {
  json starts = json::array();
  for (const auto& s : r.starts) {
    starts.push_back({{"T0_s", s.T0},
                      {"T_s", s.T},
                      {"residual_norm", s.residual_norm},
                      {"iterations", s.iterations},
                      {"converged", s.converged},
                      {"gain_spread_db", s.gain_spread_db}});
  }
  json cands = json::array();
  for (const auto& c : g.candidates) {
    cands.push_back({{"gain", c.gain},
                     {"stable", c.stable},
                     {"margin_ok", c.margin_ok},
                     {"ambiguous", c.ambiguous},
                     {"min_damping", c.min_damping}});
  }
  const auto& d = r.design;
  return {{"loop", to_string(d.loop)},
          {"T1_s", d.T1_s},
          {"T2_s", d.T2_s},
          {"T3_s", d.T3_s},
          {"T4_s", d.T4_s},
          {"gain", d.gain},
          {"washout_Tw_s", d.washout_Tw_s},
          {"limit_pu", d.limit_pu},
          {"phase_budgets", json::array({budget_json(r.budgets[0]), budget_json(r.budgets[1])})},
          {"residual_inf_norm", r.residual_inf_norm},
          {"converged", r.converged},
          {"selected_start", r.selected_start},
          {"starts", starts},
          {"warnings", r.warnings},
          {"gain_selection",
           {{"min_damping", g.min_damping}, {"baseline_min_damping", g.baseline_min_damping}, {"candidates", cands}}}};
}

}  // namespace

double ProjectConfig::design_delay_s() const { return design.delay_s ? *design.delay_s : expected_delay(channel.delay); }

void ProjectConfig::set_seed(std::uint64_t s) {
  seed = s;
  channel.seed = s;
  simulation.sim.channel.seed = s;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ProjectConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  ProjectConfig cfg;
  Section top(doc, "config");
  if (!doc.contains("schema_version")) throw Error("config", "missing schema_version");
  top.get("schema_version", cfg.schema_version);
  if (cfg.schema_version != kSchemaVersion) {
    throw Error("config", "unsupported schema_version " + std::to_string(cfg.schema_version));
  }
  top.get("seed", cfg.seed);

  if (const json* j = top.sub("plant")) {
    Section s(*j, "plant");
    s.get("mode_freq_hz", cfg.plant.mode_freq_hz);
    s.get("damping_ratio", cfg.plant.damping_ratio);
    s.get("residue_phase_p_deg", cfg.plant.residue_phase_p_deg);
    s.get("residue_phase_q_deg", cfg.plant.residue_phase_q_deg);
    s.get("modal_gain", cfg.plant.modal_gain);
    s.get("residual_corner_hz", cfg.plant.residual_corner_hz);
    s.finish();
  }

  if (const json* j = top.sub("channel")) {
    Section s(*j, "channel");
    if (const json* d = s.sub("delay")) cfg.channel.delay = read_delay(*d, base_dir);
    s.get("rate_hz", cfg.channel.rate_hz);
    std::string emission = emission_name(cfg.channel.emission);
    s.get("emission", emission);
    cfg.channel.emission = parse_emission(emission);
    s.get("jitter_fraction", cfg.channel.jitter_fraction);
    s.get("quantization_step", cfg.channel.quantization_step);
    s.get("campaign_messages", cfg.campaign_messages);
    s.finish();
  }
  cfg.channel.validate();

  if (const json* j = top.sub("identification")) {
    Section s(*j, "identification");
    auto& id = cfg.identification;
    s.get("register_bits", id.prbs.register_bits);
    s.get("chip_period_s", id.prbs.chip_period_s);
    s.get("amplitude_pu", id.prbs.amplitude_pu);
    s.get("duration_s", id.prbs.duration_s);
    s.get("sample_rate_hz", id.sample_rate_hz);
    std::vector<double> band{id.band.low_hz, id.band.high_hz};
    s.get("band_hz", band);
    id.band = read_band(band, s.path("band_hz"));
    s.get("order", id.fit.order);
    s.get("segment_length", id.segment_length);
    s.finish();
    id.prbs.validate();
  }

  if (const json* j = top.sub("design")) {
    Section s(*j, "design");
    auto& d = cfg.design;
    s.get("washout_Tw_s", d.washout_Tw_s);
    if (const json* v = s.sub("delay_s")) {
      if (!v->is_null()) d.delay_s = v->get<double>();
    }
    s.get("surrogate_max_phase_err_deg", d.surrogate_max_phase_err_deg);
    s.get("pade_max_order", d.pade_max_order);
    s.get("feedback_sign", d.feedback_sign);
    s.get("gain_points", d.gain_points);
    s.get("gain_decades", d.gain_decades);
    s.get("sweep_delays_s", d.sweep_delays_s);
    if (const json* l = s.sub("limits")) {
      Section ls(*l, "design.limits");
      ls.get("k", d.limits.k);
      ls.get("p_R", d.limits.p_R);
      ls.get("q_R", d.limits.q_R);
      ls.get("S_n", d.limits.S_n);
      ls.finish();
    }
    s.finish();
    if (d.feedback_sign != 1.0 && d.feedback_sign != -1.0) throw Error("config", "design.feedback_sign must be +1 or -1");
  }

  if (const json* j = top.sub("simulation")) {
    Section s(*j, "simulation");
    auto& sim = cfg.simulation;
    s.get("dt_s", sim.sim.dt_s);
    s.get("duration_s", sim.sim.duration_s);
    std::vector<double> window{sim.sim.window_start_s, sim.sim.window_end_s};
    s.get("window_s", window);
    if (window.size() != 2) throw Error("config", "simulation.window_s must be [start, end]");
    sim.sim.window_start_s = window[0];
    sim.sim.window_end_s = window[1];
    s.get("runs", sim.runs);
    s.get("trace_stride", sim.trace_stride);
    if (const json* sc = s.sub("scenario")) {
      Section ss(*sc, "simulation.scenario");
      std::string kind = to_string(sim.sim.scenario.kind);
      std::string target = to_string(sim.sim.scenario.target);
      ss.get("kind", kind);
      ss.get("target", target);
      ss.get("magnitude", sim.sim.scenario.magnitude);
      ss.get("start_s", sim.sim.scenario.start_s);
      ss.get("duration_s", sim.sim.scenario.duration_s);
      ss.finish();
      sim.sim.scenario.kind = parse_disturbance_kind(kind);
      sim.sim.scenario.target = parse_disturbance_target(target);
    }
    if (const json* us = s.sub("units")) {
      if (!us->is_array()) throw Error("config", "simulation.units must be an array");
      sim.sim.units.clear();
      for (std::size_t i = 0; i < us->size(); ++i) {
        Section u((*us)[i], "simulation.units[" + std::to_string(i) + "]");
        UnitSpec spec;
        u.get("name", spec.name);
        u.get("p_weight", spec.p_weight);
        u.get("q_weight", spec.q_weight);
        u.finish();
        sim.sim.units.push_back(spec);
      }
    }
    s.finish();
  }
  cfg.simulation.sim.channel = cfg.channel;
  cfg.simulation.sim.feedback_sign = cfg.design.feedback_sign;
  cfg.simulation.sim.validate();
  top.finish();

  cfg.hash = fnv1a_hex(doc.dump());
  cfg.set_seed(cfg.seed);
  return cfg;
}

ProjectConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config", "cannot open config file '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error("config", "'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

json default_config_json() {
  const ProjectConfig d;
  const auto& sim = d.simulation.sim;
  json units = json::array();
  for (const auto& u : sim.units) units.push_back({{"name", u.name}, {"p_weight", u.p_weight}, {"q_weight", u.q_weight}});
  return {
      {"schema_version", kSchemaVersion},
      {"seed", d.seed},
      {"plant",
       {{"mode_freq_hz", d.plant.mode_freq_hz},
        {"damping_ratio", d.plant.damping_ratio},
        {"residue_phase_p_deg", d.plant.residue_phase_p_deg},
        {"residue_phase_q_deg", d.plant.residue_phase_q_deg},
        {"modal_gain", d.plant.modal_gain},
        {"residual_corner_hz", d.plant.residual_corner_hz}}},
      {"channel",
       {{"delay", {{"kind", "empirical-histogram"}}},
        {"rate_hz", d.channel.rate_hz},
        {"emission", emission_name(d.channel.emission)},
        {"jitter_fraction", d.channel.jitter_fraction},
        {"quantization_step", d.channel.quantization_step},
        {"campaign_messages", d.campaign_messages}}},
      {"identification",
       {{"register_bits", d.identification.prbs.register_bits},
        {"chip_period_s", d.identification.prbs.chip_period_s},
        {"amplitude_pu", d.identification.prbs.amplitude_pu},
        {"duration_s", d.identification.prbs.duration_s},
        {"sample_rate_hz", d.identification.sample_rate_hz},
        {"band_hz", {d.identification.band.low_hz, d.identification.band.high_hz}},
        {"order", d.identification.fit.order},
        {"segment_length", d.identification.segment_length}}},
      {"design",
       {{"washout_Tw_s", d.design.washout_Tw_s},
        {"delay_s", nullptr},
        {"surrogate_max_phase_err_deg", d.design.surrogate_max_phase_err_deg},
        {"pade_max_order", d.design.pade_max_order},
        {"feedback_sign", d.design.feedback_sign},
        {"gain_points", d.design.gain_points},
        {"gain_decades", d.design.gain_decades},
        {"sweep_delays_s", d.design.sweep_delays_s},
        {"limits", {{"k", d.design.limits.k}, {"p_R", d.design.limits.p_R}, {"q_R", d.design.limits.q_R}, {"S_n", d.design.limits.S_n}}}}},
      {"simulation",
       {{"dt_s", sim.dt_s},
        {"duration_s", sim.duration_s},
        {"window_s", {sim.window_start_s, sim.window_end_s}},
        {"runs", d.simulation.runs},
        {"trace_stride", d.simulation.trace_stride},
        {"scenario",
         {{"kind", to_string(sim.scenario.kind)},
          {"target", to_string(sim.scenario.target)},
          {"magnitude", sim.scenario.magnitude},
          {"start_s", sim.scenario.start_s},
          {"duration_s", sim.scenario.duration_s}}},
        {"units", units}}}};
}

ProjectConfig default_config() { return parse_config(default_config_json()); }

json provenance(const ProjectConfig& cfg) { return {{"config_hash", cfg.hash}, {"seed", cfg.seed}}; }

std::string provenance_comment(const ProjectConfig& cfg) {
  return "# config_hash=" + cfg.hash + ",seed=" + std::to_string(cfg.seed);
}

ExperimentRecord run_experiment(const ProjectConfig& cfg, const StateSpace& path) {
  return run_prbs_experiment(path, cfg.identification.prbs, cfg.identification.sample_rate_hz);
}

Identification identify_record(const ProjectConfig& cfg, const ExperimentRecord& rec) {
  const auto& id = cfg.identification;
  return identify(rec, id.band, id.fit, id.segment_length);
}

IdentifiedPair identify_pair(const ProjectConfig& cfg, const ExperimentRecord& p, const ExperimentRecord& q) {
  IdentifiedPair out;
  out.p = identify_record(cfg, p);
  out.q = identify_record(cfg, q);
  out.modes_p = find_modes(out.p.plant);
  out.modes_q = find_modes(out.q.plant);
  return out;
}

std::vector<LoopParts> DesignBundle::loops() const {
  std::vector<LoopParts> out;
  const DesignResult* rs[2] = {&p, &q};
  for (int i = 0; i < 2; ++i) {
    LoopParts l;
    l.washout = washout(rs[i]->design.washout_Tw_s);
    l.compensator = leadlag_tf(rs[i]->design);
    l.delay = surrogate.pade;
    l.gain = rs[i]->design.gain;
    l.feedback_sign = feedback_sign;
    l.plant_input = i;
    out.push_back(l);
  }
  return out;
}

DesignBundle run_design(const ProjectConfig& cfg) {
  const PlantPair plant = build_reference_plant(cfg.plant);
  return run_design(cfg, identify_pair(cfg, run_experiment(cfg, plant.p_path), run_experiment(cfg, plant.q_path)));
}

DesignBundle run_design(const ProjectConfig& cfg, const IdentifiedPair& ident) {
  DesignBundle b;
  b.plant = build_reference_plant(cfg.plant);
  b.ident = ident;
  b.feedback_sign = cfg.design.feedback_sign;
  const Band band = cfg.identification.band;
  b.surrogate = select_surrogate(cfg.design_delay_s(), band, cfg.design.surrogate_max_phase_err_deg,
                                 cfg.design.pade_max_order);
  DesignOptions opts;
  opts.washout_Tw_s = cfg.design.washout_Tw_s;
  opts.channel_rate_hz = cfg.channel.rate_hz;
  opts.band = band;
  opts.loop = Loop::Active;
  b.p = design_compensator(ident.p.plant.tf, b.surrogate, ident.modes_p, opts);
  opts.loop = Loop::Reactive;
  b.q = design_compensator(ident.q.plant.tf, b.surrogate, ident.modes_q, opts);

  b.limits = power_limits(cfg.design.limits);
  b.p.design.limit_pu = b.limits.p_l;
  b.q.design.limit_pu = b.limits.q_l;

  // Gains are tuned on the plant itself: P first, then Q with P closed.
  const auto& baseline = b.plant.true_modes;
  auto loops = b.loops();
  const auto grid_for = [&](std::size_t i, const TransferFunction& path_tf, std::pair<double, double> modes) {
    LoopParts unity = loops[i];
    unity.gain = 1.0;
    return default_gain_grid(open_loop(unity, path_tf), modes, cfg.design.gain_points, cfg.design.gain_decades);
  };
  loops[0].gain = 0.0;
  loops[1].gain = 0.0;
  const auto grid_p = grid_for(0, ident.p.plant.tf, ident.modes_p);
  b.gain_p = select_gain(b.plant.combined, loops, 0, grid_p, baseline);
  loops[0].gain = b.gain_p.gain;
  const auto grid_q = grid_for(1, ident.q.plant.tf, ident.modes_q);
  b.gain_q = select_gain(b.plant.combined, loops, 1, grid_q, baseline);
  b.p.design.gain = b.gain_p.gain;
  b.q.design.gain = b.gain_q.gain;
  return b;
}

EigenStudy run_eig_study(const ProjectConfig& cfg, const DesignBundle& d) {
  const auto loops = d.loops();
  return delay_sweep(d.plant.combined, loops, d.plant.true_modes, cfg.design.sweep_delays_s, d.surrogate.theta_s,
                     d.surrogate.order);
}

SimTrace run_sim(const ProjectConfig& cfg, const DesignBundle& d, bool pod_on) {
  return run_closed_loop(d.plant, d.p.design, d.q.design, cfg.simulation.sim, cfg.seed, pod_on);
}

EnsembleStats run_ensemble(const ProjectConfig& cfg, const DesignBundle& d) {
  return ensemble(cfg.simulation.runs, cfg.seed, d.plant, d.p.design, d.q.design, cfg.simulation.sim);
}

json plant_json(const PlantPair& plant) {
  const auto& ss = plant.combined;
  return {{"inputs", {"p_pu", "q_pu"}},
          {"output", "omega_g_pu"},
          {"A", matrix_json(ss.A)},
          {"B", matrix_json(ss.B)},
          {"C", matrix_json(ss.C)},
          {"D", matrix_json(ss.D)},
          {"modes", modes_json(plant.true_modes)},
          {"tf_p", tf_json(to_transfer_function(ss, 0, 0))},
          {"tf_q", tf_json(to_transfer_function(ss, 1, 0))}};
}

json throughput_json(const ThroughputHistogram& h) {
  json prob = json::object();
  for (const auto& [count, p] : h.probability) prob[std::to_string(count)] = p;
  return {{"window_s", h.window_s},
          {"windows", h.counts.size()},
          {"mode", h.mode},
          {"mean", h.mean},
          {"probability", prob},
          {"mass_on_3_4", h.mass_on({3, 4})}};
}

json histogram_json(const DelayDistribution& d) {
  return {{"kind", to_string(d.kind())},
          {"edges_s", d.edges()},
          {"probabilities", d.probabilities()},
          {"mean_s", d.mean_s()},
          {"tau_min_s", d.tau_min()},
          {"tau_max_s", d.tau_max()}};
}

json surrogate_json(const DelaySurrogate& s) {
  return {{"theta_s", s.theta_s},
          {"order", s.order},
          {"band_hz", {s.band.low_hz, s.band.high_hz}},
          {"max_phase_err_deg", s.max_phase_err_deg},
          {"num", s.pade.num()},
          {"den", s.pade.den()}};
}

json identified_json(const IdentifiedPlant& p) {
  return {{"num", p.tf.num()},
          {"den", p.tf.den()},
          {"band_hz", {p.fit_band.low_hz, p.fit_band.high_hz}},
          {"frf_fit_mag_err_db", p.frf_fit_mag_err_db},
          {"frf_fit_phase_err_deg", p.frf_fit_phase_err_deg},
          {"iterations", p.iterations},
          {"modes", modes_json(p.modes)},
          {"warnings", p.warnings}};
}

json design_json(const DesignBundle& d) {
  return {{"surrogate", surrogate_json(d.surrogate)},
          {"feedback_sign", d.feedback_sign},
          {"limits", {{"p_l", d.limits.p_l}, {"q_l", d.limits.q_l}}},
          {"modes_hz_p", {d.ident.modes_p.first / (2.0 * kPi), d.ident.modes_p.second / (2.0 * kPi)}},
          {"modes_hz_q", {d.ident.modes_q.first / (2.0 * kPi), d.ident.modes_q.second / (2.0 * kPi)}},
          {"active", loop_json(d.p, d.gain_p)},
          {"reactive", loop_json(d.q, d.gain_q)}};
}

json eig_study_json(const EigenStudy& s) {
  json cases = json::array();
  for (const auto& c : s.cases) {
    cases.push_back({{"label", c.label}, {"delay_s", c.delay_s}, {"gains", c.gains}, {"modes", modes_json(c.modes)}});
  }
  return {{"baseline", modes_json(s.baseline)}, {"cases", cases}, {"design_case", s.design_case}};
}

json ensemble_json(const EnsembleStats& s) {
  std::vector<double> ratios;
  for (double m : s.metrics) ratios.push_back(s.baseline > 0.0 ? m / s.baseline : 0.0);
  return {{"n_runs", s.n_runs},    {"base_seed", s.base_seed},     {"baseline", s.baseline},
          {"metrics", s.metrics},  {"ratios", ratios},             {"median_ratio", s.median_ratio},
          {"max_ratio", s.max_ratio}};
}

void write_frf_csv(std::ostream& os, std::span<const FrequencyResponsePoint> points) {
  const auto phase = phase_table_deg(points);
  os << "freq_hz,mag_db,phase_deg\n";
  char buf[96];
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", points[i].freq_hz, 20.0 * std::log10(std::abs(points[i].value)),
                  phase[i]);
    os << buf;
  }
}

}  // namespace podlab
