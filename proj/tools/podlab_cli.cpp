#include "podlab/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace podlab;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

class Runner {
 public:
  explicit Runner(const Globals& g) {
    cfg_ = g.config.empty() ? default_config() : load_config(g.config);
    if (g.seed) cfg_.set_seed(*g.seed);
    out_ = g.out;
    if (out_.empty()) {
      const char* env = std::getenv("PODLAB_OUT");
      out_ = env && *env ? env : "out";
    }
    fs::create_directories(out_);
  }

  const ProjectConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }

  void write_json(const std::string& name, json body) const {
    body["provenance"] = provenance(cfg_);
    std::ofstream os(out_ / name);
    os << body.dump(2) << "\n";
    if (!os) throw Error("cli", "cannot write " + (out_ / name).string());
    std::cout << (out_ / name).string() << "\n";
  }

  template <class F>
  void write_csv(const std::string& name, F&& body) const {
    std::ofstream os(out_ / name);
    os << provenance_comment(cfg_) << "\n";
    body(os);
    if (!os) throw Error("cli", "cannot write " + (out_ / name).string());
    std::cout << (out_ / name).string() << "\n";
  }

 private:
  ProjectConfig cfg_;
  fs::path out_;
};

ExperimentRecord read_record(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cli", "missing experiment file " + p.string() + " (run 'sysid prbs' first)");
  return read_experiment_csv(in);
}

void plant_build(const Runner& r) { r.write_json("plant.json", plant_json(build_reference_plant(r.cfg().plant))); }

void channel_measure(const Runner& r) {
  const auto& c = r.cfg();
  const DelayLog log = measure_campaign(c.channel, c.campaign_messages, c.seed);
  r.write_csv("delay_log.csv", [&](std::ostream& os) { write_delay_log_csv(os, log); });
  json body = throughput_json(throughput_stats(log));
  const auto d = log.delays();
  double mean = 0.0;
  for (double x : d) mean += x;
  body["messages"] = d.size();
  body["mean_delay_s"] = mean / static_cast<double>(d.size());
  r.write_json("throughput.json", body);
}

void channel_fit(const Runner& r, const std::string& log_path) {
  const auto& c = r.cfg();
  DelayLog log;
  if (!log_path.empty()) {
    std::ifstream in(log_path);
    if (!in) throw Error("cli", "cannot open delay log " + log_path);
    log = read_delay_log_csv(in);
  } else {
    log = measure_campaign(c.channel, c.campaign_messages, c.seed);
  }
  const auto delays = log.delays();
  const DelayDistribution hist = fit_histogram(delays);
  r.write_json("delay_histogram.json", histogram_json(hist));
  const double theta = c.design.delay_s ? *c.design.delay_s : hist.mean_s();
  r.write_json("surrogate.json", surrogate_json(select_surrogate(theta, c.identification.band,
                                                                 c.design.surrogate_max_phase_err_deg,
                                                                 c.design.pade_max_order)));
}

void sysid_prbs(const Runner& r) {
  const PlantPair plant = build_reference_plant(r.cfg().plant);
  const auto ep = run_experiment(r.cfg(), plant.p_path);
  const auto eq = run_experiment(r.cfg(), plant.q_path);
  r.write_csv("experiment_p.csv", [&](std::ostream& os) { write_experiment_csv(os, ep); });
  r.write_csv("experiment_q.csv", [&](std::ostream& os) { write_experiment_csv(os, eq); });
}

void sysid_fit(const Runner& r, const std::string& in_dir) {
  const fs::path dir = in_dir.empty() ? r.out() : fs::path(in_dir);
  const auto ident = identify_pair(r.cfg(), read_record(dir / "experiment_p.csv"), read_record(dir / "experiment_q.csv"));
  const std::pair<const char*, const Identification*> paths[2] = {{"p", &ident.p}, {"q", &ident.q}};
  for (const auto& [tag, id] : paths) {
    const std::string t(tag);
    r.write_csv("frf_" + t + ".csv", [&](std::ostream& os) { write_frf_csv(os, id->frf.points); });
    json body = identified_json(id->plant);
    body["frf_segments"] = id->frf.segments;
    body["frf_segment_length"] = id->frf.segment_length;
    r.write_json("identified_" + t + ".json", body);
  }
}

void design_run(const Runner& r) { r.write_json("design_report.json", design_json(run_design(r.cfg()))); }

void analyze_bode(const Runner& r, std::size_t points) {
  const DesignBundle d = run_design(r.cfg());
  const auto loops = d.loops();
  const Band band = r.cfg().identification.band;
  const TransferFunction* plants[2] = {&d.ident.p.plant.tf, &d.ident.q.plant.tf};
  const char* tags[2] = {"p", "q"};
  for (int i = 0; i < 2; ++i) {
    const auto pd = bode_table(*plants[i] * d.surrogate.pade, band, points);
    const auto g = bode_table(open_loop(loops[static_cast<std::size_t>(i)], *plants[i]), band, points);
    r.write_csv(std::string("bode_plant_delay_") + tags[i] + ".csv", [&](std::ostream& os) { write_bode_csv(os, pd); });
    r.write_csv(std::string("bode_open_loop_") + tags[i] + ".csv", [&](std::ostream& os) { write_bode_csv(os, g); });
  }
}

void analyze_eig(const Runner& r) {
  const DesignBundle d = run_design(r.cfg());
  r.write_json("eig_study.json", eig_study_json(run_eig_study(r.cfg(), d)));
}

void sim_run(const Runner& r) {
  const DesignBundle d = run_design(r.cfg());
  const auto stride = r.cfg().simulation.trace_stride;
  const SimTrace on = run_sim(r.cfg(), d, true);
  const SimTrace off = run_sim(r.cfg(), d, false);
  r.write_csv("sim_trace.csv", [&](std::ostream& os) { write_sim_trace_csv(os, on, stride); });
  r.write_csv("sim_trace_off.csv", [&](std::ostream& os) { write_sim_trace_csv(os, off, stride); });
  const auto& s = r.cfg().simulation.sim;
  const std::pair<double, double> window{s.window_start_s, s.window_end_s};
  const double m_on = damping_metric(on, window);
  const double m_off = damping_metric(off, window);
  r.write_json("sim_summary.json", {{"metric_pod_on", m_on}, {"metric_pod_off", m_off}, {"ratio", m_on / m_off}});
}

void sim_ensemble(const Runner& r) {
  const DesignBundle d = run_design(r.cfg());
  r.write_json("ensemble.json", ensemble_json(run_ensemble(r.cfg(), d)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"podlab: POD controller design and delay-aware evaluation"};
  app.require_subcommand(1);
  Globals g;
  std::string log_path;
  std::string in_dir;
  std::size_t bode_points = 200;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", g.config, "config file (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--out", g.out, "output directory (default $PODLAB_OUT or ./out)");
    cmd->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { g.seed = s; }, "override the config seed");
  };
  std::function<void(const Runner&)> action;
  auto leaf = [&](CLI::App* group, const std::string& name, const std::string& help,
                  std::function<void(const Runner&)> fn) {
    CLI::App* cmd = group->add_subcommand(name, help);
    add_common(cmd);
    cmd->callback([&action, fn] { action = fn; });
    return cmd;
  };

  CLI::App* plant = app.add_subcommand("plant", "reference plant")->require_subcommand(1);
  leaf(plant, "build", "write the reference plant model", plant_build);

  CLI::App* channel = app.add_subcommand("channel", "communication channel")->require_subcommand(1);
  leaf(channel, "measure", "run a delay measurement campaign", channel_measure);
  auto* fit = leaf(channel, "fit", "fit the delay histogram and Pade surrogate",
                   [&](const Runner& r) { channel_fit(r, log_path); });
  fit->add_option("--log", log_path, "delay log CSV (default: fresh campaign)")->check(CLI::ExistingFile);

  CLI::App* sysid = app.add_subcommand("sysid", "system identification")->require_subcommand(1);
  leaf(sysid, "prbs", "run the PRBS experiments", sysid_prbs);
  auto* sfit = leaf(sysid, "fit", "identify the plant from experiment records",
                    [&](const Runner& r) { sysid_fit(r, in_dir); });
  sfit->add_option("--in", in_dir, "directory holding experiment_p.csv and experiment_q.csv")->check(CLI::ExistingDirectory);

  CLI::App* design = app.add_subcommand("design", "POD compensator design")->require_subcommand(1);
  leaf(design, "run", "design both loops", design_run);

  CLI::App* analyze = app.add_subcommand("analyze", "loop analysis")->require_subcommand(1);
  auto* bode = leaf(analyze, "bode", "open-loop Bode tables", [&](const Runner& r) { analyze_bode(r, bode_points); });
  bode->add_option("--points", bode_points, "grid points")->check(CLI::Range(2, 100000));
  leaf(analyze, "eig", "closed-loop eigenvalue study", analyze_eig);

  CLI::App* sim = app.add_subcommand("sim", "closed-loop simulation")->require_subcommand(1);
  leaf(sim, "run", "single transient with and without POD", sim_run);
  leaf(sim, "ensemble", "seeded Monte-Carlo ensemble", sim_ensemble);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const Runner runner(g);
    action(runner);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
