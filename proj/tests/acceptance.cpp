// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include "podlab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

using namespace podlab;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (cond) return;
    ok = false;
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

int failures = 0;

void run(int id, const char* name, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0.0) o.require(secs < budget_s, fmt("runtime %.2f s over %.0f s", secs, budget_s));
  if (!o.ok) ++failures;
  std::printf("%s  %d  %-24s %7.2f s  %s\n", o.ok ? "PASS" : "FAIL", id, name, secs, o.detail.c_str());
  std::fflush(stdout);
}

double wrap(double deg) { return std::remainder(deg, 360.0); }

const ProjectConfig& config() {
  static const ProjectConfig c = default_config();
  return c;
}

// Shared by criteria 5-8; built lazily inside the first criterion that needs it.
std::optional<DesignBundle> bundle;

const DesignBundle& design_once() {
  if (!bundle) bundle = run_design(config());
  return *bundle;
}

bool limiter_holds(const SimTrace& tr, double p_l, double q_l) {
  for (std::size_t k = 0; k < tr.t_s.size(); ++k) {
    if (std::abs(tr.p_sent[k]) > p_l || std::abs(tr.p_recv[k]) > p_l) return false;
    if (std::abs(tr.q_sent[k]) > q_l || std::abs(tr.q_recv[k]) > q_l) return false;
  }
  return true;
}

}  // namespace

int main() {
  const Band band{0.1, 2.0};

  run(1, "pade-surrogate", 1.0, [&](Outcome& o) {
    const double e4 = validate_surrogate(pade_approx(0.3, 4), 0.3, band);
    const double e1 = validate_surrogate(pade_approx(0.3, 1), 0.3, band);
    o.require(e4 < 10.0, fmt("order 4 error %.3f deg", e4));
    o.require(e1 >= 10.0, fmt("order 1 error %.3f deg passes", e1));
    if (o.ok) o.detail = fmt("order4 %.3f deg, order1 %.2f deg", e4, e1);
  });

  run(2, "nyquist-guard", 0.0, [&](Outcome& o) {
    o.require(nyquist_limit(3.2) == 1.6, fmt("f_max %.17g", nyquist_limit(3.2)));
    const auto plant = build_reference_plant(PlantConfig{});
    DesignOptions opts;
    opts.channel_rate_hz = 3.2;
    const std::pair<double, double> modes{2.0 * kPi * 0.45, 2.0 * kPi * 1.9};
    bool rejected = false;
    try {
      design_compensator(to_transfer_function(plant.p_path), select_surrogate(0.3), modes, opts);
    } catch (const Error& e) {
      rejected = std::string(e.what()).find("NY-LIMIT") != std::string::npos;
    }
    o.require(rejected, "1.9 Hz mode not rejected with NY-LIMIT");
    if (o.ok) o.detail = "f_max 1.6 Hz, 1.9 Hz rejected";
  });

  run(3, "channel-statistics", 5.0, [&](Outcome& o) {
    const auto& cfg = config();
    const auto log = measure_campaign(cfg.channel, 10000, cfg.seed);
    const auto d = log.delays();
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    const auto h = throughput_stats(log);
    const double mass = h.mass_on({3, 4});
    o.require(d.size() == 10000, "campaign size");
    o.require(std::abs(mean - 0.3) <= 0.02 * 0.3, fmt("mean delay %.4f s", mean));
    o.require(mass >= 0.8, fmt("mass on {3,4} %.3f", mass));
    if (o.ok) o.detail = fmt("mean %.4f s, mass{3,4} %.3f", mean, mass);
  });

  run(4, "identification", 30.0, [&](Outcome& o) {
    const auto& cfg = config();
    const auto plant = build_reference_plant(cfg.plant);
    const auto id = identify_pair(cfg, run_experiment(cfg, plant.p_path), run_experiment(cfg, plant.q_path));
    const double f1 = std::abs(plant.true_modes[0].eigenvalue);
    const double f2 = std::abs(plant.true_modes[1].eigenvalue);
    double worst_f = 0.0;
    double worst_db = 0.0;
    double worst_deg = 0.0;
    for (const auto* side : {&id.p, &id.q}) {
      const auto& m = side == &id.p ? id.modes_p : id.modes_q;
      worst_f = std::max({worst_f, std::abs(m.first / f1 - 1.0), std::abs(m.second / f2 - 1.0)});
      worst_db = std::max(worst_db, side->plant.frf_fit_mag_err_db);
      worst_deg = std::max(worst_deg, side->plant.frf_fit_phase_err_deg);
    }
    o.require(worst_f <= 0.05, fmt("mode frequency error %.2f%%", 100.0 * worst_f));
    o.require(worst_db <= 3.0, fmt("fit magnitude error %.2f dB", worst_db));
    o.require(worst_deg <= 15.0, fmt("fit phase error %.2f deg", worst_deg));
    if (o.ok) o.detail = fmt("modes within %.2f%%, fit %.2f dB", 100.0 * worst_f, worst_db) + fmt(" / %.2f deg", worst_deg);
  });

  run(5, "design", 0.0, [&](Outcome& o) {
    const auto& d = design_once();
    double worst = 0.0;
    double resid = 0.0;
    for (int i = 0; i < 2; ++i) {
      const DesignResult& r = i == 0 ? d.p : d.q;
      const auto& ident = i == 0 ? d.ident.p : d.ident.q;
      const auto modes = i == 0 ? d.ident.modes_p : d.ident.modes_q;
      o.require(r.converged, "design did not converge");
      resid = std::max(resid, r.residual_inf_norm);
      const auto g = washout(r.design.washout_Tw_s) * leadlag_tf(r.design) * d.surrogate.pade * ident.plant.tf;
      for (double w : {modes.first, modes.second}) worst = std::max(worst, std::abs(wrap(phase_at(g, w))));
    }
    o.require(worst < 5.0, fmt("open-loop phase %.3f deg", worst));
    o.require(resid < 1e-6, fmt("residual %.3g", resid));

    const auto lin = dogleg_solve(
        [](const Vector& x) {
          Vector f(2);
          f << x(0) + x(1) - 3.0, x(0) - x(1) - 1.0;
          return f;
        },
        Vector::Zero(2));
    Vector x0(2);
    x0 << -1.2, 1.0;
    const auto ros = dogleg_solve(
        [](const Vector& x) {
          Vector f(2);
          f << 1.0 - x(0), 10.0 * (x(1) - x(0) * x(0));
          return f;
        },
        x0);
    o.require(lin.converged && lin.norm < 1e-8 && lin.iterations <= 200, "linear solve");
    o.require(ros.converged && ros.norm < 1e-8 && ros.iterations <= 200, "rosenbrock solve");
    if (o.ok) o.detail = fmt("max |phase| %.3f deg, residual %.2g", worst, resid);
  });

  run(6, "eigenvalue-improvement", 10.0, [&](Outcome& o) {
    const auto& d = design_once();
    const auto base = d.plant.true_modes;
    auto loops = d.loops();
    const auto designed = closed_loop_eigs(d.plant.combined, loops, base, "design");
    double gain_margin = 1e9;
    for (std::size_t i = 0; i < 2; ++i) {
      gain_margin = std::min(gain_margin, designed.modes[i].damping_ratio - base[i].damping_ratio);
    }
    o.require(gain_margin > 0.0, fmt("damping change %.4g", gain_margin));
    for (auto& l : loops) l.gain = 0.0;
    const auto zero = closed_loop_eigs(d.plant.combined, loops, base, "zero");
    double dev = 0.0;
    for (std::size_t i = 0; i < 2; ++i) dev = std::max(dev, std::abs(zero.modes[i].eigenvalue - base[i].eigenvalue));
    o.require(dev <= 1e-9, fmt("gain-0 deviation %.3g", dev));
    if (o.ok) {
      o.detail = fmt("zeta %.4f, %.4f", designed.modes[0].damping_ratio, designed.modes[1].damping_ratio) +
                 fmt(" (baseline %.4f, %.4f)", base[0].damping_ratio, base[1].damping_ratio);
    }
  });

  run(7, "monte-carlo-ensemble", 60.0, [&](Outcome& o) {
    const auto& d = design_once();
    const auto& cfg = config();
    const auto& sim = cfg.simulation.sim;
    const auto a = ensemble(50, cfg.seed, d.plant, d.p.design, d.q.design, sim);
    const auto b = ensemble(50, cfg.seed, d.plant, d.p.design, d.q.design, sim);
    o.require(a.metrics.size() == 50, "run count");
    o.require(a.median_ratio <= 0.5, fmt("median ratio %.4f", a.median_ratio));
    o.require(a.metrics == b.metrics && a.median_ratio == b.median_ratio, "ensemble not bit-reproducible");
    if (o.ok) o.detail = fmt("median %.4f, max %.4f", a.median_ratio, a.max_ratio);
  });

  run(8, "limits", 0.0, [&](Outcome& o) {
    const auto l1 = power_limits(LimitsInput{0.1, 0.5, 0.0, 1.0});
    o.require(std::abs(l1.p_l - 0.05) < 1e-12, fmt("p_l %.6f", l1.p_l));
    o.require(std::abs(l1.q_l - std::sqrt(1.0 - 0.55 * 0.55)) < 1e-12, fmt("q_l %.6f", l1.q_l));
    const auto l2 = power_limits(LimitsInput{0.1, 0.0, 0.2, 1.0});
    o.require(l2.p_l == 0.0 && std::abs(l2.q_l - 0.8) < 1e-12, fmt("p_R=0 gives %.6f, %.6f", l2.p_l, l2.q_l));
    bool infeasible = false;
    try {
      power_limits(LimitsInput{0.5, 0.8, 0.0, 1.0});
    } catch (const Error&) {
      infeasible = true;
    }
    o.require(infeasible, "infeasible fixture accepted");

    // Every trace the suite runs: POD off, and POD on for each ensemble seed.
    const auto& d = design_once();
    const auto& cfg = config();
    std::size_t samples = 0;
    bool held = true;
    for (std::uint64_t i = 0; i < 50; ++i) {
      const auto tr = run_closed_loop(d.plant, d.p.design, d.q.design, cfg.simulation.sim, cfg.seed + i, true);
      held = held && limiter_holds(tr, d.p.design.limit_pu, d.q.design.limit_pu);
      samples += tr.t_s.size();
    }
    const auto off = run_closed_loop(d.plant, d.p.design, d.q.design, cfg.simulation.sim, cfg.seed, false);
    held = held && limiter_holds(off, d.p.design.limit_pu, d.q.design.limit_pu);
    o.require(held, "limiter violated");
    if (o.ok) o.detail = fmt("fixtures exact, limiter held on %.0f samples", static_cast<double>(samples + off.t_s.size()));
  });

  std::printf("%s: %d failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
