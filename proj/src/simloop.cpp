#include "podlab/simloop.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <thread>

namespace podlab {

namespace {

constexpr double kMaxStep = 1e-3;

struct LoopState {
  StateSpace ss;
  Vector x;
  double gain = 0.0;
  double limit = 0.0;
};

LoopState make_loop(const CompensatorDesign& d, double dt) {
  d.validate();
  LoopState s;
  s.ss = series(to_state_space(washout(d.washout_Tw_s)), to_state_space(leadlag_tf(d)));
  s.x = Vector::Zero(s.ss.order());
  s.gain = d.gain;
  s.limit = d.limit_pu;
  if (dt > max_simulation_step(s.ss) * (1.0 + 1e-12)) {
    throw Error("simloop", "simulation step too large for the compensator dynamics");
  }
  return s;
}

}  // namespace

std::vector<UnitSpec> default_units() {
  constexpr double third = 1.0 / 3.0;
  return {{"pv1", third, third}, {"pv2", third, third}, {"battery", third, 0.0}, {"statcom", 0.0, third}};
}

void SimConfig::validate() const {
  if (!(dt_s > 0.0)) throw Error("simloop", "simulation step must be positive");
  if (dt_s > kMaxStep * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "simulation step " << dt_s << " s too large; must be <= 1 ms";
    throw Error("simloop", os.str());
  }
  if (!(duration_s > 0.0)) throw Error("simloop", "duration must be positive");
  if (!(window_start_s >= 0.0 && window_start_s < window_end_s && window_end_s <= duration_s + 1e-9)) {
    throw Error("simloop", "metric window must lie inside the simulated interval");
  }
  if (feedback_sign != 1.0 && feedback_sign != -1.0) throw Error("simloop", "feedback sign must be +1 or -1");
  if (units.empty()) throw Error("simloop", "at least one unit is required");
  for (const auto& u : units) {
    if (u.p_weight < 0.0 || u.q_weight < 0.0) throw Error("simloop", "participation weights must be non-negative");
  }
  scenario.validate();
  channel.validate();
}

SimTrace run_closed_loop(const PlantPair& plant, const CompensatorDesign& p_design,
                         const CompensatorDesign& q_design, const SimConfig& cfg, std::uint64_t seed,
                         bool pod_on) {
  cfg.validate();
  const double dt = cfg.dt_s;
  const StateSpace& ps = plant.combined;
  if (dt > max_simulation_step(ps) * (1.0 + 1e-12)) throw Error("simloop", "simulation step too large for the plant");
  if (1.0 / dt < 100.0 * cfg.channel.rate_hz * (1.0 - 1e-12)) {
    throw Error("simloop", "simulation clock too coarse for the channel message rate");
  }
  const Rk4Propagator plant_rk(ps, dt);
  LoopState lp = make_loop(p_design, dt);
  LoopState lq = make_loop(q_design, dt);
  const Rk4Propagator p_rk(lp.ss, dt);
  const Rk4Propagator q_rk(lq.ss, dt);

  std::vector<ChannelEmulator> channels;
  channels.reserve(cfg.units.size());
  for (std::size_t u = 0; u < cfg.units.size(); ++u) channels.emplace_back(cfg.channel, derive_seed(seed, u), 2);
  std::size_t p_probe = 0;
  while (p_probe + 1 < cfg.units.size() && cfg.units[p_probe].p_weight == 0.0) ++p_probe;
  std::size_t q_probe = 0;
  while (q_probe + 1 < cfg.units.size() && cfg.units[q_probe].q_weight == 0.0) ++q_probe;

  const Excitation ex = apply_disturbance(plant, cfg.scenario);
  bool kick_pending = ex.has_kick();

  const auto steps = static_cast<std::size_t>(std::llround(cfg.duration_s / dt)) + 1;
  SimTrace tr;
  tr.pod_enabled = pod_on;
  tr.seed = seed;
  for (auto* v : {&tr.t_s, &tr.omega_g_pu, &tr.p_sent, &tr.p_recv, &tr.q_sent, &tr.q_recv}) v->reserve(steps);

  Vector x = Vector::Zero(ps.order());
  Vector u(2);
  Vector yv(1);
  std::array<double, 2> sent{0.0, 0.0};
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (kick_pending && t >= ex.kick_time_s - 1e-12) {
      x += ex.state_kick;
      kick_pending = false;
    }
    const double y = (ps.C * x)(0);
    double p_in = 0.0;
    double q_in = 0.0;
    double p_recv = 0.0;
    double q_recv = 0.0;
    if (pod_on) {
      const double vp = (lp.ss.C * lp.x)(0) + lp.ss.D(0, 0) * y;
      const double vq = (lq.ss.C * lq.x)(0) + lq.ss.D(0, 0) * y;
      sent[0] = std::clamp(cfg.feedback_sign * lp.gain * vp, -lp.limit, lp.limit);
      sent[1] = std::clamp(cfg.feedback_sign * lq.gain * vq, -lq.limit, lq.limit);
      for (std::size_t i = 0; i < channels.size(); ++i) {
        channels[i].advance(t, sent);
        p_in += cfg.units[i].p_weight * channels[i].held(0);
        q_in += cfg.units[i].q_weight * channels[i].held(1);
      }
      p_recv = channels[p_probe].held(0);
      q_recv = channels[q_probe].held(1);
    }
    tr.t_s.push_back(t);
    tr.omega_g_pu.push_back(y);
    tr.p_sent.push_back(sent[0]);
    tr.p_recv.push_back(p_recv);
    tr.q_sent.push_back(sent[1]);
    tr.q_recv.push_back(q_recv);

    u(0) = p_in + ex.input_at(0, t);
    u(1) = q_in + ex.input_at(1, t);
    plant_rk.step(x, u);
    if (pod_on) {
      yv(0) = y;
      p_rk.step(lp.x, yv);
      q_rk.step(lq.x, yv);
    }
  }
  return tr;
}

double damping_metric(const SimTrace& trace, std::pair<double, double> window) {
  if (!(window.first < window.second)) throw Error("simloop", "empty metric window");
  if (trace.t_s.empty() || window.first < trace.t_s.front() - 1e-9 || window.second > trace.t_s.back() + 1e-9) {
    throw Error("simloop", "metric window outside the trace");
  }
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k + 1 < trace.t_s.size(); ++k) {
    const double a = trace.t_s[k];
    const double b = trace.t_s[k + 1];
    if (a < window.first - 1e-9 || b > window.second + 1e-9) continue;
    const double ya = trace.omega_g_pu[k];
    const double yb = trace.omega_g_pu[k + 1];
    sum += 0.5 * (b - a) * (ya * ya + yb * yb);
    ++used;
  }
  if (used == 0) throw Error("simloop", "empty metric window");
  return sum;
}

EnsembleStats ensemble(std::size_t n_runs, std::uint64_t base_seed, const PlantPair& plant,
                       const CompensatorDesign& p_design, const CompensatorDesign& q_design,
                       const SimConfig& cfg) {
  if (n_runs < 1) throw Error("simloop", "ensemble needs at least one run");
  const std::pair<double, double> window{cfg.window_start_s, cfg.window_end_s};
  EnsembleStats st;
  st.n_runs = n_runs;
  st.base_seed = base_seed;
  st.baseline = damping_metric(run_closed_loop(plant, p_design, q_design, cfg, base_seed, false), window);
  st.metrics.assign(n_runs, 0.0);

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_runs);
  auto worker = [&] {
    for (std::size_t i = next++; i < n_runs; i = next++) {
      try {
        st.metrics[i] = damping_metric(run_closed_loop(plant, p_design, q_design, cfg, base_seed + i, true), window);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(n_runs, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<double> sorted = st.metrics;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = n_runs / 2;
  const double median = n_runs % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  if (st.baseline > 0.0) {
    st.median_ratio = median / st.baseline;
    st.max_ratio = sorted.back() / st.baseline;
  }
  return st;
}

void write_sim_trace_csv(std::ostream& os, const SimTrace& tr, std::size_t stride) {
  if (stride == 0) stride = 1;
  os << "t_s,omega_g_pu,pD_sent,pD_recv,qD_sent,qD_recv\n";
  char buf[192];
  for (std::size_t k = 0; k < tr.t_s.size(); k += stride) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", tr.t_s[k], tr.omega_g_pu[k], tr.p_sent[k],
                  tr.p_recv[k], tr.q_sent[k], tr.q_recv[k]);
    os << buf;
  }
}

}  // namespace podlab
