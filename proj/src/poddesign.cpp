#include "podlab/poddesign.hpp"

#include "podlab/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace podlab {

namespace {

double wrap180(double deg) {
  double w = std::fmod(deg, 360.0);
  if (w > 180.0) w -= 360.0;
  if (w <= -180.0) w += 360.0;
  return w;
}

constexpr double kDenominatorGuardDeg = 1.0;

}  // namespace

std::string to_string(Loop l) { return l == Loop::Active ? "active" : "reactive"; }

void CompensatorDesign::validate() const {
  for (double t : time_constants()) {
    if (!(t >= kTimeConstantMin && t <= kTimeConstantMax)) {
      throw Error("poddesign", "time constant outside [0.01, 10] s");
    }
  }
  if (!(gain >= 0.0)) throw Error("poddesign", "gain must be non-negative");
  if (!(limit_pu >= 0.0)) throw Error("poddesign", "limit must be non-negative");
  if (!(washout_Tw_s > 0.0)) throw Error("poddesign", "washout time constant must be positive");
}

TransferFunction leadlag_tf(double T1, double T2, double T3, double T4) {
  if (!(T1 > 0.0 && T2 > 0.0 && T3 > 0.0 && T4 > 0.0)) {
    throw Error("poddesign", "lead-lag time constants must be positive");
  }
  return TransferFunction(poly_mul(std::vector<double>{1.0, T1}, std::vector<double>{1.0, T3}),
                          poly_mul(std::vector<double>{1.0, T2}, std::vector<double>{1.0, T4}));
}

TransferFunction leadlag_tf(const CompensatorDesign& d) { return leadlag_tf(d.T1_s, d.T2_s, d.T3_s, d.T4_s); }

TransferFunction washout(double Tw_s) {
  if (!(Tw_s > 0.0)) throw Error("poddesign", "washout time constant must be positive");
  return TransferFunction({0.0, Tw_s}, {1.0, Tw_s});
}

double phase_at(const TransferFunction& tf, double omega_rad_s) {
  if (!(omega_rad_s > 0.0)) throw Error("poddesign", "phase requested at non-positive frequency");
  return continuous_phase_deg(tf, omega_rad_s);
}

double leadlag_phase_deg(const std::array<double, 4>& T, double w) {
  return (std::atan(w * T[0]) - std::atan(w * T[1]) + std::atan(w * T[2]) - std::atan(w * T[3])) *
         kRadToDeg;
}

std::array<double, 4> time_constants_from_log(const Vector& x) {
  if (x.size() != 4) throw Error("poddesign", "expected four log time constants");
  std::array<double, 4> T{};
  for (int i = 0; i < 4; ++i) T[static_cast<std::size_t>(i)] = std::clamp(std::exp(x(i)), kTimeConstantMin, kTimeConstantMax);
  return T;
}

ResidualValue residual_F(const Vector& x, const ResidualContext& ctx) {
  const auto T = time_constants_from_log(x);
  const double e1 = leadlag_phase_deg(T, ctx.omega_rad_s[0]) + ctx.fixed_phase_deg[0];
  const double e2 = leadlag_phase_deg(T, ctx.omega_rad_s[1]) + ctx.fixed_phase_deg[1];
  const double d1 = -ctx.fixed_phase_deg[1];
  const double d2 = -ctx.fixed_phase_deg[0];
  ResidualValue r;
  if (std::abs(d1) <= kDenominatorGuardDeg || std::abs(d2) <= kDenominatorGuardDeg) {
    r.normalized = false;
    r.F << e1, e2;
  } else {
    r.F << e1 / d1, e2 / d2;
  }
  return r;
}

DoglegResult dogleg_solve(const ResidualFunction& F, const Vector& x0, const DoglegOptions& opts) {
  DoglegResult res;
  res.x = x0;
  res.F = F(x0);
  if (!res.F.allFinite()) throw Error("poddesign", "residual not finite at the starting point");
  double f = res.F.norm();
  res.history.push_back(f);
  double radius = opts.initial_radius;
  const Eigen::Index n = x0.size();
  const Eigen::Index m = res.F.size();

  for (int it = 0; it < opts.max_iterations; ++it) {
    if (f <= opts.tolerance) break;
    res.iterations = it + 1;

    Matrix J(m, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double h = opts.relative_step * std::max(std::abs(res.x(j)), 1.0);
      Vector xp = res.x;
      Vector xm = res.x;
      xp(j) += h;
      xm(j) -= h;
      const Vector fp = F(xp);
      const Vector fm = F(xm);
      if (fp.size() != m || fm.size() != m || !fp.allFinite() || !fm.allFinite()) {
        throw Error("poddesign", "Jacobian evaluation failed");
      }
      J.col(j) = (fp - fm) / (2.0 * h);
    }

    const Vector g = J.transpose() * res.F;
    if (g.norm() == 0.0) break;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(J);
    const Vector gn = -cod.solve(res.F);

    Vector p;
    if (gn.allFinite() && gn.norm() <= radius) {
      p = gn;
    } else {
      const Vector Jg = J * g;
      const double jg2 = Jg.squaredNorm();
      const Vector sd = jg2 > 0.0 ? Vector(-(g.squaredNorm() / jg2) * g) : Vector(-radius / g.norm() * g);
      if (sd.norm() >= radius || !gn.allFinite()) {
        p = -radius / g.norm() * g;
      } else {
        // Largest tau in [0, 1] with |sd + tau (gn - sd)| = radius.
        const Vector d = gn - sd;
        const double a = d.squaredNorm();
        const double b = 2.0 * sd.dot(d);
        const double c = sd.squaredNorm() - radius * radius;
        const double tau = (-b + std::sqrt(std::max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a);
        p = sd + tau * d;
      }
    }

    const double predicted = 0.5 * (f * f - (res.F + J * p).squaredNorm());
    const Vector xn = res.x + p;
    const Vector fn = F(xn);
    const double fn_norm = fn.allFinite() ? fn.norm() : std::numeric_limits<double>::infinity();
    const double actual = 0.5 * (f * f - fn_norm * fn_norm);
    const double rho = predicted > 0.0 ? actual / predicted : -1.0;

    if (rho < 0.25) {
      radius = 0.25 * p.norm();
    } else if (rho > 0.75 && p.norm() >= 0.99 * radius) {
      radius = 2.0 * radius;
    }
    if (rho > 1e-4) {
      res.x = xn;
      res.F = fn;
      f = fn_norm;
      res.history.push_back(f);
    }
    if (radius < opts.radius_floor) break;
  }
  res.norm = f;
  res.converged = f <= opts.tolerance;
  return res;
}

PhaseBudget phase_budget(const TransferFunction& plant, const TransferFunction& delay,
                         const TransferFunction& washout_tf, const std::array<double, 4>& T,
                         double w) {
  PhaseBudget b;
  b.omega_rad_s = w;
  b.phi_D_deg = phase_at(delay, w);
  b.phi_W_deg = phase_at(washout_tf, w);
  const double raw_P = phase_at(plant, w);
  const double fixed = raw_P + b.phi_D_deg + b.phi_W_deg;
  b.phi_P_deg = raw_P + (wrap180(fixed) - fixed);
  b.phi_C_deg = leadlag_phase_deg(T, w);
  b.phi_G_deg = b.phi_C_deg + b.phi_D_deg + b.phi_P_deg + b.phi_W_deg;
  return b;
}

DesignResult design_compensator(const TransferFunction& plant, const DelaySurrogate& surrogate,
                                std::pair<double, double> modes, const DesignOptions& opts) {
  const double f_max = nyquist_limit(opts.channel_rate_hz);
  for (double w : {modes.first, modes.second}) {
    const double f = w / (2.0 * kPi);
    if (f > f_max) {
      std::ostringstream os;
      os << "NY-LIMIT: mode at " << f << " Hz exceeds the " << f_max << " Hz limit of a "
         << opts.channel_rate_hz << " msg/s channel";
      throw Error("poddesign", os.str());
    }
  }
  if (!(modes.first > 0.0 && modes.second > 0.0)) throw Error("poddesign", "mode frequencies must be positive");

  const TransferFunction w_tf = washout(opts.washout_Tw_s);
  const std::array<double, 2> omega{modes.first, modes.second};
  ResidualContext ctx;
  ctx.omega_rad_s = omega;
  const std::array<double, 4> unity{1.0, 1.0, 1.0, 1.0};
  for (std::size_t i = 0; i < 2; ++i) {
    const PhaseBudget b = phase_budget(plant, surrogate.pade, w_tf, unity, omega[i]);
    ctx.fixed_phase_deg[i] = b.phi_P_deg + b.phi_D_deg + b.phi_W_deg;
  }

  DesignResult out;
  const Vector probe = Vector::Zero(4);
  if (!residual_F(probe, ctx).normalized) {
    out.warnings.push_back("cross-mode phase below 1 deg; solving unnormalized residuals");
  }
  const ResidualFunction F = [&ctx](const Vector& x) { return Vector(residual_F(x, ctx).F); };

  const auto grid = logspace(0.05, 5.0, 8);
  const auto band_freqs = logspace(opts.band.low_hz, opts.band.high_hz, 50);
  std::vector<DoglegResult> solves;
  for (std::size_t k = 0; k < 8; ++k) {
    StartReport rep;
    rep.T0 = {grid[k], grid[7 - k], grid[(k + 3) % 8], grid[(10 - k) % 8]};
    Vector x0(4);
    for (int i = 0; i < 4; ++i) x0(i) = std::log(rep.T0[static_cast<std::size_t>(i)]);
    DoglegResult r = dogleg_solve(F, x0, opts.solver);
    rep.T = time_constants_from_log(r.x);
    rep.residual_norm = r.norm;
    rep.iterations = r.iterations;
    rep.converged = r.converged;
    const TransferFunction c = leadlag_tf(rep.T[0], rep.T[1], rep.T[2], rep.T[3]);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double f : band_freqs) {
      const double db = 20.0 * std::log10(std::abs(c.eval(Complex(0.0, 2.0 * kPi * f))));
      lo = std::min(lo, db);
      hi = std::max(hi, db);
    }
    rep.gain_spread_db = hi - lo;
    out.starts.push_back(rep);
    solves.push_back(std::move(r));
  }

  int best = -1;
  for (std::size_t k = 0; k < 8; ++k) {
    const auto& s = out.starts[k];
    if (!s.converged) continue;
    if (best < 0 || s.gain_spread_db < out.starts[static_cast<std::size_t>(best)].gain_spread_db) {
      best = static_cast<int>(k);
    }
  }
  out.converged = best >= 0;
  if (!out.converged) {
    for (std::size_t k = 0; k < 8; ++k) {
      if (best < 0 || out.starts[k].residual_norm < out.starts[static_cast<std::size_t>(best)].residual_norm) {
        best = static_cast<int>(k);
      }
    }
    std::ostringstream os;
    os << "design failure: no start converged; best residual "
       << out.starts[static_cast<std::size_t>(best)].residual_norm;
    out.warnings.push_back(os.str());
  }
  out.selected_start = best;
  const auto& sel = out.starts[static_cast<std::size_t>(best)];
  out.design.T1_s = sel.T[0];
  out.design.T2_s = sel.T[1];
  out.design.T3_s = sel.T[2];
  out.design.T4_s = sel.T[3];
  out.design.washout_Tw_s = opts.washout_Tw_s;
  out.design.loop = opts.loop;
  out.residual_inf_norm = solves[static_cast<std::size_t>(best)].F.cwiseAbs().maxCoeff();
  for (std::size_t i = 0; i < 2; ++i) {
    out.budgets[i] = phase_budget(plant, surrogate.pade, w_tf, sel.T, omega[i]);
  }
  return out;
}

PowerLimits power_limits(const LimitsInput& in) {
  if (!(in.k >= 0.0 && in.k <= 1.0)) throw Error("poddesign", "margin k must lie in [0, 1]");
  if (!(in.S_n > 0.0)) throw Error("poddesign", "rated power must be positive");
  if (!(in.p_R >= 0.0)) throw Error("poddesign", "active dispatch must be non-negative");
  const double p_total = (1.0 + in.k) * in.p_R;
  if (p_total > in.S_n) {
    std::ostringstream os;
    os << "infeasible operating point: (1+k) p_R = " << p_total << " exceeds S_n = " << in.S_n;
    throw Error("poddesign", os.str());
  }
  PowerLimits out;
  out.p_l = in.k * in.p_R;
  const double q_room = std::sqrt(in.S_n * in.S_n - p_total * p_total);
  if (in.q_R > q_room) {
    std::ostringstream os;
    os << "infeasible operating point: q_R = " << in.q_R << " exceeds the available " << q_room;
    throw Error("poddesign", os.str());
  }
  out.q_l = q_room - in.q_R;
  return out;
}

std::vector<double> default_gain_grid(const TransferFunction& unity_open_loop,
                                      std::pair<double, double> modes, std::size_t n, double decades) {
  double peak = 0.0;
  for (double w : {modes.first, modes.second}) {
    peak = std::max(peak, std::abs(unity_open_loop.eval(Complex(0.0, w))));
  }
  if (!(peak > 0.0) || !std::isfinite(peak)) throw Error("poddesign", "open loop has no gain at the modes");
  const double half = std::pow(10.0, decades / 2.0);
  std::vector<double> grid{0.0};
  for (double k : logspace(1.0 / (half * peak), half / peak, n)) grid.push_back(k);
  return grid;
}

GainSelection select_gain(const StateSpace& plant, std::vector<LoopParts> loops, std::size_t index,
                          std::span<const double> gain_grid, std::span<const ModeReport> baseline) {
  if (index >= loops.size()) throw Error("poddesign", "loop index out of range");
  for (std::size_t i = 1; i < gain_grid.size(); ++i) {
    if (gain_grid[i] < gain_grid[i - 1]) throw Error("poddesign", "gain grid must be ascending");
  }
  auto stable_at = [&](double K) {
    loops[index].gain = K;
    for (const Complex& l : eigen(closed_loop_matrix(plant, loops))) {
      if (!(l.real() < 0.0)) return false;
    }
    return true;
  };
  auto min_zeta = [](const EigenCase& c) {
    return std::min(c.modes[0].damping_ratio, c.modes[1].damping_ratio);
  };

  GainSelection sel;
  loops[index].gain = 0.0;
  const EigenCase base = closed_loop_eigs(plant, loops, baseline);
  sel.baseline_min_damping = min_zeta(base);
  sel.min_damping = sel.baseline_min_damping;
  sel.gain = 0.0;

  for (double K : gain_grid) {
    if (K < 0.0) throw Error("poddesign", "gains must be non-negative");
    GainCandidate c;
    c.gain = K;
    c.stable = stable_at(K);
    c.margin_ok = c.stable;
    for (int j = 1; j <= 4 && c.margin_ok; ++j) c.margin_ok = stable_at(K * std::pow(2.0, j / 4.0));
    if (c.stable) {
      loops[index].gain = K;
      try {
        c.min_damping = min_zeta(closed_loop_eigs(plant, loops, baseline));
      } catch (const Error&) {
        c.ambiguous = true;
      }
    }
    if (c.stable && c.margin_ok && !c.ambiguous && c.min_damping > sel.min_damping) {
      sel.gain = K;
      sel.min_damping = c.min_damping;
    }
    sel.candidates.push_back(c);
  }
  return sel;
}

}  // namespace podlab
