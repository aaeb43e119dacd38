#include <doctest.h>

#include "podlab/channel.hpp"
#include "podlab/lti.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

using namespace podlab;

namespace {

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> draw(const DelayDistribution& d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (double& x : out) x = sample_delay(d, rng);
  return out;
}

// Composite Simpson rule.
template <class F>
double simpson(F f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

ChannelConfig point_mass_channel(double delay, double rate) {
  ChannelConfig c;
  c.delay = DelayDistribution::point_mass(delay);
  c.rate_hz = rate;
  return c;
}

}  // namespace

TEST_CASE("delay distributions") {
  SUBCASE("point mass always returns its value") {
    for (double x : draw(DelayDistribution::point_mass(0.5), 100, 3)) CHECK(x == 0.5);
  }
  SUBCASE("uniform sample mean") {
    const auto d = DelayDistribution::uniform(0.2, 0.4);
    CHECK(d.mean_s() == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(std::abs(mean_of(draw(d, 10000, 11)) - 0.3) <= 0.005);
  }
  SUBCASE("lab histogram: mass, mean and sample mean") {
    const auto d = DelayDistribution::lab_default();
    const auto& p = d.probabilities();
    CHECK(p.size() == 20);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-12);
    CHECK(d.tau_min() == doctest::Approx(0.05));
    CHECK(d.tau_max() == doctest::Approx(1.5));
    CHECK(std::abs(d.mean_s() - 0.3) < 1e-9);
    // right-skewed: the mode sits left of the mean
    const auto imax = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    CHECK(0.5 * (d.edges()[imax] + d.edges()[imax + 1]) < d.mean_s());
    CHECK(std::abs(mean_of(draw(d, 10000, 5)) - 0.3) <= 0.02 * 0.3);
  }
  SUBCASE("histogram mean equals the integral of its density") {
    const auto d = DelayDistribution::histogram({0.1, 0.2, 0.5, 0.6}, {1.0, 3.0, 2.0});
    double oracle = 0.0;
    const auto& e = d.edges();
    for (std::size_t i = 0; i < d.probabilities().size(); ++i) {
      const double dens = d.probabilities()[i] / (e[i + 1] - e[i]);
      oracle += simpson([&](double x) { return x * dens; }, e[i], e[i + 1], 2);
    }
    CHECK(std::abs(d.mean_s() - oracle) < 1e-9);
  }
  SUBCASE("truncated normal mean equals the integral of its density") {
    const auto d = DelayDistribution::truncated_normal(0.25, 0.15, 0.05, 1.0);
    auto pdf = [&](double x) { return std::exp(-0.5 * std::pow((x - 0.25) / 0.15, 2)); };
    const double z = simpson(pdf, 0.05, 1.0);
    const double m = simpson([&](double x) { return x * pdf(x); }, 0.05, 1.0) / z;
    CHECK(std::abs(d.mean_s() - m) < 1e-9);
    CHECK(std::abs(mean_of(draw(d, 20000, 9)) - m) < 0.02 * m);
  }
  SUBCASE("samples stay on the support") {
    const DelayDistribution ds[] = {DelayDistribution::point_mass(0.3), DelayDistribution::uniform(0.2, 0.4),
                                    DelayDistribution::truncated_normal(0.3, 0.2, 0.1, 0.6),
                                    DelayDistribution::lab_default()};
    for (const auto& d : ds) {
      for (double x : draw(d, 5000, 21)) {
        CHECK(x >= d.tau_min());
        CHECK(x <= d.tau_max());
      }
    }
  }
  SUBCASE("seeded sampling is deterministic") {
    const auto d = DelayDistribution::lab_default();
    CHECK(draw(d, 1000, 42) == draw(d, 1000, 42));
    CHECK(draw(d, 1000, 42) != draw(d, 1000, 43));
  }
  SUBCASE("invalid parameters") {
    CHECK_THROWS_AS(DelayDistribution::point_mass(-0.1), Error);
    CHECK_THROWS_AS(DelayDistribution::uniform(0.4, 0.2), Error);
    CHECK_THROWS_AS(DelayDistribution::truncated_normal(0.3, 0.0, 0.1, 0.5), Error);
    CHECK_THROWS_AS(DelayDistribution::histogram({0.1, 0.1}, {1.0}), Error);
    CHECK_THROWS_AS(DelayDistribution::histogram({0.1, 0.2}, {0.0}), Error);
    CHECK_THROWS_AS(parse_delay_kind("gamma"), Error);
  }
  SUBCASE("kind names round trip") {
    for (auto k : {DelayKind::EmpiricalHistogram, DelayKind::Uniform, DelayKind::TruncatedNormal, DelayKind::PointMass}) {
      CHECK(parse_delay_kind(to_string(k)) == k);
    }
  }
}

TEST_CASE("transmit") {
  SUBCASE("transparent channel holds a recent input sample") {
    // 0.5 Hz sinusoid, 50 msg/s (100x bandwidth), zero delay, no jitter.
    ChannelConfig c = point_mass_channel(0.0, 50.0);
    c.jitter_fraction = 0.0;
    const double dt = 1.0 / 5000.0;
    std::vector<double> u(50000);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = std::sin(2.0 * kPi * 0.5 * static_cast<double>(j) * dt);
    const auto y = transmit(u, dt, c, 1);
    const auto per_msg = static_cast<std::size_t>(std::ceil(1.0 / (c.rate_hz * dt)));
    std::size_t first = 0;
    while (first < y.size() && y[first] == 0.0) ++first;
    REQUIRE(first <= per_msg + 1);
    for (std::size_t j = per_msg + 1; j < y.size(); ++j) {
      bool found = false;
      for (std::size_t k = j - per_msg - 1; k <= j && !found; ++k) found = y[j] == u[k];
      REQUIRE(found);
    }
  }
  SUBCASE("constant input is held after the first arrival") {
    const ChannelConfig c;
    const double dt = 1e-3;
    const std::vector<double> u(20000, 0.37);
    const auto y = transmit(u, dt, c, 8);
    const auto first = static_cast<std::size_t>(std::find(y.begin(), y.end(), 0.37) - y.begin());
    REQUIRE(first < y.size());
    for (std::size_t j = 0; j < first; ++j) CHECK(y[j] == 0.0);
    CHECK(std::all_of(y.begin() + static_cast<std::ptrdiff_t>(first), y.end(), [](double v) { return v == 0.37; }));
  }
  SUBCASE("quantization") {
    ChannelConfig c;
    c.quantization_step = 1e-3;
    const std::vector<double> u(5000, 0.12345);
    const auto y = transmit(u, 1e-3, c, 2);
    CHECK(y.back() == doctest::Approx(0.123).epsilon(1e-12));
  }
  SUBCASE("cross-correlation lag of a mean 0.3 s channel") {
    const ChannelConfig c = point_mass_channel(0.3, 100.0);
    const double dt = 1e-4;
    const std::size_t n = 2000000;  // 200 s
    std::vector<double> u(n);
    for (std::size_t j = 0; j < n; ++j) u[j] = std::sin(2.0 * kPi * 0.5 * static_cast<double>(j) * dt);
    const auto y = transmit(u, dt, c, 4);
    // Correlate on a 1 ms grid over lags 0..1 s (less than one period).
    const std::size_t stride = 10;
    double best = -1e300;
    double best_lag = 0.0;
    for (std::size_t lag = 0; lag <= 10000; lag += stride) {
      double s = 0.0;
      for (std::size_t j = 20000; j + lag < n; j += stride) s += u[j] * y[j + lag];
      if (s > best) {
        best = s;
        best_lag = static_cast<double>(lag) * dt;
      }
    }
    CHECK(std::abs(best_lag - 0.30) <= 0.03);
  }
  SUBCASE("causality and monotone application (ramp encodes send time)") {
    const ChannelConfig c;
    const double dt = 1e-3;
    std::vector<double> u(60000);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = static_cast<double>(j) * dt;
    const auto y = transmit(u, dt, c, 17);
    double last = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      CHECK(y[j] <= u[j]);
      CHECK(y[j] >= last);
      last = y[j];
    }
  }
  SUBCASE("emulator discards stale arrivals and stamps are causal") {
    ChannelEmulator ch(ChannelConfig{}, 99, 1);
    const double dt = 1e-3;
    std::vector<double> value(1);
    for (int j = 0; j < 200000; ++j) {
      value[0] = j * dt;
      ch.advance(j * dt, value);
    }
    for (const auto& r : ch.log().records) CHECK(r.t_received >= r.t_sent);
    const auto& a = ch.applied_times();
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(ch.discarded() > 0);
    CHECK(a.size() + ch.discarded() <= ch.log().records.size());
  }
  SUBCASE("determinism") {
    const ChannelConfig c;
    std::vector<double> u(30000);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = std::cos(0.003 * static_cast<double>(j));
    CHECK(transmit(u, 1e-3, c, 5) == transmit(u, 1e-3, c, 5));
    CHECK(transmit(u, 1e-3, c, 5) != transmit(u, 1e-3, c, 6));
  }
  SUBCASE("simulation rate too low names the required rate") {
    const std::vector<double> u(100, 1.0);
    CHECK_THROWS_WITH_AS(transmit(u, 1e-2, ChannelConfig{}, 1), doctest::Contains("required >= 350"), Error);
  }
}

TEST_CASE("measurement campaign") {
  SUBCASE("point mass 0.3") {
    const auto log = measure_campaign(point_mass_channel(0.3, 1.0), 1200, 1);
    REQUIRE(log.records.size() == 1200);
    for (double d : log.delays()) CHECK(std::abs(d - 0.3) < 1e-12);
  }
  SUBCASE("empirical histogram is reproduced (total variation)") {
    const ChannelConfig c;
    const auto log = measure_campaign(c, 1200, 1);
    const auto est = histogram_from_delays(log.delays(), c.delay.edges());
    double tv = 0.0;
    for (std::size_t i = 0; i < est.probabilities().size(); ++i) {
      tv += std::abs(est.probabilities()[i] - c.delay.probabilities()[i]);
    }
    CHECK(0.5 * tv < 0.05);
  }
  SUBCASE("mean delay over 10000 messages") {
    const ChannelConfig c;
    const auto log = measure_campaign(c, 10000, 7);
    CHECK(std::abs(mean_of(log.delays()) - c.delay.mean_s()) <= 0.02 * c.delay.mean_s());
  }
  SUBCASE("reproducible and nonnegative") {
    const ChannelConfig c;
    const auto a = measure_campaign(c, 500, 3);
    const auto b = measure_campaign(c, 500, 3);
    CHECK(a.delays() == b.delays());
    CHECK(a.sent_times() == b.sent_times());
    for (double d : a.delays()) CHECK(d >= 0.0);
  }
  SUBCASE("zero messages rejected") { CHECK_THROWS_AS(measure_campaign(ChannelConfig{}, 0, 1), Error); }
  SUBCASE("CSV round trip") {
    const auto log = measure_campaign(ChannelConfig{}, 50, 3);
    std::stringstream ss;
    write_delay_log_csv(ss, log);
    const auto back = read_delay_log_csv(ss);
    REQUIRE(back.records.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(back.records[i].t_sent == doctest::Approx(log.records[i].t_sent).epsilon(1e-11));
      CHECK(back.records[i].t_received == doctest::Approx(log.records[i].t_received).epsilon(1e-11));
    }
    std::istringstream bad("t_sent_s,t_received_s\n1.0,0.5\n");
    CHECK_THROWS_AS(read_delay_log_csv(bad), Error);
  }
}

TEST_CASE("throughput statistics") {
  SUBCASE("jittered 3.5 msg/s concentrates on 3 and 4") {
    const auto h = throughput_stats(measure_campaign(ChannelConfig{}, 2000, 1));
    CHECK(h.mass_on({3, 4}) >= 0.8);
    CHECK((h.mode == 3 || h.mode == 4));
  }
  SUBCASE("exact periodic 1 msg/s counts one per window") {
    ChannelConfig c = point_mass_channel(0.0, 1.0);
    c.jitter_fraction = 0.0;
    const auto h = throughput_stats(measure_campaign(c, 60, 2));
    CHECK(std::all_of(h.counts.begin(), h.counts.end(), [](int n) { return n == 1; }));
    CHECK(h.mode == 1);
  }
  SUBCASE("10 msg/s over 100 s against a direct count") {
    ChannelConfig c;
    c.rate_hz = 10.0;
    const auto log = measure_campaign(c, 1001, 4);
    const auto h = throughput_stats(log);
    const double t0 = log.records.front().t_sent;
    const auto nw = static_cast<double>(h.counts.size());
    std::size_t direct = 0;
    for (const auto& r : log.records) direct += (r.t_received >= t0 && r.t_received < t0 + nw) ? 1 : 0;
    CHECK(h.mean == doctest::Approx(static_cast<double>(direct) / nw).epsilon(1e-12));
    CHECK(std::abs(h.mean - 10.0) <= 0.5);
  }
  SUBCASE("poisson emission averages the rate") {
    ChannelConfig c;
    c.emission = EmissionMode::Poisson;
    const auto log = measure_campaign(c, 5000, 4);
    const double span = log.records.back().t_sent - log.records.front().t_sent;
    CHECK(std::abs(4999.0 / span - 3.5) < 0.2);
  }
  SUBCASE("received trace counts value changes") {
    ChannelConfig c = point_mass_channel(0.1, 2.0);
    c.jitter_fraction = 0.0;
    std::vector<double> u(30000);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = static_cast<double>(j);
    const auto h = throughput_from_trace(transmit(u, 1e-3, c, 1), 1e-3);
    CHECK(h.mode == 2);
  }
  SUBCASE("too short") {
    const std::vector<double> t{0.1, 0.5, 1.2};
    CHECK_THROWS_WITH_AS(throughput_stats(t, 0.0, 5.0), doctest::Contains("fewer than 10 windows"), Error);
  }
}

TEST_CASE("nyquist limit") {
  CHECK(nyquist_limit(3.2) == 1.6);
  CHECK(nyquist_limit(10.0) == 5.0);
  CHECK_THROWS_AS(nyquist_limit(0.0), Error);
  CHECK_THROWS_AS(nyquist_limit(-1.0), Error);
}

TEST_CASE("seed derivation separates streams") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}
