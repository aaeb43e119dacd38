#include "podlab/channel.hpp"

#include "podlab/lti.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace podlab {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string to_string(DelayKind k) {
  switch (k) {
    case DelayKind::EmpiricalHistogram: return "empirical-histogram";
    case DelayKind::Uniform: return "uniform";
    case DelayKind::TruncatedNormal: return "truncated-normal";
    case DelayKind::PointMass: return "point-mass";
  }
  return "point-mass";
}

DelayKind parse_delay_kind(const std::string& s) {
  if (s == "empirical-histogram") return DelayKind::EmpiricalHistogram;
  if (s == "uniform") return DelayKind::Uniform;
  if (s == "truncated-normal") return DelayKind::TruncatedNormal;
  if (s == "point-mass") return DelayKind::PointMass;
  throw Error("channel", "unknown delay distribution kind '" + s + "'");
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }

// Integral of x exp(-x/b) from 0 to x.
double gamma2_cdf_unnormalized(double x, double b) {
  return b * b - b * (x + b) * std::exp(-x / b);
}

}  // namespace

DelayDistribution DelayDistribution::point_mass(double value_s) {
  if (!(value_s >= 0.0)) throw Error("channel", "point-mass delay must be non-negative");
  DelayDistribution d;
  d.kind_ = DelayKind::PointMass;
  d.lo_ = d.hi_ = d.mean_ = value_s;
  return d;
}

DelayDistribution DelayDistribution::uniform(double lo_s, double hi_s) {
  if (!(lo_s >= 0.0 && lo_s <= hi_s)) throw Error("channel", "uniform delay needs 0 <= low <= high");
  DelayDistribution d;
  d.kind_ = DelayKind::Uniform;
  d.lo_ = lo_s;
  d.hi_ = hi_s;
  d.mean_ = 0.5 * (lo_s + hi_s);
  return d;
}

DelayDistribution DelayDistribution::truncated_normal(double mu_s, double sigma_s, double lo_s,
                                                      double hi_s) {
  if (!(lo_s >= 0.0 && lo_s < hi_s && sigma_s > 0.0)) {
    throw Error("channel", "truncated-normal delay needs sigma > 0 and 0 <= low < high");
  }
  DelayDistribution d;
  d.kind_ = DelayKind::TruncatedNormal;
  d.mu_ = mu_s;
  d.sigma_ = sigma_s;
  d.lo_ = lo_s;
  d.hi_ = hi_s;
  const double a = (lo_s - mu_s) / sigma_s;
  const double b = (hi_s - mu_s) / sigma_s;
  const double z = normal_cdf(b) - normal_cdf(a);
  if (!(z > 1e-12)) throw Error("channel", "truncated-normal support carries no probability mass");
  d.mean_ = mu_s + sigma_s * (normal_pdf(a) - normal_pdf(b)) / z;
  return d;
}

DelayDistribution DelayDistribution::histogram(std::vector<double> edges_s,
                                               std::vector<double> weights) {
  if (edges_s.size() < 2 || weights.size() + 1 != edges_s.size()) {
    throw Error("channel", "histogram needs n+1 edges for n bins");
  }
  if (!(edges_s.front() >= 0.0)) throw Error("channel", "histogram edges must be non-negative");
  for (std::size_t i = 1; i < edges_s.size(); ++i) {
    if (!(edges_s[i] > edges_s[i - 1])) throw Error("channel", "histogram edges must increase");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error("channel", "histogram weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw Error("channel", "histogram carries no probability mass");

  DelayDistribution d;
  d.kind_ = DelayKind::EmpiricalHistogram;
  d.edges_ = std::move(edges_s);
  d.probs_ = std::move(weights);
  for (double& p : d.probs_) p /= total;
  d.cdf_.resize(d.probs_.size());
  std::partial_sum(d.probs_.begin(), d.probs_.end(), d.cdf_.begin());
  d.lo_ = d.edges_.front();
  d.hi_ = d.edges_.back();
  d.mean_ = 0.0;
  for (std::size_t i = 0; i < d.probs_.size(); ++i) {
    d.mean_ += d.probs_[i] * 0.5 * (d.edges_[i] + d.edges_[i + 1]);
  }
  return d;
}

DelayDistribution DelayDistribution::lab_default() {
  constexpr double lo = 0.05;
  constexpr double hi = 1.5;
  constexpr std::size_t bins = 20;
  constexpr double target_mean = 0.3;
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  // Shifted gamma(2, b) shape integrated over each bin; b tuned so the
  // histogram mean is exactly target_mean.
  auto weights_for = [&](double b) {
    std::vector<double> w(bins);
    for (std::size_t i = 0; i < bins; ++i) {
      w[i] = gamma2_cdf_unnormalized(edges[i + 1] - lo, b) - gamma2_cdf_unnormalized(edges[i] - lo, b);
    }
    return w;
  };
  double b_lo = 1e-3;
  double b_hi = 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (b_lo + b_hi);
    if (histogram(edges, weights_for(mid)).mean_s() < target_mean) {
      b_lo = mid;
    } else {
      b_hi = mid;
    }
  }
  return histogram(edges, weights_for(0.5 * (b_lo + b_hi)));
}

double DelayDistribution::sample(Rng& rng) const {
  switch (kind_) {
    case DelayKind::PointMass:
      return mean_;
    case DelayKind::Uniform:
      return rng.uniform(lo_, hi_);
    case DelayKind::TruncatedNormal: {
      const double a = normal_cdf((lo_ - mu_) / sigma_);
      const double b = normal_cdf((hi_ - mu_) / sigma_);
      const double target = a + rng.uniform() * (b - a);
      double x0 = lo_;
      double x1 = hi_;
      for (int it = 0; it < 64; ++it) {
        const double mid = 0.5 * (x0 + x1);
        if (normal_cdf((mid - mu_) / sigma_) < target) {
          x0 = mid;
        } else {
          x1 = mid;
        }
      }
      return 0.5 * (x0 + x1);
    }
    case DelayKind::EmpiricalHistogram: {
      const double u = rng.uniform();
      auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
      auto i = static_cast<std::size_t>(std::distance(cdf_.begin(), it));
      if (i >= probs_.size()) i = probs_.size() - 1;
      while (probs_[i] == 0.0 && i > 0) --i;
      return rng.uniform(edges_[i], edges_[i + 1]);
    }
  }
  return mean_;
}

double sample_delay(const DelayDistribution& dist, Rng& rng) { return dist.sample(rng); }

void ChannelConfig::validate() const {
  if (!(rate_hz > 0.0)) throw Error("channel", "message rate must be positive");
  if (!(quantization_step >= 0.0)) throw Error("channel", "quantization step must be non-negative");
  if (!(jitter_fraction >= 0.0 && jitter_fraction < 0.5)) {
    throw Error("channel", "jitter fraction must lie in [0, 0.5)");
  }
}

std::vector<double> DelayLog::delays() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.t_received - r.t_sent);
  return out;
}

std::vector<double> DelayLog::sent_times() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.t_sent);
  return out;
}

std::vector<double> DelayLog::received_times() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.t_received);
  return out;
}

void write_delay_log_csv(std::ostream& os, const DelayLog& log) {
  os << "t_sent_s,t_received_s\n";
  char buf[64];
  for (const auto& r : log.records) {
    std::snprintf(buf, sizeof buf, "%.12g,%.12g\n", r.t_sent, r.t_received);
    os << buf;
  }
}

DelayLog read_delay_log_csv(std::istream& is) {
  DelayLog log;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "t_sent_s,t_received_s") throw Error("channel", "unexpected delay log header '" + line + "'");
      header = true;
      continue;
    }
    std::istringstream row(line);
    DelayLog::Record r{};
    char comma = 0;
    if (!(row >> r.t_sent >> comma >> r.t_received) || comma != ',') {
      throw Error("channel", "malformed delay log row '" + line + "'");
    }
    if (r.t_received < r.t_sent) throw Error("channel", "delay log row with negative delay");
    log.records.push_back(r);
  }
  if (!header) throw Error("channel", "delay log is empty");
  return log;
}

EmissionSchedule::EmissionSchedule(const ChannelConfig& cfg, Rng& rng)
    : mode_(cfg.emission), period_(1.0 / cfg.rate_hz), jitter_(cfg.jitter_fraction) {
  if (mode_ == EmissionMode::JitteredPeriodic) {
    phase_ = rng.uniform(jitter_, 1.0 + jitter_);
    next_ = (phase_ + rng.uniform(-jitter_, jitter_)) * period_;
  } else {
    next_ = -std::log1p(-rng.uniform()) * period_;
  }
}

double EmissionSchedule::pop(Rng& rng) {
  const double t = next_;
  ++k_;
  if (mode_ == EmissionMode::JitteredPeriodic) {
    next_ = (static_cast<double>(k_) + phase_ + rng.uniform(-jitter_, jitter_)) * period_;
  } else {
    next_ = t - std::log1p(-rng.uniform()) * period_;
  }
  return t;
}

ChannelEmulator::ChannelEmulator(const ChannelConfig& cfg, std::uint64_t stream_seed,
                                 std::size_t width)
    : cfg_((cfg.validate(), cfg)), rng_(stream_seed), schedule_(cfg_, rng_), held_(width, 0.0) {}

void ChannelEmulator::advance(double t, std::span<const double> sender) {
  if (sender.size() != held_.size()) throw Error("channel", "sender width mismatch");
  while (schedule_.peek() <= t) {
    const double sent = schedule_.pop(rng_);
    InFlight msg{sent + cfg_.delay.sample(rng_), sent, seq_++, {sender.begin(), sender.end()}};
    if (cfg_.quantization_step > 0.0) {
      for (double& v : msg.values) v = std::round(v / cfg_.quantization_step) * cfg_.quantization_step;
    }
    log_.records.push_back({msg.sent, msg.arrival});
    in_flight_.push(std::move(msg));
  }
  while (!in_flight_.empty() && in_flight_.top().arrival <= t) {
    const InFlight& msg = in_flight_.top();
    if (msg.sent > last_applied_sent_) {
      last_applied_sent_ = msg.sent;
      std::copy(msg.values.begin(), msg.values.end(), held_.begin());
      applied_.push_back(msg.arrival);
    } else {
      ++discarded_;
    }
    in_flight_.pop();
  }
}

std::vector<double> transmit(std::span<const double> input, double dt, const ChannelConfig& cfg,
                             std::uint64_t stream_seed) {
  cfg.validate();
  if (!(dt > 0.0)) throw Error("channel", "sample step must be positive");
  const double required = 100.0 * cfg.rate_hz;
  if (1.0 / dt < required * (1.0 - 1e-12)) {
    std::ostringstream os;
    os << "simulation rate " << 1.0 / dt << " Hz too low; required >= " << required << " Hz";
    throw Error("channel", os.str());
  }
  ChannelEmulator ch(cfg, stream_seed, 1);
  std::vector<double> out(input.size());
  for (std::size_t j = 0; j < input.size(); ++j) {
    ch.advance(static_cast<double>(j) * dt, input.subspan(j, 1));
    out[j] = ch.held(0);
  }
  return out;
}

DelayLog measure_campaign(const ChannelConfig& cfg, std::size_t n_messages, std::uint64_t seed) {
  cfg.validate();
  if (n_messages == 0) throw Error("channel", "measurement campaign needs at least one message");
  Rng rng(seed);
  EmissionSchedule schedule(cfg, rng);
  DelayLog log;
  log.records.reserve(n_messages);
  for (std::size_t i = 0; i < n_messages; ++i) {
    const double sent = schedule.pop(rng);
    log.records.push_back({sent, sent + cfg.delay.sample(rng)});
  }
  return log;
}

double ThroughputHistogram::mass_on(std::initializer_list<int> values) const {
  double m = 0.0;
  for (int v : values) {
    auto it = probability.find(v);
    if (it != probability.end()) m += it->second;
  }
  return m;
}

ThroughputHistogram throughput_stats(std::span<const double> event_times, double t_begin,
                                     double t_end, double window_s) {
  if (!(window_s > 0.0)) throw Error("channel", "throughput window must be positive");
  const auto n_windows = static_cast<std::size_t>(std::floor((t_end - t_begin) / window_s + 1e-9));
  if (n_windows < 10) {
    std::ostringstream os;
    os << "trace too short for throughput statistics: " << (t_end - t_begin)
       << " s covers fewer than 10 windows of " << window_s << " s";
    throw Error("channel", os.str());
  }
  ThroughputHistogram h;
  h.window_s = window_s;
  h.counts.assign(n_windows, 0);
  for (double t : event_times) {
    if (t < t_begin) continue;
    const auto w = static_cast<std::size_t>(std::floor((t - t_begin) / window_s + 1e-9));
    if (w < n_windows) ++h.counts[w];
  }
  std::map<int, int> tally;
  for (int c : h.counts) ++tally[c];
  int best = -1;
  double sum = 0.0;
  for (const auto& [count, n] : tally) {
    h.probability[count] = static_cast<double>(n) / static_cast<double>(n_windows);
    if (n > best) {
      best = n;
      h.mode = count;
    }
  }
  for (int c : h.counts) sum += c;
  h.mean = sum / static_cast<double>(n_windows);
  return h;
}

ThroughputHistogram throughput_stats(const DelayLog& log, double window_s) {
  if (log.records.empty()) throw Error("channel", "empty delay log");
  auto received = log.received_times();
  std::sort(received.begin(), received.end());
  return throughput_stats(received, log.records.front().t_sent, log.records.back().t_sent, window_s);
}

ThroughputHistogram throughput_from_trace(std::span<const double> received, double dt,
                                          double window_s) {
  std::vector<double> changes;
  for (std::size_t j = 1; j < received.size(); ++j) {
    if (received[j] != received[j - 1]) changes.push_back(static_cast<double>(j) * dt);
  }
  if (changes.empty()) throw Error("channel", "received trace never changes");
  return throughput_stats(changes, changes.front(), static_cast<double>(received.size()) * dt,
                          window_s);
}

DelayDistribution histogram_from_delays(std::span<const double> delays,
                                        std::span<const double> edges) {
  if (edges.size() < 2) throw Error("channel", "histogram needs at least one bin");
  std::vector<double> w(edges.size() - 1, 0.0);
  for (double d : delays) {
    auto it = std::upper_bound(edges.begin(), edges.end(), d);
    auto i = static_cast<std::ptrdiff_t>(std::distance(edges.begin(), it)) - 1;
    i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(w.size()) - 1);
    w[static_cast<std::size_t>(i)] += 1.0;
  }
  return DelayDistribution::histogram({edges.begin(), edges.end()}, std::move(w));
}

DelayDistribution fit_histogram(std::span<const double> delays, std::size_t n_bins) {
  if (delays.empty()) throw Error("channel", "no delays to fit");
  if (n_bins == 0) throw Error("channel", "histogram needs at least one bin");
  auto [mn, mx] = std::minmax_element(delays.begin(), delays.end());
  double lo = *mn;
  double hi = *mx;
  if (hi - lo < 1e-9) {
    lo = std::max(0.0, lo - 1e-3);
    hi = hi + 1e-3;
  }
  std::vector<double> edges(n_bins + 1);
  for (std::size_t i = 0; i <= n_bins; ++i) {
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_bins);
  }
  return histogram_from_delays(delays, edges);
}

double nyquist_limit(double f_s) {
  if (!(f_s > 0.0)) throw Error("channel", "sampling rate must be positive for a Nyquist limit");
  return f_s / 2.0;
}

}  // namespace podlab
