#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <queue>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace podlab {

// mt19937_64 with a portable [0, 1) mapping so that seeded streams are
// bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

 private:
  std::mt19937_64 eng_;
};

// splitmix64 mix of a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

enum class DelayKind { EmpiricalHistogram, Uniform, TruncatedNormal, PointMass };

std::string to_string(DelayKind k);
DelayKind parse_delay_kind(const std::string& s);

// Probability density of the per-message delay. Support [tau_min, tau_max];
// histogram bins are uniform inside each bin.
class DelayDistribution {
 public:
  static DelayDistribution point_mass(double value_s);
  static DelayDistribution uniform(double lo_s, double hi_s);
  static DelayDistribution truncated_normal(double mu_s, double sigma_s, double lo_s, double hi_s);
  // Weights are normalized to unit mass.
  static DelayDistribution histogram(std::vector<double> edges_s, std::vector<double> weights);
  // Right-skewed 20-bin stand-in for the laboratory measurement: support
  // [0.05, 1.5] s, mean exactly 0.3 s.
  static DelayDistribution lab_default();

  DelayKind kind() const noexcept { return kind_; }
  double tau_min() const noexcept { return lo_; }
  double tau_max() const noexcept { return hi_; }
  double mean_s() const noexcept { return mean_; }
  const std::vector<double>& edges() const noexcept { return edges_; }
  const std::vector<double>& probabilities() const noexcept { return probs_; }
  // Normal parameters (truncated-normal only).
  double mu() const noexcept { return mu_; }
  double sigma() const noexcept { return sigma_; }

  double sample(Rng& rng) const;

 private:
  DelayDistribution() = default;

  DelayKind kind_ = DelayKind::PointMass;
  double lo_ = 0.0;
  double hi_ = 0.0;
  double mean_ = 0.0;
  double mu_ = 0.0;
  double sigma_ = 0.0;
  std::vector<double> edges_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
};

enum class EmissionMode { JitteredPeriodic, Poisson };

struct ChannelConfig {
  DelayDistribution delay = DelayDistribution::lab_default();
  double rate_hz = 3.5;
  EmissionMode emission = EmissionMode::JitteredPeriodic;
  double jitter_fraction = 0.2;  // +/- fraction of the period, uniform
  double quantization_step = 0.0;  // 0 disables
  std::uint64_t seed = 1;

  void validate() const;
};

struct DelayLog {
  struct Record {
    double t_sent;
    double t_received;
  };
  std::vector<Record> records;

  std::vector<double> delays() const;
  std::vector<double> sent_times() const;
  std::vector<double> received_times() const;
};

void write_delay_log_csv(std::ostream& os, const DelayLog& log);
DelayLog read_delay_log_csv(std::istream& is);

// Message emission instants of one channel.
class EmissionSchedule {
 public:
  EmissionSchedule(const ChannelConfig& cfg, Rng& rng);
  double peek() const noexcept { return next_; }
  double pop(Rng& rng);

 private:
  EmissionMode mode_;
  double period_;
  double jitter_;
  double phase_ = 0.0;
  std::uint64_t k_ = 0;
  double next_ = 0.0;
};

// Event-driven emulator of one downlink (one CIG unit). Owns its RNG stream.
// Each message carries `width` values; the receiver holds the value of the
// freshest applied message and discards arrivals older than it.
class ChannelEmulator {
 public:
  ChannelEmulator(const ChannelConfig& cfg, std::uint64_t stream_seed, std::size_t width = 1);

  // Advances to time t. Messages due in (previous t, t] carry `sender`.
  void advance(double t, std::span<const double> sender);

  std::span<const double> held() const noexcept { return held_; }
  double held(std::size_t i) const { return held_.at(i); }
  const DelayLog& log() const noexcept { return log_; }
  // Arrival instants of applied (non-discarded) messages.
  const std::vector<double>& applied_times() const noexcept { return applied_; }
  std::size_t discarded() const noexcept { return discarded_; }

 private:
  struct InFlight {
    double arrival;
    double sent;
    std::uint64_t seq;
    std::vector<double> values;
  };
  struct Later {
    bool operator()(const InFlight& a, const InFlight& b) const {
      return a.arrival != b.arrival ? a.arrival > b.arrival : a.seq > b.seq;
    }
  };

  ChannelConfig cfg_;
  Rng rng_;
  EmissionSchedule schedule_;
  std::priority_queue<InFlight, std::vector<InFlight>, Later> in_flight_;
  std::vector<double> held_;
  double last_applied_sent_ = -1.0;
  std::uint64_t seq_ = 0;
  DelayLog log_;
  std::vector<double> applied_;
  std::size_t discarded_ = 0;
};

double sample_delay(const DelayDistribution& dist, Rng& rng);

// Passes a uniformly sampled signal through one channel instance.
std::vector<double> transmit(std::span<const double> input, double dt, const ChannelConfig& cfg,
                             std::uint64_t stream_seed);

DelayLog measure_campaign(const ChannelConfig& cfg, std::size_t n_messages, std::uint64_t seed);

struct ThroughputHistogram {
  double window_s = 1.0;
  std::vector<int> counts;              // per window
  std::map<int, double> probability;    // count -> fraction of windows
  int mode = 0;
  double mean = 0.0;

  double mass_on(std::initializer_list<int> values) const;
};

// Messages per window for events inside [t_begin, t_end).
ThroughputHistogram throughput_stats(std::span<const double> event_times, double t_begin,
                                     double t_end, double window_s = 1.0);
// Counts message arrivals of a delay log.
ThroughputHistogram throughput_stats(const DelayLog& log, double window_s = 1.0);
// Counts value changes of a received (held) trace sampled every dt.
ThroughputHistogram throughput_from_trace(std::span<const double> received, double dt,
                                          double window_s = 1.0);

// Normalized histogram of delays over fixed bin edges (out-of-range delays
// are clamped into the end bins).
DelayDistribution histogram_from_delays(std::span<const double> delays,
                                        std::span<const double> edges);
// Equal-width histogram over the observed range.
DelayDistribution fit_histogram(std::span<const double> delays, std::size_t n_bins = 20);

double nyquist_limit(double f_s);

}  // namespace podlab
