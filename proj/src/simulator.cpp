#include "photonloop/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <queue>
#include <random>
#include <string>
#include <thread>

namespace photonloop::sim {

void ArtifactModel::validate(const LoopConfig& config) const {
  if (!enabled) return;
  if (!(back_reflection_prob >= 0.0 && back_reflection_prob < 1.0)) {
    throw ValidationError("back_reflection_prob", "back_reflection_prob: must lie in [0, 1)");
  }
  if (reflection_delay_ps <= 0) {
    throw ValidationError("reflection_delay_ps", "reflection_delay_ps: must be positive");
  }
  if (reflection_delay_ps % config.loop_delay_ps == 0) {
    throw ValidationError("reflection_delay_ps",
                          "reflection_delay_ps: must not be a multiple of loop_delay_ps");
  }
  if (dead_time_ps < 0) throw ValidationError("dead_time_ps", "dead_time_ps: must be non-negative");
}

namespace {

// Below this many circulating photons, photons are routed one at a time.
constexpr std::uint64_t kPerPhotonThreshold = 48;

std::uint64_t binomial(StreamRng& rng, std::uint64_t n, double p) {
  if (n == 0 || p <= 0.0) return 0;
  if (p >= 1.0) return n;
  return std::binomial_distribution<std::uint64_t>(n, p)(rng);
}

// Precomputed per-round probabilities for photons inside the loop.
class Router {
 public:
  explicit Router(const LoopConfig& c)
      : n_bins_(c.n_bins),
        passive_(c.mode == LoopMode::Passive),
        first_bin_prob_(c.R),
        exit_(c.eta * (1.0 - c.R)),
        stay_(c.eta * c.R),
        nu_(c.nu) {
    const double stop = 1.0 - stay_;
    // Given that a photon stops circulating this round, it exits (rather
    // than being lost) with this probability.
    exit_given_stop_ = stop > 0.0 ? std::min(1.0, exit_ / stop) : 0.0;
    stay_given_not_exit_ = exit_ < 1.0 ? std::min(1.0, stay_ / (1.0 - exit_)) : 0.0;
  }

  int n_bins() const { return n_bins_; }

  // Marks fired[j - 1] for every bin receiving a photon or a dark count.
  void route(std::uint64_t n, StreamRng& rng, std::vector<std::uint8_t>& fired) const {
    std::fill(fired.begin(), fired.end(), std::uint8_t{0});
    std::uint64_t circulating = n;
    int j = 1;
    if (passive_) {
      const std::uint64_t direct = binomial(rng, n, first_bin_prob_);
      if (direct > 0) fired[0] = 1;
      circulating = n - direct;
      j = 2;
    }

    while (circulating > kPerPhotonThreshold && j <= n_bins_) {
      const std::uint64_t out = binomial(rng, circulating, exit_);
      if (out > 0) fired[static_cast<std::size_t>(j - 1)] = 1;
      circulating = binomial(rng, circulating - out, stay_given_not_exit_);
      ++j;
    }

    if (circulating > 0 && j <= n_bins_ && stay_ < 1.0 && exit_given_stop_ > 0.0) {
      std::geometric_distribution<std::int64_t> rounds(1.0 - stay_);
      for (std::uint64_t k = 0; k < circulating; ++k) {
        const std::int64_t bin = j + rounds(rng);
        const bool exits = exit_given_stop_ >= 1.0 || rng.uniform() < exit_given_stop_;
        if (exits && bin <= n_bins_) fired[static_cast<std::size_t>(bin - 1)] = 1;
      }
    }

    if (nu_ > 0.0) {
      std::geometric_distribution<std::int64_t> gap(nu_);
      for (std::int64_t b = 1 + gap(rng); b <= n_bins_; b += 1 + gap(rng)) {
        fired[static_cast<std::size_t>(b - 1)] = 1;
      }
    }
  }

 private:
  int n_bins_;
  bool passive_;
  double first_bin_prob_;
  double exit_;
  double stay_;
  double nu_;
  double exit_given_stop_ = 0.0;
  double stay_given_not_exit_ = 0.0;
};

std::uint64_t draw_guarded(const LoopConfig& config, const PhotonSource& source, StreamRng& rng) {
  const std::uint64_t n = sample_photon_number(source, rng);
  if (config.n_max_guard && n > *config.n_max_guard) {
    throw Error(ErrorCode::GuardExceeded, "pulse carries " + std::to_string(n) +
                                              " photons, above the latching guard of " +
                                              std::to_string(*config.n_max_guard));
  }
  return n;
}

ClickPattern to_pattern(const std::vector<std::uint8_t>& fired) {
  ClickPattern out;
  for (std::size_t i = 0; i < fired.size(); ++i) {
    if (fired[i]) out.push_back(static_cast<int>(i + 1));
  }
  return out;
}

constexpr std::uint64_t kRoutingStream = 0;
constexpr std::uint64_t kArtifactStream = 1;

}  // namespace

ClickPattern simulate_pulse(const LoopConfig& config, const PhotonSource& source, StreamRng& rng) {
  config.validate();
  const Router router(config);
  std::vector<std::uint8_t> fired(static_cast<std::size_t>(config.n_bins));
  router.route(draw_guarded(config, source, rng), rng, fired);
  return to_pattern(fired);
}

EnsembleResult simulate_ensemble(const LoopConfig& config, const PhotonSource& source,
                                 const SimOptions& opts) {
  config.validate();
  if (opts.n_pulses < 1) throw ValidationError("n_pulses", "n_pulses: must be at least 1");
  const Router router(config);
  const auto n_bins = static_cast<std::size_t>(config.n_bins);
  const std::uint64_t total = opts.n_pulses;

  struct Partial {
    std::vector<std::uint64_t> clicks;
    std::vector<std::uint64_t> fired_counts;
    std::exception_ptr error;
  };

  EnsembleResult result;
  if (opts.record_patterns) result.patterns.resize(total);

  auto run_range = [&](std::uint64_t lo, std::uint64_t hi, Partial& part) {
    part.clicks.assign(n_bins, 0);
    part.fired_counts.assign(n_bins + 1, 0);
    std::vector<std::uint8_t> fired(n_bins);
    try {
      for (std::uint64_t i = lo; i < hi; ++i) {
        StreamRng rng(opts.seed, i, kRoutingStream);
        router.route(draw_guarded(config, source, rng), rng, fired);
        std::size_t k = 0;
        for (std::size_t b = 0; b < n_bins; ++b) {
          if (fired[b]) {
            ++part.clicks[b];
            ++k;
          }
        }
        ++part.fired_counts[k];
        if (opts.record_patterns) result.patterns[i] = to_pattern(fired);
      }
    } catch (...) {
      part.error = std::current_exception();
    }
  };

  const std::uint64_t workers =
      std::clamp<std::uint64_t>(opts.threads == 0 ? 1 : opts.threads, 1, total);
  std::vector<Partial> parts(workers);
  if (workers == 1) {
    run_range(0, total, parts[0]);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::uint64_t w = 0; w < workers; ++w) {
      const std::uint64_t lo = total * w / workers;
      const std::uint64_t hi = total * (w + 1) / workers;
      pool.emplace_back(run_range, lo, hi, std::ref(parts[w]));
    }
    for (auto& t : pool) t.join();
  }

  std::vector<std::uint64_t> clicks(n_bins, 0);
  result.fired_count_hist.assign(n_bins + 1, 0);
  for (const auto& part : parts) {
    if (part.error) std::rethrow_exception(part.error);
    for (std::size_t b = 0; b < n_bins; ++b) clicks[b] += part.clicks[b];
    for (std::size_t k = 0; k <= n_bins; ++k) result.fired_count_hist[k] += part.fired_counts[k];
  }
  result.histogram = ClickHistogram::from_counts(total, std::move(clicks));
  result.stats = ClickPatternStats::from_counts(result.fired_count_hist, total, result.histogram.p_hat);
  return result;
}

TimeTagStream emit_time_tags(const LoopConfig& config, const PhotonSource& source,
                             const SimOptions& opts, std::int64_t rep_period_ps) {
  config.validate();
  if (rep_period_ps <= static_cast<std::int64_t>(config.n_bins) * config.loop_delay_ps) {
    throw ValidationError("rep_period_ps", "rep_period_ps: must exceed n_bins * loop_delay_ps");
  }
  const bool artifacts = opts.artifact && opts.artifact->enabled;
  if (artifacts) opts.artifact->validate(config);

  TimeTagStream stream;
  stream.sync_period_ps = rep_period_ps;
  const Router router(config);
  std::vector<std::uint8_t> fired(static_cast<std::size_t>(config.n_bins));

  if (!artifacts) {
    for (std::uint64_t i = 0; i < opts.n_pulses; ++i) {
      const std::int64_t t0 = static_cast<std::int64_t>(i) * rep_period_ps;
      StreamRng rng(opts.seed, i, kRoutingStream);
      router.route(draw_guarded(config, source, rng), rng, fired);
      stream.records.push_back({stream.sync_channel, t0});
      for (std::size_t b = 0; b < fired.size(); ++b) {
        if (fired[b]) {
          stream.records.push_back(
              {stream.detector_channel, t0 + static_cast<std::int64_t>(b + 1) * config.loop_delay_ps});
        }
      }
    }
    return stream;
  }

  // Detector events are replayed in time order so that dead time spans
  // pulse boundaries and spurious reflections.
  const ArtifactModel& art = *opts.artifact;
  struct Event {
    std::int64_t time;
    bool photon;
    bool operator>(const Event& o) const { return time > o.time; }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<>> pending;
  std::optional<std::int64_t> last_record;
  StreamRng art_rng(opts.seed, 0, kArtifactStream);

  auto drain_until = [&](std::int64_t limit) {
    while (!pending.empty() && pending.top().time < limit) {
      const Event ev = pending.top();
      pending.pop();
      if (last_record && ev.time < *last_record + art.dead_time_ps) continue;
      stream.records.push_back({stream.detector_channel, ev.time});
      last_record = ev.time;
      if (ev.photon && art_rng.uniform() < art.back_reflection_prob) {
        pending.push({ev.time + art.reflection_delay_ps, false});
      }
    }
  };

  for (std::uint64_t i = 0; i < opts.n_pulses; ++i) {
    const std::int64_t t0 = static_cast<std::int64_t>(i) * rep_period_ps;
    drain_until(t0);
    StreamRng rng(opts.seed, i, kRoutingStream);
    router.route(draw_guarded(config, source, rng), rng, fired);
    stream.records.push_back({stream.sync_channel, t0});
    for (std::size_t b = 0; b < fired.size(); ++b) {
      if (fired[b]) pending.push({t0 + static_cast<std::int64_t>(b + 1) * config.loop_delay_ps, true});
    }
  }
  drain_until(std::numeric_limits<std::int64_t>::max());
  std::stable_sort(stream.records.begin(), stream.records.end(),
                   [](const TimeTag& a, const TimeTag& b) { return a.time_ps < b.time_ps; });
  return stream;
}

}  // namespace photonloop::sim
