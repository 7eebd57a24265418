#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "photonloop/models.hpp"
#include "photonloop/rng.hpp"

namespace photonloop::sim {

/// Back-reflection and dead-time artifacts of a real detector. Every
/// recorded photon detection spawns, with probability back_reflection_prob,
/// a spurious record reflection_delay_ps later; any record blinds the
/// detector for dead_time_ps.
struct ArtifactModel {
  double back_reflection_prob = 0.0;
  std::int64_t reflection_delay_ps = 0;
  std::int64_t dead_time_ps = 0;
  bool enabled = false;

  void validate(const LoopConfig& config) const;
};

struct SimOptions {
  std::uint64_t n_pulses = 1;
  std::uint64_t seed = 0;
  bool record_patterns = false;
  std::optional<ArtifactModel> artifact;
  // Worker threads for simulate_ensemble; results do not depend on it.
  unsigned threads = 1;
};

// Fired bins of one pulse, ascending, 1-based.
using ClickPattern = std::vector<int>;

/// Simulates one pulse: draws a photon number, routes every photon through
/// the loop independently, and adds Bernoulli(nu) dark counts per bin.
/// Photons still circulating after bin N are lost.
ClickPattern simulate_pulse(const LoopConfig& config, const PhotonSource& source, StreamRng& rng);

struct EnsembleResult {
  ClickHistogram histogram;
  ClickPatternStats stats;
  // fired_count_hist[k]: pulses with exactly k fired bins.
  std::vector<std::uint64_t> fired_count_hist;
  // Filled only when SimOptions::record_patterns is set.
  std::vector<ClickPattern> patterns;
};

/// Aggregates opts.n_pulses pulses. Pulse i draws from StreamRng(seed, i),
/// so the output is identical for any thread count.
EnsembleResult simulate_ensemble(const LoopConfig& config, const PhotonSource& source,
                                 const SimOptions& opts);

/// Time-tag stream of the same pulses simulate_ensemble would draw: a sync
/// record at i * rep_period_ps and one detector record per fired bin at
/// sync + j * loop_delay_ps, plus artifacts when enabled.
TimeTagStream emit_time_tags(const LoopConfig& config, const PhotonSource& source,
                             const SimOptions& opts, std::int64_t rep_period_ps);

}  // namespace photonloop::sim
