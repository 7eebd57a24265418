#pragma once

#include <cstdint>

#include "photonloop/models.hpp"

namespace photonloop::clickstats {

struct IngestDiagnostics {
  std::uint64_t pulses = 0;
  std::uint64_t detector_records = 0;
  std::uint64_t gated_records = 0;
  // Detector records outside every gate (or before the first sync).
  std::uint64_t discarded_records = 0;
  // Records on channels that are neither sync nor detector.
  std::uint64_t foreign_records = 0;
};

struct IngestResult {
  ClickHistogram histogram;
  ClickPatternStats stats;
  std::vector<std::uint64_t> fired_count_hist;
  IngestDiagnostics diagnostics;
};

/// Gates a time-tag stream into per-pulse click patterns. Bin j of a pulse
/// whose sync fired at t covers [t + j*L - g/2, t + j*L + g/2) with L the
/// loop delay and g the gate width. Throws UnsortedStream (message names
/// the first offending record index) and NoSyncRecords.
IngestResult ingest_time_tags(const TimeTagStream& stream, const LoopConfig& config);

/// Poisson-binomial parameter
///   Q_PB = N <(dc)^2> / (<c>(N - <c>) - N^2 sigma^2) - 1.
/// m and sigma^2 are taken over n_bins bins; bins beyond stats.p count as
/// never firing. Throws DegenerateDenominator when the denominator is <= 0.
double q_pb(const ClickPatternStats& stats, int n_bins);

/// Binomial parameter: q_pb without the sigma^2 correction.
double q_b(const ClickPatternStats& stats, int n_bins);

struct BootstrapResult {
  double sigma_qpb = 0.0;
  double sigma_qb = 0.0;
  std::uint64_t valid_qpb = 0;
  std::uint64_t valid_qb = 0;
  // Iterations where the witness was degenerate and got dropped.
  std::uint64_t degenerate_qpb = 0;
  std::uint64_t degenerate_qb = 0;
};

inline constexpr std::uint64_t kDefaultBootstrapIterations = 10'000;

/// Parametric bootstrap of both witnesses: each iteration redraws
/// `trials` pulses from multinomial(c) and recomputes <c> and <(dc)^2>;
/// the bin variance sigma^2 is held at its observed value.
BootstrapResult bootstrap_sigma(const ClickPatternStats& stats, int n_bins, std::uint64_t trials,
                                std::uint64_t iterations = kDefaultBootstrapIterations,
                                std::uint64_t seed = 0, unsigned threads = 1);

}  // namespace photonloop::clickstats
