#include "photonloop/clickstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <thread>

namespace photonloop::clickstats {

IngestResult ingest_time_tags(const TimeTagStream& stream, const LoopConfig& config) {
  config.validate();
  const auto n_bins = static_cast<std::size_t>(config.n_bins);
  const std::int64_t delay = config.loop_delay_ps;
  const std::int64_t gate = config.gate_width_ps;

  IngestResult out;
  IngestDiagnostics& diag = out.diagnostics;
  std::vector<std::uint64_t> clicks(n_bins, 0);
  out.fired_count_hist.assign(n_bins + 1, 0);

  std::vector<std::uint8_t> fired(n_bins, 0);
  std::size_t fired_in_pulse = 0;
  bool in_pulse = false;
  std::int64_t sync_time = 0;

  auto close_pulse = [&] {
    if (!in_pulse) return;
    ++out.fired_count_hist[fired_in_pulse];
    std::fill(fired.begin(), fired.end(), std::uint8_t{0});
    fired_in_pulse = 0;
  };

  for (std::size_t i = 0; i < stream.records.size(); ++i) {
    const TimeTag& rec = stream.records[i];
    if (i > 0 && rec.time_ps < stream.records[i - 1].time_ps) {
      throw Error(ErrorCode::UnsortedStream,
                  "time tags are not sorted: record " + std::to_string(i) + " (time " +
                      std::to_string(rec.time_ps) + " ps) precedes record " +
                      std::to_string(i - 1));
    }
    if (rec.channel == stream.sync_channel) {
      close_pulse();
      in_pulse = true;
      sync_time = rec.time_ps;
      ++diag.pulses;
      continue;
    }
    if (rec.channel != stream.detector_channel) {
      ++diag.foreign_records;
      continue;
    }
    ++diag.detector_records;
    if (!in_pulse) {
      ++diag.discarded_records;
      continue;
    }
    // 2*offset in [2jL - g, 2jL + g)  <=>  record inside gate j.
    const std::int64_t twice = 2 * (rec.time_ps - sync_time);
    const std::int64_t j = (twice + gate) / (2 * delay);
    if (j < 1 || j > static_cast<std::int64_t>(n_bins) || twice >= 2 * j * delay + gate) {
      ++diag.discarded_records;
      continue;
    }
    ++diag.gated_records;
    auto& slot = fired[static_cast<std::size_t>(j - 1)];
    if (!slot) {
      slot = 1;
      ++clicks[static_cast<std::size_t>(j - 1)];
      ++fired_in_pulse;
    }
  }
  close_pulse();

  if (diag.pulses == 0) throw Error(ErrorCode::NoSyncRecords, "time-tag stream has no sync records");
  out.histogram = ClickHistogram::from_counts(diag.pulses, std::move(clicks));
  out.stats = ClickPatternStats::from_counts(out.fired_count_hist, diag.pulses, out.histogram.p_hat);
  return out;
}

namespace {

struct Moments {
  double m = 0.0;
  double sigma2 = 0.0;
};

Moments bin_moments(const std::vector<double>& p, int n_bins) {
  if (n_bins < 1) throw ValidationError("n_bins", "n_bins: must be at least 1");
  if (static_cast<std::size_t>(n_bins) < p.size()) {
    throw ValidationError("n_bins", "n_bins: smaller than the number of recorded bins (" +
                                        std::to_string(p.size()) + ")");
  }
  const double n = n_bins;
  Moments mo;
  for (double pj : p) mo.m += pj;
  mo.m /= n;
  for (double pj : p) mo.sigma2 += (pj - mo.m) * (pj - mo.m);
  mo.sigma2 += (n - static_cast<double>(p.size())) * mo.m * mo.m;
  mo.sigma2 /= n;
  return mo;
}

double witness(double mean_c, double var_c, double sigma2, int n_bins) {
  const double n = n_bins;
  const double denom = mean_c * (n - mean_c) - n * n * sigma2;
  if (!(denom > 0.0)) {
    throw Error(ErrorCode::DegenerateDenominator,
                "witness denominator <c>(N-<c>) - N^2 sigma^2 is not positive");
  }
  return n * var_c / denom - 1.0;
}

}  // namespace

double q_pb(const ClickPatternStats& stats, int n_bins) {
  const Moments mo = bin_moments(stats.p, n_bins);
  return witness(stats.mean_c, stats.var_c, mo.sigma2, n_bins);
}

double q_b(const ClickPatternStats& stats, int n_bins) {
  if (n_bins < 1) throw ValidationError("n_bins", "n_bins: must be at least 1");
  return witness(stats.mean_c, stats.var_c, 0.0, n_bins);
}

BootstrapResult bootstrap_sigma(const ClickPatternStats& stats, int n_bins, std::uint64_t trials,
                                std::uint64_t iterations, std::uint64_t seed, unsigned threads) {
  if (iterations < 1) throw ValidationError("iterations", "iterations: must be at least 1");
  if (trials < 1) throw ValidationError("trials", "trials: must be at least 1");
  const Moments mo = bin_moments(stats.p, n_bins);
  const std::size_t n_cat = stats.c.size();

  // Per-iteration witnesses; NaN marks a degenerate draw.
  std::vector<double> qpb(iterations);
  std::vector<double> qb(iterations);

  auto run = [&](std::uint64_t lo, std::uint64_t hi) {
    std::vector<std::uint64_t> counts(n_cat);
    for (std::uint64_t it = lo; it < hi; ++it) {
      StreamRng rng(seed, it);
      // Multinomial draw by sequential conditional binomials.
      std::uint64_t left = trials;
      double mass_left = 1.0;
      for (std::size_t k = 0; k < n_cat; ++k) {
        std::uint64_t draw = 0;
        if (left > 0 && stats.c[k] > 0.0) {
          const double prob = k + 1 == n_cat ? 1.0 : std::min(1.0, stats.c[k] / mass_left);
          draw = prob >= 1.0 ? left : std::binomial_distribution<std::uint64_t>(left, prob)(rng);
        }
        counts[k] = draw;
        left -= draw;
        mass_left -= stats.c[k];
        if (mass_left <= 0.0) mass_left = 0.0;
      }
      const double m = static_cast<double>(trials);
      double mean = 0.0;
      for (std::size_t k = 0; k < n_cat; ++k) mean += static_cast<double>(k) * counts[k];
      mean /= m;
      double var = 0.0;
      for (std::size_t k = 0; k < n_cat; ++k) {
        const double d = static_cast<double>(k) - mean;
        var += d * d * counts[k];
      }
      var /= m;
      const double nan = std::numeric_limits<double>::quiet_NaN();
      try {
        qpb[it] = witness(mean, var, mo.sigma2, n_bins);
      } catch (const Error&) {
        qpb[it] = nan;
      }
      try {
        qb[it] = witness(mean, var, 0.0, n_bins);
      } catch (const Error&) {
        qb[it] = nan;
      }
    }
  };

  const std::uint64_t workers = std::clamp<std::uint64_t>(threads == 0 ? 1 : threads, 1, iterations);
  if (workers == 1) {
    run(0, iterations);
  } else {
    std::vector<std::thread> pool;
    for (std::uint64_t w = 0; w < workers; ++w) {
      pool.emplace_back(run, iterations * w / workers, iterations * (w + 1) / workers);
    }
    for (auto& t : pool) t.join();
  }

  auto sample_sd = [](const std::vector<double>& xs, std::uint64_t& valid, std::uint64_t& bad) {
    double sum = 0.0;
    for (double x : xs) {
      if (std::isnan(x)) {
        ++bad;
      } else {
        ++valid;
        sum += x;
      }
    }
    if (valid == 0) return std::numeric_limits<double>::quiet_NaN();
    if (valid == 1) return 0.0;
    const double mean = sum / static_cast<double>(valid);
    double ss = 0.0;
    for (double x : xs) {
      if (!std::isnan(x)) ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / static_cast<double>(valid - 1));
  };

  BootstrapResult res;
  res.sigma_qpb = sample_sd(qpb, res.valid_qpb, res.degenerate_qpb);
  res.sigma_qb = sample_sd(qb, res.valid_qb, res.degenerate_qb);
  if (res.valid_qpb == 0 && res.valid_qb == 0) {
    throw Error(ErrorCode::AllDegenerate, "every bootstrap iteration gave a degenerate witness");
  }
  return res;
}

}  // namespace photonloop::clickstats
