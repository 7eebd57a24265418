#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "photonloop/analytic.hpp"
#include "photonloop/calibration.hpp"
#include "photonloop/simulator.hpp"

using namespace photonloop;
using namespace photonloop::calibration;

namespace {

LoopConfig loop(LoopMode mode, double R, double eta, double nu = 0.0, int n_bins = 130) {
  LoopConfig c;
  c.mode = mode;
  c.R = R;
  c.eta = eta;
  c.nu = nu;
  c.n_bins = n_bins;
  return c;
}

LoopConfig reference_loop() {
  auto c = loop(LoopMode::Passive, 0.91370, 0.8615, 1.2e-7);
  c.sigma_R = 5e-5;
  c.sigma_eta = 3e-4;
  c.sigma_nu = 2e-9;
  return c;
}

// Analytic coherent click probability for a given total output photon number.
double p_for_output(const LoopConfig& c, double n_out, int j) {
  return analytic::click_prob_closed(c, PhotonSource::coherent(analytic::invert_total_output(c, n_out)), j);
}

double five_point(const std::function<double(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidArgument;
}

// Histogram whose p_hat equals the analytic curve to ~1e-15.
ClickHistogram exact_histogram(const LoopConfig& c, const PhotonSource& s) {
  const std::uint64_t M = 1'000'000'000'000'000ULL;
  std::vector<std::uint64_t> clicks(static_cast<std::size_t>(c.n_bins));
  for (int j = 1; j <= c.n_bins; ++j) {
    clicks[j - 1] = static_cast<std::uint64_t>(std::llround(analytic::click_prob_closed(c, s, j) * 1e15));
  }
  return ClickHistogram::from_counts(M, clicks);
}

FitResult known_fit(const LoopConfig& c) {
  FitResult f;
  f.R_hat = c.R;
  f.eta_hat = c.eta;
  f.sigma_R = c.sigma_R;
  f.sigma_eta = c.sigma_eta;
  f.product = c.R * c.eta;
  f.individually_identifiable = true;
  return f;
}

}  // namespace

TEST(PowerToPhotons, ReferenceReadingAndLinearity) {
  const double n = power_to_photons(1.61e-9, 50e3, 1550e-9);
  EXPECT_NEAR(n / 251000.0, 1.0, 0.01);
  EXPECT_NEAR(n, 1.61e-9 * 1550e-9 / (kPlanck * kSpeedOfLight * 50e3), 1e-9);
  EXPECT_EQ(power_to_photons(0.0, 50e3, 1550e-9), 0.0);
  EXPECT_NEAR(power_to_photons(1.61e-9, 100e3, 1550e-9), n / 2, 1e-9);
  EXPECT_THROW(power_to_photons(1e-9, 0.0, 1550e-9), ValidationError);
}

TEST(EstimateNout, InvertsCoherentClickProbability) {
  for (LoopMode m : {LoopMode::Active, LoopMode::Passive}) {
    for (double nu : {0.0, 1e-3}) {
      const auto c = loop(m, 0.9137, 0.8615, nu);
      for (double n_out : {0.5, 3.0, 8.0}) {
        for (int j : {1, 2, 30}) {
          const double p = p_for_output(c, n_out, j);
          EXPECT_NEAR(estimate_nout_per_bin(c, p, j) / n_out, 1.0, 1e-10) << to_string(m) << " j=" << j;
        }
      }
    }
  }
}

TEST(EstimateNout, NoiseFloorAndErrors) {
  const auto c = loop(LoopMode::Passive, 0.5, 0.9, 1e-3);
  EXPECT_EQ(estimate_nout_per_bin(c, 1e-3, 4), 0.0);
  EXPECT_EQ(code_of([&] { estimate_nout_per_bin(c, 1.0, 4); }), ErrorCode::SaturatedBin);
  EXPECT_EQ(code_of([&] { estimate_nout_per_bin(c, 5e-4, 4); }), ErrorCode::BelowNoise);
}

TEST(PropagateSigma, ZeroInputsGiveZero) {
  auto c = loop(LoopMode::Passive, 0.9, 0.85, 1e-4);
  EXPECT_EQ(propagate_sigma_nout(c, 0.3, 0.0, 5).total, 0.0);
}

TEST(PropagateSigma, ProbabilityTermMatchesFiniteDifference) {
  for (LoopMode m : {LoopMode::Active, LoopMode::Passive}) {
    const auto c = loop(m, 0.9137, 0.8615, 1e-4);
    for (int j : {1, 2, 17}) {
      for (double p : {0.01, 0.4, 0.97}) {
        const double sigma_p = 1e-3;
        const double d = five_point([&](double x) { return estimate_nout_per_bin(c, x, j); }, p, 1e-6);
        EXPECT_NEAR(propagate_sigma_nout(c, p, sigma_p, j).total / (std::abs(d) * sigma_p), 1.0, 1e-6);
      }
    }
  }
}

TEST(PropagateSigma, EveryTermMatchesFiniteDifferencesOnAllBranches) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 60; ++trial) {
    const LoopMode m = trial % 2 ? LoopMode::Active : LoopMode::Passive;
    auto c = loop(m, u(gen), u(gen), 1e-4 * u(gen));
    c.sigma_R = 1e-4;
    c.sigma_eta = 2e-4;
    c.sigma_nu = 1e-6;
    const int j = 1 + trial % 25;
    const double p = c.nu + (1 - c.nu) * u(gen);
    const double n = estimate_nout_per_bin(c, p, j);
    auto with = [&](double LoopConfig::*field) {
      return [&, field](double x) {
        LoopConfig cc = c;
        cc.*field = x;
        return estimate_nout_per_bin(cc, p, j);
      };
    };
    const auto s = propagate_sigma_nout(c, p, 2e-4, j);
    const double dR = five_point(with(&LoopConfig::R), c.R, 1e-5);
    const double dEta = five_point(with(&LoopConfig::eta), c.eta, 1e-5);
    const double dNu = five_point(with(&LoopConfig::nu), c.nu, 1e-8);
    const double dP = five_point([&](double x) { return estimate_nout_per_bin(c, x, j); }, p, 1e-7);
    EXPECT_NEAR(s.R, c.sigma_R * std::abs(dR), 1e-6 * s.R + 1e-12 * n);
    EXPECT_NEAR(s.eta, c.sigma_eta * std::abs(dEta), 1e-6 * s.eta + 1e-12 * n);
    EXPECT_NEAR(s.nu, c.sigma_nu * std::abs(dNu), 1e-6 * s.nu + 1e-12 * n);
    EXPECT_NEAR(s.p, 2e-4 * std::abs(dP), 1e-6 * s.p);
    EXPECT_NEAR(s.total, std::sqrt(s.p * s.p + s.R * s.R + s.eta * s.eta + s.nu * s.nu), 1e-12 * s.total);
  }
}

TEST(PropagateSigma, PrintedBracketsMatchNumericDerivatives) {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> uR(0.05, 0.95), uEta(0.05, 0.99), uP(0.02, 0.98);
  int checked = 0;
  while (checked < 200) {
    const auto c = loop(LoopMode::Passive, uR(gen), uEta(gen), 1e-4);
    if (std::abs(c.R - 0.5) < 0.02) continue;
    const int j = 2 + checked % 40;
    const double p = uP(gen);
    const auto closed = relative_gradient_passive(c, p, j);
    const auto numeric = relative_gradient_numeric(c, p, j);
    ASSERT_NEAR(closed.R / numeric.R, 1.0, 1e-6) << c.R << " " << c.eta << " " << j;
    ASSERT_NEAR(closed.eta / numeric.eta, 1.0, 1e-6);
    ASSERT_DOUBLE_EQ(closed.p, numeric.p);
    ASSERT_DOUBLE_EQ(closed.nu, numeric.nu);
    ++checked;
  }
}

TEST(PropagateSigma, HalfReflectivityUsesContinuousGradient) {
  auto c = loop(LoopMode::Passive, 0.5, 0.9, 1e-4);
  c.sigma_R = 1e-4;
  const double p = 0.4;
  const int j = 6;
  const auto s = propagate_sigma_nout(c, p, 0.0, j);
  ASSERT_TRUE(std::isfinite(s.R));
  const double n = estimate_nout_per_bin(c, p, j);
  // The printed bracket is singular exactly at 1/2; its neighbours bracket the limit.
  auto closed_at = [&](double R) {
    auto cc = c;
    cc.R = R;
    return relative_gradient_passive(cc, p, j).R;
  };
  const double limit = 0.5 * (closed_at(0.49) + closed_at(0.51));
  EXPECT_NEAR(s.R / (c.sigma_R * n), std::abs(limit), 1e-3 * std::abs(limit));
}

TEST(PropagateSigma, BoundaryEfficiencyGivesFiniteTerms) {
  auto c = loop(LoopMode::Active, 0.81, 1.0, 1e-6);
  c.sigma_R = 1e-5;
  c.sigma_eta = 1e-5;
  const auto s = propagate_sigma_nout(c, 0.3, 1e-4, 12);
  EXPECT_TRUE(std::isfinite(s.total));
  const auto g = relative_gradient_numeric(c, 0.3, 12);
  // Active estimator depends on R * eta only, so both partials agree up to the factor R / eta.
  EXPECT_NEAR(g.eta, g.R * c.R / c.eta, 1e-6 * std::abs(g.eta));
}

TEST(PropagateSigma, EfficiencyDominatesMidBinsAndCountingLateBins) {
  const auto c = reference_loop();
  const double M = 7.5e6;
  auto term = [&](int j) {
    const double p = p_for_output(c, 208011, j);
    return propagate_sigma_nout(c, p, std::sqrt(p * (1 - p) / M), j);
  };
  const auto mid = term(40);
  EXPECT_GT(mid.eta, mid.p);
  EXPECT_GT(mid.eta, mid.R);
  EXPECT_GT(mid.eta, mid.nu);
  const auto late = term(85);
  EXPECT_GT(late.p, late.eta);
  EXPECT_GT(late.p, late.R);
}

TEST(WeightedMean, EqualEstimatesAndSingleEstimate) {
  const std::vector<std::pair<double, double>> two = {{5.0, 2.0}, {5.0, 2.0}};
  const auto w = weighted_mean_nout(std::span(two), 1);
  EXPECT_DOUBLE_EQ(w.mean, 5.0);
  EXPECT_NEAR(w.sigma, 2.0 / std::sqrt(2.0), 1e-15);
  const std::vector<std::pair<double, double>> one = {{7.0, 0.5}};
  const auto s = weighted_mean_nout(std::span(one), 1);
  EXPECT_DOUBLE_EQ(s.mean, 7.0);
  EXPECT_DOUBLE_EQ(s.sigma, 0.5);
}

TEST(WeightedMean, StaysInHullWithSmallerSigma) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> ux(100, 200), us(0.5, 20);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<double, double>> est(2 + trial % 10);
    double lo = 1e300, hi = -1e300, smin = 1e300;
    for (auto& e : est) {
      e = {ux(gen), us(gen)};
      lo = std::min(lo, e.first);
      hi = std::max(hi, e.first);
      smin = std::min(smin, e.second);
    }
    const auto w = weighted_mean_nout(std::span(est), 1);
    EXPECT_GE(w.mean, lo - 1e-9);
    EXPECT_LE(w.mean, hi + 1e-9);
    EXPECT_LE(w.sigma, smin);
  }
}

TEST(WeightedMean, RespectsFirstBinAndValidity) {
  std::vector<BinEstimate> est(4);
  for (int i = 0; i < 4; ++i) {
    est[i].j = i + 1;
    est[i].estimate = 10.0 * (i + 1);
    est[i].sigma.total = 1.0;
  }
  est[3].status = ErrorCode::SaturatedBin;
  const auto w = weighted_mean_nout(std::span<const BinEstimate>(est), 2);
  EXPECT_DOUBLE_EQ(w.mean, 25.0);
  EXPECT_EQ(w.bins_used, 2u);
  EXPECT_EQ(code_of([&] { weighted_mean_nout(std::span<const BinEstimate>(est), 4); }), ErrorCode::NoValidBins);
}

TEST(SelectJMin, SkipsBiasedEarlyBins) {
  std::vector<BinEstimate> est;
  for (int j = 1; j <= 30; ++j) {
    BinEstimate e;
    e.j = j;
    e.estimate = j <= 5 ? 90.0 : 100.0 + (j % 2 ? 0.5 : -0.5);
    e.sigma.total = 1.0;
    est.push_back(e);
  }
  EXPECT_EQ(select_j_min(est), 6);
}

TEST(HeadlineFormulas, EfficiencyAndDynamicRange) {
  EXPECT_NEAR(system_detection_efficiency(208011, 0, 251000), 0.8287, 1e-4);
  EXPECT_DOUBLE_EQ(system_detection_efficiency(5, 0, 5), 1.0);
  EXPECT_DOUBLE_EQ(system_detection_efficiency(5, 5, 7), 0.0);
  EXPECT_NEAR(dynamic_range_db(2.5e5, 1.2e-7), 123.2, 0.05);
  EXPECT_NEAR(dynamic_range_db(3e-4, 3e-4), 0.0, 1e-12);
  EXPECT_NEAR(dynamic_range_db(10.0, 1e-3) - dynamic_range_db(1.0, 1e-3), 10.0, 1e-12);
}

TEST(MaxUsableBins, PrintedFormulaAndDecayVariant) {
  const auto c = loop(LoopMode::Passive, 0.5, 0.9, 1e-3);
  EXPECT_NEAR(max_usable_bins(c, 300), std::log10(1e-3 / 300) / std::log10(0.45), 1e-12);
  EXPECT_NEAR(max_usable_bins(c, 300), 15.8, 0.05);
  EXPECT_NEAR(max_usable_bins(c, 1e-3), 0.0, 1e-12);
  auto quieter = c;
  quieter.nu = 1e-5;
  EXPECT_GT(max_usable_bins(quieter, 300), max_usable_bins(c, 300));
  // Same as the printed formula here because eta (1 - R) = R eta at R = 1/2.
  EXPECT_NEAR(max_usable_bins_decay(c, 300), max_usable_bins(c, 300), 1e-12);
  const auto r = reference_loop();
  EXPECT_NEAR(max_usable_bins_decay(r, 2.5e5), std::log10(1.2e-7 / 2.5e5) / std::log10(0.9137 * 0.8615), 1e-12);
}

TEST(Calibrate, SaturatedHistogramHasNoValidBins) {
  const auto c = loop(LoopMode::Passive, 0.9, 0.9, 1e-6, 5);
  const auto h = ClickHistogram::from_counts(100, {100, 100, 100, 100, 100});
  EXPECT_EQ(code_of([&] { calibrate(h, known_fit(c), c); }), ErrorCode::NoValidBins);
}

TEST(Calibrate, ExactHistogramRecoversOutputPhotonNumber) {
  auto c = reference_loop();
  const double n_out = 208011;
  const auto h = exact_histogram(c, PhotonSource::coherent(analytic::invert_total_output(c, n_out)));
  CalibrateOptions o;
  o.n_pm = n_out;
  // Bins within 1e-12 of saturation carry double-precision rounding in 1 - p.
  o.j_min = 25;
  const auto r = calibrate(h, known_fit(c), c, o);
  EXPECT_NEAR(r.n_measured / n_out, 1.0, 1e-6);
  EXPECT_NEAR(*r.sde, 1.0, 1e-6);
  EXPECT_NEAR(*r.dynamic_range_db, dynamic_range_db(n_out, c.nu), 1e-12);
  for (const auto& e : r.n_out_per_bin) {
    if (e.valid() && e.j >= r.j_min) {
      EXPECT_GE(e.estimate, 0.0);
    }
  }
  EXPECT_FALSE(r.n_out_per_bin.front().valid());
}

TEST(Calibrate, ActiveModeUsesOnlyTheProduct) {
  const auto c = loop(LoopMode::Active, 0.9, 0.9, 1e-6, 100);
  const auto h = exact_histogram(c, PhotonSource::coherent(5000));
  FitResult f;
  f.product = 0.81;
  f.sigma_product = 1e-5;
  f.R_hat = 0.81 / 0.95;
  f.eta_hat = 0.95;
  f.individually_identifiable = false;
  const auto r = calibrate(h, f, c);
  EXPECT_NEAR(r.n_measured / analytic::total_output_photons(c, 5000), 1.0, 1e-6);
}

TEST(Calibrate, OptionalOutputsFollowInputs) {
  auto c = reference_loop();
  const auto h = exact_histogram(c, PhotonSource::coherent(1e4));
  const auto r = calibrate(h, known_fit(c), c);
  EXPECT_FALSE(r.sde.has_value());
  ASSERT_TRUE(r.dynamic_range_db.has_value());
  c.nu = 0.0;
  c.sigma_nu = 0.0;
  const auto h0 = exact_histogram(c, PhotonSource::coherent(1e4));
  EXPECT_FALSE(calibrate(h0, known_fit(c), c).dynamic_range_db.has_value());
}

TEST(Calibrate, SimulatedLosslessPipelineHasUnitEfficiency) {
  auto c = loop(LoopMode::Passive, 0.8, 0.9, 1e-5, 80);
  c.sigma_R = 1e-5;
  c.sigma_eta = 1e-5;
  const double n_in = 3000;
  const double n_out = analytic::total_output_photons(c, n_in);
  sim::SimOptions o;
  o.n_pulses = 100'000;
  o.seed = 31;
  const auto h = sim::simulate_ensemble(c, PhotonSource::coherent(n_in), o).histogram;
  CalibrateOptions opts;
  opts.n_pm = n_out;
  const auto r = calibrate(h, known_fit(c), c, opts);
  EXPECT_NEAR(*r.sde, 1.0, 3 * *r.sigma_sde);
}

TEST(Calibrate, HighSigmaTailBarelyMovesTheMean) {
  auto c = reference_loop();
  const double n_in = analytic::invert_total_output(c, 208011);
  sim::SimOptions o;
  o.n_pulses = 100'000;
  o.seed = 32;
  const auto full = sim::simulate_ensemble(c, PhotonSource::coherent(n_in), o).histogram;
  auto trimmed_cfg = c;
  trimmed_cfg.n_bins = 60;
  const auto trimmed = ClickHistogram::from_counts(
      full.trials, std::vector<std::uint64_t>(full.clicks.begin(), full.clicks.begin() + 60));
  CalibrateOptions opts;
  opts.j_min = 25;
  const auto a = calibrate(full, known_fit(c), c, opts);
  const auto b = calibrate(trimmed, known_fit(trimmed_cfg), trimmed_cfg, opts);
  EXPECT_LT(std::abs(a.n_measured - b.n_measured), a.sigma_n_measured);
}
