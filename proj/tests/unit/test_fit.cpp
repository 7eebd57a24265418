#include <gtest/gtest.h>

#include <cmath>

#include "photonloop/analytic.hpp"
#include "photonloop/calibration.hpp"
#include "photonloop/simulator.hpp"

using namespace photonloop;
using namespace photonloop::calibration;

namespace {

LoopConfig loop(LoopMode mode, double R, double eta, double nu, int n_bins) {
  LoopConfig c;
  c.mode = mode;
  c.R = R;
  c.eta = eta;
  c.nu = nu;
  c.n_bins = n_bins;
  return c;
}

ClickHistogram exact_histogram(const LoopConfig& c, double nbar) {
  const auto s = PhotonSource::coherent(nbar);
  std::vector<std::uint64_t> clicks(static_cast<std::size_t>(c.n_bins));
  for (int j = 1; j <= c.n_bins; ++j) {
    clicks[j - 1] = static_cast<std::uint64_t>(std::llround(analytic::click_prob_closed(c, s, j) * 1e15));
  }
  return ClickHistogram::from_counts(1'000'000'000'000'000ULL, clicks);
}

// A prior deliberately away from the truth; the fit must not depend on it.
LoopConfig prior_of(LoopConfig c) {
  c.R = 0.8;
  c.eta = 0.7;
  return c;
}

}  // namespace

TEST(Fit, NoiselessPassiveHistogramIsAFixedPoint) {
  const auto truth = loop(LoopMode::Passive, 0.91370, 0.8615, 1.2e-7, 130);
  const auto f = fit_loop_params(exact_histogram(truth, 2.5), prior_of(truth));
  EXPECT_NEAR(f.R_hat, truth.R, 1e-6);
  EXPECT_NEAR(f.eta_hat, truth.eta, 1e-6);
  EXPECT_NEAR(f.nbar_hat, 2.5, 1e-5);
  EXPECT_TRUE(f.individually_identifiable);
  EXPECT_GT(f.dof, 0);
}

TEST(Fit, RecoversSimulatedParametersWithinFiveSigma) {
  const auto truth = loop(LoopMode::Passive, 0.91370, 0.8615, 1.2e-7, 130);
  sim::SimOptions o;
  o.n_pulses = 300'000;
  o.seed = 41;
  const auto h = sim::simulate_ensemble(truth, PhotonSource::coherent(2.5), o).histogram;
  const auto f = fit_loop_params(h, prior_of(truth));
  EXPECT_LT(std::abs(f.R_hat - truth.R), 5 * f.sigma_R);
  EXPECT_LT(std::abs(f.eta_hat - truth.eta), 5 * f.sigma_eta);
  EXPECT_LT(std::abs(f.nbar_hat - 2.5), 5 * f.sigma_nbar);
  EXPECT_GT(f.sigma_R, 0.0);
  EXPECT_LT(f.sigma_R, 1e-3);
  // A correct model leaves no excess chi-square; empty tail bins pull it below dof.
  EXPECT_LT(f.residual_norm, f.dof + 5 * std::sqrt(2.0 * f.dof));
}

TEST(Fit, ActiveModeReportsOnlyTheProduct) {
  const auto truth = loop(LoopMode::Active, 0.9, 0.9, 1e-7, 120);
  const auto f = fit_loop_params(exact_histogram(truth, 3.0), prior_of(truth));
  EXPECT_FALSE(f.individually_identifiable);
  EXPECT_NEAR(f.product, 0.81, 1e-7);
  EXPECT_GT(f.sigma_product, 0.0);
  EXPECT_TRUE(std::isnan(f.sigma_R));
  EXPECT_TRUE(std::isnan(f.sigma_eta));
  EXPECT_NEAR(f.R_hat * f.eta_hat, f.product, 1e-12);
  const auto fitted = fitted_config(f, truth);
  EXPECT_NEAR(fitted.R * fitted.eta, 0.81, 1e-7);
}

TEST(Fit, SaturatedFirstBinIsRejectedWithHint) {
  const auto truth = loop(LoopMode::Passive, 0.91370, 0.8615, 1.2e-7, 130);
  try {
    fit_loop_params(exact_histogram(truth, 2000), truth);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SaturatedFirstBin);
    EXPECT_NE(std::string(e.what()).find("attenuat"), std::string::npos) << e.what();
  }
}

TEST(Fit, EmptyHistogramDoesNotConverge) {
  const auto c = loop(LoopMode::Passive, 0.9, 0.9, 0.0, 30);
  const auto h = ClickHistogram::from_counts(1000, std::vector<std::uint64_t>(30, 0));
  EXPECT_THROW(fit_loop_params(h, c), Error);
}

TEST(Fit, FittedConfigCarriesUncertainties) {
  const auto truth = loop(LoopMode::Passive, 0.91370, 0.8615, 1.2e-7, 130);
  FitResult f;
  f.R_hat = 0.91;
  f.eta_hat = 0.86;
  f.sigma_R = 1e-4;
  f.sigma_eta = 2e-4;
  f.individually_identifiable = true;
  const auto c = fitted_config(f, truth);
  EXPECT_DOUBLE_EQ(c.R, 0.91);
  EXPECT_DOUBLE_EQ(c.eta, 0.86);
  EXPECT_DOUBLE_EQ(c.sigma_R, 1e-4);
  EXPECT_DOUBLE_EQ(c.sigma_eta, 2e-4);
  EXPECT_DOUBLE_EQ(c.nu, truth.nu);
}
