#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "photonloop/models.hpp"

namespace photonloop::calibration {

inline constexpr double kPlanck = 6.62607015e-34;       // J s
inline constexpr double kSpeedOfLight = 299'792'458.0;  // m / s

/// Mean photons per pulse for an average optical power.
double power_to_photons(double power_watts, double rep_rate_hz, double wavelength_m);

/// Mean photon number leaving the loop, inferred from the click probability
/// of bin j for coherent input. Throws SaturatedBin when p_j is 1 to
/// machine precision and BelowNoise when p_j < nu.
double estimate_nout_per_bin(const LoopConfig& config, double p_j, int j);

/// d ln(n_out|_j) / dx for x in {p_j, R, eta, nu}.
struct RelativeGradient {
  double p = 0.0;
  double R = 0.0;
  double eta = 0.0;
  double nu = 0.0;
};

/// The closed-form relative derivatives of the passive j >= 2 estimator.
/// The R bracket is singular (but finite in the limit) at R = 1/2.
RelativeGradient relative_gradient_passive(const LoopConfig& config, double p_j, int j);

/// Relative derivatives valid for every mode and bin: R and eta by central
/// differences of the estimator, p_j and nu in closed form (the estimator
/// depends on them only through ln[(1 - nu) / (1 - p_j)]).
RelativeGradient relative_gradient_numeric(const LoopConfig& config, double p_j, int j);

/// Gaussian error propagation of sigma_p and the config's sigma_R,
/// sigma_eta, sigma_nu into n_out|_j. Uses the closed-form derivatives for
/// passive bins j >= 2 and numeric ones elsewhere.
SigmaBreakdown propagate_sigma_nout(const LoopConfig& config, double p_j, double sigma_p, int j);

struct WeightedMean {
  double mean = 0.0;
  double sigma = 0.0;
  std::size_t bins_used = 0;
};

/// Inverse-variance weighted mean over valid bins with j >= j_min and a
/// finite positive sigma. Throws NoValidBins.
WeightedMean weighted_mean_nout(std::span<const BinEstimate> estimates, int j_min);

/// Convenience overload: estimates[i] is bin i + 1, given as (value, sigma).
WeightedMean weighted_mean_nout(std::span<const std::pair<double, double>> estimates, int j_min);

/// Smallest bin whose estimate lies within 2 sigma of the weighted mean of
/// itself and all later bins.
int select_j_min(std::span<const BinEstimate> estimates);

struct FitOptions {
  int max_iterations = 200;
  // Extra starting points around the heuristic start.
  int perturbed_starts = 5;
};

/// Weighted least-squares fit of the coherent-state click law to an
/// attenuated histogram. Passive mode fits (R, eta, nbar); active mode only
/// identifies R*eta and reports R_hat, eta_hat as not individually
/// identifiable. Throws SaturatedFirstBin if p_hat[1] > 0.99 and
/// FitDiverged when no start converges.
FitResult fit_loop_params(const ClickHistogram& hist, const LoopConfig& config_prior,
                          const FitOptions& options = {});

double system_detection_efficiency(double n_measured, double n_dark, double n_pm);

double dynamic_range_db(double n_bar, double nu);

/// Approximate number of bins above the noise floor,
///   log10(nu / n_max) / log10(eta (1 - R)).
double max_usable_bins(const LoopConfig& config, double n_max);

/// Same estimate with the per-bin decay ratio R*eta as the base.
double max_usable_bins_decay(const LoopConfig& config, double n_max);

struct CalibrateOptions {
  std::optional<double> n_pm;
  std::optional<double> sigma_n_pm;
  double n_dark = 0.0;
  // Fixed first bin of the weighted mean; chosen by select_j_min if unset.
  std::optional<int> j_min;
};

/// Per-bin inversion, error propagation and weighted mean for a bright
/// histogram, using loop parameters from a fit. Attaches the SDE when a
/// power-meter photon number is given, and the dynamic range when nu > 0.
CalibrationResult calibrate(const ClickHistogram& bright, const FitResult& fit,
                            const LoopConfig& config, const CalibrateOptions& options = {});

/// The loop configuration calibrate() evaluates with: fitted loop
/// parameters and uncertainties, noise terms from `config`.
LoopConfig fitted_config(const FitResult& fit, const LoopConfig& config);

}  // namespace photonloop::calibration
