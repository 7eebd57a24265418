#include "photonloop/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "photonloop/analytic.hpp"

namespace photonloop::calibration {

double power_to_photons(double power_watts, double rep_rate_hz, double wavelength_m) {
  if (power_watts < 0.0) throw ValidationError("power", "power: must be non-negative");
  if (!(rep_rate_hz > 0.0)) throw ValidationError("rep_rate", "rep_rate: must be positive");
  if (!(wavelength_m > 0.0)) throw ValidationError("wavelength", "wavelength: must be positive");
  const double photon_energy = kPlanck * kSpeedOfLight / wavelength_m;
  return power_watts / (photon_energy * rep_rate_hz);
}

namespace {

// n_out|_j = scale(R, eta, j) * ln[(1 - nu) / (1 - p_j)]
double estimator_scale(const LoopConfig& c, int j) {
  if (j < 1) throw ValidationError("j", "j: bin index is 1-based");
  const double R = c.R;
  const double eta = c.eta;
  const double gain = R * eta;
  if (!(gain < 1.0)) throw Error(ErrorCode::DivergentLoop, "R * eta must be below 1");
  double scale = 0.0;
  if (c.mode == LoopMode::Active) {
    scale = std::pow(gain, 1 - j) / (1.0 - gain);
  } else if (j == 1) {
    scale = (R + eta - 2.0 * eta * R) / (R * (1.0 - gain));
  } else {
    scale = (R + eta - 2.0 * eta * R) * std::pow(gain, 1 - j) * R / ((1.0 - gain) * (R - 1.0) * (R - 1.0));
  }
  if (!std::isfinite(scale) || scale <= 0.0) {
    throw ValidationError("R", "R, eta: loop parameters do not allow inversion of bin " + std::to_string(j));
  }
  return scale;
}

double log_ratio(double nu, double p) {
  if (1.0 - p <= std::numeric_limits<double>::epsilon()) {
    throw Error(ErrorCode::SaturatedBin, "bin click probability is saturated");
  }
  if (p < nu) throw Error(ErrorCode::BelowNoise, "bin click probability is below the dark-count level");
  return std::log1p(-nu) - std::log1p(-p);
}

double log_scale(LoopConfig c, double R, double eta, int j) {
  c.R = R;
  c.eta = eta;
  return std::log(estimator_scale(c, j));
}

// Fourth-order derivative of f at x inside [lo, hi]; one-sided at an edge.
template <class F>
double derivative_within(F&& f, double x, double lo, double hi) {
  const double below = x - lo;
  const double above = hi - x;
  if (below > 0.0 && above > 0.0) {
    const double h = 1e-4 * std::min(below, above);
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h);
  }
  const double h = below > 0.0 ? -1e-4 * below : 1e-4 * above;
  return (-25 * f(x) + 48 * f(x + h) - 36 * f(x + 2 * h) + 16 * f(x + 3 * h) - 3 * f(x + 4 * h)) / (12 * h);
}

}  // namespace

double estimate_nout_per_bin(const LoopConfig& config, double p_j, int j) {
  const double L = log_ratio(config.nu, p_j);
  return estimator_scale(config, j) * L;
}

RelativeGradient relative_gradient_passive(const LoopConfig& c, double p_j, int j) {
  const double R = c.R;
  const double eta = c.eta;
  const double nu = c.nu;
  const double L = log_ratio(nu, p_j);
  const double jj = j;
  RelativeGradient g;
  g.p = 1.0 / ((1.0 - p_j) * L);
  g.R = (1.0 - jj) / R + 1.0 / (R * (1.0 - R * eta)) +
        1.0 / (R * (1.0 - 2.0 * R) + eta * (1.0 - 2.0 * R) * (1.0 - 2.0 * R)) -
        2.0 * R / (1.0 - 3.0 * R + 2.0 * R * R);
  g.eta = (1.0 - jj) / eta + (1.0 - R) * (1.0 - R) / ((R + eta - 2.0 * R * eta) * (1.0 - R * eta));
  g.nu = -1.0 / ((1.0 - nu) * L);
  return g;
}

RelativeGradient relative_gradient_numeric(const LoopConfig& c, double p_j, int j) {
  const double L = log_ratio(c.nu, p_j);
  RelativeGradient g;
  g.p = 1.0 / ((1.0 - p_j) * L);
  g.nu = -1.0 / ((1.0 - c.nu) * L);
  // Stay inside [0, 1] and below R * eta = 1.
  auto upper = [](double partner) { return partner > 0.0 ? std::min(1.0, 1.0 / partner) : 1.0; };
  g.R = derivative_within([&](double R) { return log_scale(c, R, c.eta, j); }, c.R, 0.0, upper(c.eta));
  g.eta = derivative_within([&](double eta) { return log_scale(c, c.R, eta, j); }, c.eta, 0.0, upper(c.R));
  return g;
}

SigmaBreakdown propagate_sigma_nout(const LoopConfig& config, double p_j, double sigma_p, int j) {
  if (sigma_p < 0.0) throw ValidationError("sigma_p", "sigma_p: must be non-negative");
  const double scale = estimator_scale(config, j);
  const double n = scale * log_ratio(config.nu, p_j);

  SigmaBreakdown s;
  // p and nu enter only through L, whose derivatives stay finite at L = 0.
  s.p = sigma_p * scale / (1.0 - p_j);
  s.nu = config.sigma_nu * scale / (1.0 - config.nu);

  const bool closed = config.mode == LoopMode::Passive && j >= 2 && std::abs(config.R - 0.5) > 1e-3;
  if (config.sigma_R > 0.0 || config.sigma_eta > 0.0) {
    if (n > 0.0) {
      const RelativeGradient g =
          closed ? relative_gradient_passive(config, p_j, j) : relative_gradient_numeric(config, p_j, j);
      if (config.sigma_R > 0.0) s.R = config.sigma_R * std::abs(g.R) * n;
      if (config.sigma_eta > 0.0) s.eta = config.sigma_eta * std::abs(g.eta) * n;
    }
  }
  s.total = std::sqrt(s.p * s.p + s.R * s.R + s.eta * s.eta + s.nu * s.nu);
  return s;
}

WeightedMean weighted_mean_nout(std::span<const BinEstimate> estimates, int j_min) {
  double sum_w = 0.0;
  double sum_wx = 0.0;
  WeightedMean out;
  for (const BinEstimate& e : estimates) {
    if (!e.valid() || e.j < j_min) continue;
    const double s = e.sigma.total;
    if (!(s > 0.0) || !std::isfinite(s) || !std::isfinite(e.estimate)) continue;
    const double w = 1.0 / (s * s);
    sum_w += w;
    sum_wx += w * e.estimate;
    ++out.bins_used;
  }
  if (out.bins_used == 0) {
    throw Error(ErrorCode::NoValidBins, "no bin with j >= " + std::to_string(j_min) +
                                            " has a usable estimate");
  }
  out.mean = sum_wx / sum_w;
  out.sigma = 1.0 / std::sqrt(sum_w);
  return out;
}

WeightedMean weighted_mean_nout(std::span<const std::pair<double, double>> estimates, int j_min) {
  std::vector<BinEstimate> bins(estimates.size());
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    bins[i].j = static_cast<int>(i + 1);
    bins[i].estimate = estimates[i].first;
    bins[i].sigma.total = estimates[i].second;
  }
  return weighted_mean_nout(bins, j_min);
}

int select_j_min(std::span<const BinEstimate> estimates) {
  int last_valid = -1;
  for (const BinEstimate& e : estimates) {
    if (!e.valid() || !(e.sigma.total > 0.0)) continue;
    last_valid = e.j;
    const WeightedMean tail = weighted_mean_nout(estimates, e.j);
    if (std::abs(e.estimate - tail.mean) < 2.0 * e.sigma.total) return e.j;
  }
  if (last_valid < 0) throw Error(ErrorCode::NoValidBins, "no bin has a usable estimate");
  return last_valid;
}

double system_detection_efficiency(double n_measured, double n_dark, double n_pm) {
  if (!(n_pm > 0.0)) throw ValidationError("n_pm", "n_pm: must be positive");
  return (n_measured - n_dark) / n_pm;
}

double dynamic_range_db(double n_bar, double nu) {
  if (!(n_bar > 0.0)) throw ValidationError("n_bar", "n_bar: must be positive");
  if (!(nu > 0.0)) throw ValidationError("nu", "nu: must be positive");
  return 10.0 * std::log10(n_bar / nu);
}

namespace {

void require_usable_bins_domain(const LoopConfig& c, double n_max, double base) {
  if (!(c.nu > 0.0)) throw ValidationError("nu", "nu: must be positive");
  if (!(n_max >= c.nu)) throw ValidationError("n_max", "n_max: must be at least nu");
  if (!(base > 0.0 && base < 1.0)) {
    throw ValidationError("R", "R, eta: decay base must lie strictly between 0 and 1");
  }
}

}  // namespace

double max_usable_bins(const LoopConfig& config, double n_max) {
  const double base = config.eta * (1.0 - config.R);
  require_usable_bins_domain(config, n_max, base);
  return std::log10(config.nu / n_max) / std::log10(base);
}

double max_usable_bins_decay(const LoopConfig& config, double n_max) {
  const double base = config.eta * config.R;
  require_usable_bins_domain(config, n_max, base);
  return std::log10(config.nu / n_max) / std::log10(base);
}

LoopConfig fitted_config(const FitResult& fit, const LoopConfig& config) {
  LoopConfig c = config;
  if (config.mode == LoopMode::Active) {
    // Only R * eta enters the active estimator.
    c.R = fit.product;
    c.eta = 1.0;
    c.sigma_R = fit.sigma_product;
    c.sigma_eta = 0.0;
  } else {
    c.R = fit.R_hat;
    c.eta = fit.eta_hat;
    c.sigma_R = fit.sigma_R;
    c.sigma_eta = fit.sigma_eta;
  }
  return c;
}

CalibrationResult calibrate(const ClickHistogram& bright, const FitResult& fit, const LoopConfig& config,
                            const CalibrateOptions& options) {
  config.validate();
  const LoopConfig loop = fitted_config(fit, config);
  const double trials = static_cast<double>(bright.trials);

  CalibrationResult out;
  out.n_out_per_bin.reserve(bright.n_bins());
  for (std::size_t i = 0; i < bright.n_bins(); ++i) {
    BinEstimate e;
    e.j = static_cast<int>(i + 1);
    e.p_hat = bright.p_hat[i];
    e.sigma_p = std::sqrt(e.p_hat * (1.0 - e.p_hat) / trials);
    try {
      e.estimate = estimate_nout_per_bin(loop, e.p_hat, e.j);
      e.sigma = propagate_sigma_nout(loop, e.p_hat, e.sigma_p, e.j);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::SaturatedBin && err.code() != ErrorCode::BelowNoise) throw;
      e.status = err.code();
    }
    out.n_out_per_bin.push_back(e);
  }

  out.j_min = options.j_min ? *options.j_min : select_j_min(out.n_out_per_bin);
  const WeightedMean wm = weighted_mean_nout(out.n_out_per_bin, out.j_min);
  out.n_measured = wm.mean;
  out.sigma_n_measured = wm.sigma;

  if (options.n_pm) {
    out.n_pm = *options.n_pm;
    out.sde = system_detection_efficiency(out.n_measured, options.n_dark, *options.n_pm);
    const double rel_n = out.sigma_n_measured / (out.n_measured - options.n_dark);
    const double rel_pm = options.sigma_n_pm ? *options.sigma_n_pm / *options.n_pm : 0.0;
    out.sigma_sde = std::abs(*out.sde) * std::sqrt(rel_n * rel_n + rel_pm * rel_pm);
  }
  if (config.nu > 0.0) {
    out.dynamic_range_db = dynamic_range_db(options.n_pm ? *options.n_pm : out.n_measured, config.nu);
  }
  return out;
}

}  // namespace photonloop::calibration
