#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "photonloop/calibration.hpp"

namespace photonloop::calibration {

namespace {

// Parameters of the coherent click law p_j = 1 - (1 - nu) exp(-mu_j):
//   passive: theta = (R, eta, nbar),  mu_1 = nbar R,
//            mu_j = nbar (1-R)^2 R^(j-2) eta^(j-1)
//   active:  theta = (P, A),          mu_j = A P^j
// with P = R eta and A = nbar (1-R) / R, the only identifiable pair.
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Problem {
  LoopMode mode;
  double nu;
  std::vector<int> bins;
  std::vector<double> p_hat;
  std::vector<double> inv_sigma;

  int n_params() const { return mode == LoopMode::Passive ? 3 : 2; }

  bool admissible(const Vec& t) const {
    if (mode == LoopMode::Passive) {
      return t(0) > 0.0 && t(0) < 1.0 && t(1) > 0.0 && t(1) <= 1.0 && t(2) > 0.0 && t(0) * t(1) < 1.0;
    }
    return t(0) > 0.0 && t(0) < 1.0 && t(1) > 0.0;
  }

  // mu_j and d mu_j / d theta
  double mu(const Vec& t, int j, double* grad) const {
    if (mode == LoopMode::Passive) {
      const double R = t(0), eta = t(1), nbar = t(2);
      if (j == 1) {
        if (grad) {
          grad[0] = nbar;
          grad[1] = 0.0;
          grad[2] = R;
        }
        return nbar * R;
      }
      const double q = (1.0 - R) * (1.0 - R) * std::pow(R, j - 2) * std::pow(eta, j - 1);
      if (grad) {
        grad[0] = nbar * q * (-2.0 / (1.0 - R) + (j - 2) / R);
        grad[1] = nbar * q * (j - 1) / eta;
        grad[2] = q;
      }
      return nbar * q;
    }
    const double P = t(0), A = t(1);
    const double pj = std::pow(P, j);
    if (grad) {
      grad[0] = A * j * pj / P;
      grad[1] = pj;
    }
    return A * pj;
  }

  // Whitened residuals and Jacobian of the residuals.
  double evaluate(const Vec& t, Vec* r, Mat* J) const {
    const int np = n_params();
    double chi2 = 0.0;
    double grad[3];
    for (std::size_t i = 0; i < bins.size(); ++i) {
      const double m = mu(t, bins[i], J ? grad : nullptr);
      const double survive = (1.0 - nu) * std::exp(-m);
      const double res = (p_hat[i] - (1.0 - survive)) * inv_sigma[i];
      chi2 += res * res;
      if (r) (*r)(static_cast<Eigen::Index>(i)) = res;
      if (J) {
        for (int k = 0; k < np; ++k) {
          (*J)(static_cast<Eigen::Index>(i), k) = -survive * grad[k] * inv_sigma[i];
        }
      }
    }
    return chi2;
  }
};

struct Solution {
  Vec theta;
  double chi2 = std::numeric_limits<double>::infinity();
  Mat normal;  // J^T J at the optimum
};

std::optional<Solution> levenberg_marquardt(const Problem& prob, Vec theta, int max_iter) {
  if (!prob.admissible(theta)) return std::nullopt;
  const auto m = static_cast<Eigen::Index>(prob.bins.size());
  const int np = prob.n_params();
  Vec r(m);
  Mat J(m, np);
  double chi2 = prob.evaluate(theta, &r, &J);
  double lambda = 1e-3;
  bool converged = false;

  for (int iter = 0; iter < max_iter && !converged; ++iter) {
    const Mat JtJ = J.transpose() * J;
    const Vec g = J.transpose() * r;
    bool accepted = false;
    while (lambda < 1e16) {
      Mat A = JtJ;
      for (int k = 0; k < np; ++k) A(k, k) += lambda * std::max(JtJ(k, k), 1e-300);
      const Vec step = A.ldlt().solve(-g);
      const Vec trial = theta + step;
      if (step.allFinite() && prob.admissible(trial)) {
        const double trial_chi2 = prob.evaluate(trial, nullptr, nullptr);
        if (std::isfinite(trial_chi2) && trial_chi2 <= chi2) {
          const double rel_drop = (chi2 - trial_chi2) / std::max(chi2, 1e-300);
          const double rel_step = (step.array().abs() / theta.array().abs().max(1e-300)).maxCoeff();
          theta = trial;
          chi2 = prob.evaluate(theta, &r, &J);
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
          converged = rel_drop < 1e-14 || rel_step < 1e-12;
          break;
        }
      }
      lambda *= 10.0;
    }
    if (!accepted) converged = true;  // no downhill step left: at a minimum
  }
  if (!std::isfinite(chi2)) return std::nullopt;
  Solution s;
  s.theta = theta;
  s.chi2 = chi2;
  s.normal = J.transpose() * J;
  return s;
}

// -ln[(1 - p) / (1 - nu)], the mean photon number seen by a bin.
double bin_photons(double p, double nu) { return std::log1p(-nu) - std::log1p(-p); }

// Log-linear regression of mu_j over the decaying part of the histogram:
// returns (intercept at j = 0, slope) of ln mu_j = a + b j.
std::optional<std::pair<double, double>> tail_regression(const ClickHistogram& h, double nu, int first_bin) {
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  int used = 0;
  const double trials = static_cast<double>(h.trials);
  for (std::size_t i = static_cast<std::size_t>(first_bin - 1); i < h.n_bins(); ++i) {
    const double p = h.p_hat[i];
    const double clicks = static_cast<double>(h.clicks[i]);
    const double noise_clicks = nu * trials;
    if (p >= 0.99 || clicks < 20.0 || clicks < 10.0 * noise_clicks) continue;
    const double mu = bin_photons(p, nu);
    if (!(mu > 0.0)) continue;
    const double x = static_cast<double>(i + 1);
    const double y = std::log(mu);
    const double w = clicks;  // variance of ln(mu) ~ 1 / clicks for small mu
    sw += w;
    sx += w * x;
    sy += w * y;
    sxx += w * x * x;
    sxy += w * x * y;
    ++used;
  }
  if (used < 2) return std::nullopt;
  const double det = sw * sxx - sx * sx;
  if (!(det > 0.0)) return std::nullopt;
  const double slope = (sw * sxy - sx * sy) / det;
  const double intercept = (sy - slope * sx) / sw;
  return std::make_pair(intercept, slope);
}

}  // namespace

FitResult fit_loop_params(const ClickHistogram& hist, const LoopConfig& prior, const FitOptions& options) {
  prior.validate();
  if (hist.n_bins() < 3 || hist.trials == 0) {
    throw ValidationError("histogram", "histogram: need at least 3 bins and one trial");
  }
  if (hist.p_hat[0] > 0.99) {
    throw Error(ErrorCode::SaturatedFirstBin,
                "first bin is saturated (p_hat = " + std::to_string(hist.p_hat[0]) +
                    "); attenuate the input until the first bin stays below 0.99");
  }
  const double nu = prior.nu;
  const double trials = static_cast<double>(hist.trials);

  Problem prob;
  prob.mode = prior.mode;
  prob.nu = nu;
  for (std::size_t i = 0; i < hist.n_bins(); ++i) {
    // Binomial variance with a half-count continuity correction so that
    // empty bins keep a finite weight.
    const double p_tilde = (static_cast<double>(hist.clicks[i]) + 0.5) / (trials + 1.0);
    prob.bins.push_back(static_cast<int>(i + 1));
    prob.p_hat.push_back(hist.p_hat[i]);
    prob.inv_sigma.push_back(1.0 / std::sqrt(p_tilde * (1.0 - p_tilde) / trials));
  }

  const bool passive = prior.mode == LoopMode::Passive;
  Vec start(prob.n_params());
  const auto tail = tail_regression(hist, nu, passive ? 2 : 1);
  const double P_prior = std::clamp(prior.R * prior.eta, 1e-6, 1.0 - 1e-6);
  const double P0 = tail ? std::clamp(std::exp(tail->second), 1e-6, 1.0 - 1e-6) : P_prior;
  if (passive) {
    // nbar R from the first bin; the jump to the j >= 2 amplitude
    // nbar (1-R)^2 / R fixes R.
    const double a = bin_photons(hist.p_hat[0], nu);
    double R0 = std::clamp(prior.R, 1e-3, 1.0 - 1e-3);
    if (tail && a > 0.0) {
      const double b = std::exp(tail->first + tail->second);  // amplitude at j = 1
      R0 = std::clamp(1.0 / (1.0 + std::sqrt(b / a)), 1e-3, 1.0 - 1e-3);
    }
    const double eta0 = std::clamp(P0 / R0, 1e-3, 1.0);
    const double nbar0 = a > 0.0 ? a / R0 : 1.0;
    start << R0, eta0, nbar0;
  } else {
    const double A0 = tail ? std::exp(tail->first) : 1.0;
    start << P0, A0;
  }

  std::optional<Solution> best;
  auto consider = [&](const Vec& s) {
    auto sol = levenberg_marquardt(prob, s, options.max_iterations);
    if (sol && (!best || sol->chi2 < best->chi2)) best = std::move(sol);
  };
  consider(start);
  for (int k = 0; k < options.perturbed_starts; ++k) {
    // Deterministic spread of starts: +-2% and +-5% around the heuristic.
    static constexpr double kScale[] = {0.98, 1.02, 0.95, 1.05, 0.9, 1.1};
    const double f = kScale[k % 6];
    Vec s = start;
    s(0) = passive ? std::clamp(1.0 - (1.0 - s(0)) * f, 1e-4, 1.0 - 1e-4) : std::clamp(s(0) * f, 1e-6, 1.0 - 1e-6);
    s(1) = passive ? std::clamp(s(1) / f, 1e-4, 1.0) : s(1) * f;
    if (passive) s(2) *= f;
    consider(s);
  }
  if (!best) throw Error(ErrorCode::FitDiverged, "no starting point converged");

  Eigen::FullPivLU<Mat> lu(best->normal);
  if (!lu.isInvertible()) throw Error(ErrorCode::FitDiverged, "fit covariance is singular");
  const Mat cov = lu.inverse();
  if (!cov.allFinite() || cov.diagonal().minCoeff() < 0.0) {
    throw Error(ErrorCode::FitDiverged, "fit covariance is not positive");
  }

  FitResult out;
  out.residual_norm = best->chi2;
  out.dof = static_cast<int>(prob.bins.size()) - prob.n_params();
  const Vec& t = best->theta;
  if (passive) {
    out.R_hat = t(0);
    out.eta_hat = t(1);
    out.nbar_hat = t(2);
    out.sigma_R = std::sqrt(cov(0, 0));
    out.sigma_eta = std::sqrt(cov(1, 1));
    out.sigma_nbar = std::sqrt(cov(2, 2));
    out.product = t(0) * t(1);
    // Var(R eta) = eta^2 Var R + R^2 Var eta + 2 R eta Cov(R, eta)
    const double var_p = t(1) * t(1) * cov(0, 0) + t(0) * t(0) * cov(1, 1) + 2.0 * t(0) * t(1) * cov(0, 1);
    out.sigma_product = std::sqrt(std::max(var_p, 0.0));
  } else {
    out.individually_identifiable = false;
    out.product = t(0);
    out.sigma_product = std::sqrt(cov(0, 0));
    // Split the product using the prior's R, else the prior's eta, else eta = 1.
    const double nan = std::numeric_limits<double>::quiet_NaN();
    double R = std::clamp(prior.R, 1e-9, 1.0 - 1e-9);
    double eta = out.product / R;
    if (eta > 1.0) {
      eta = std::clamp(prior.eta, 1e-9, 1.0);
      R = out.product / eta;
    }
    if (R >= 1.0) {
      R = out.product;
      eta = 1.0;
    }
    out.R_hat = R;
    out.eta_hat = eta;
    out.nbar_hat = t(1) * R / (1.0 - R);
    out.sigma_R = nan;
    out.sigma_eta = nan;
    out.sigma_nbar = nan;
  }
  return out;
}

}  // namespace photonloop::calibration
