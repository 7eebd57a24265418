#include "photonloop/analytic.hpp"

#include <cmath>
#include <string>

namespace photonloop::analytic {

namespace {

void require_bin(int j) {
  if (j < 1) throw ValidationError("j", "j: bin index is 1-based, got " + std::to_string(j));
}

// 1 - (1 - q)^n, evaluated in log space so that bright pulses do not lose
// the complement to rounding.
double at_least_one(double q, double n) {
  if (n == 0.0 || q <= 0.0) return 0.0;
  if (q >= 1.0) return 1.0;
  return -std::expm1(n * std::log1p(-q));
}

double loop_gain(const LoopConfig& c) { return c.R * c.eta; }

void require_convergent(const LoopConfig& c) {
  if (!(loop_gain(c) < 1.0)) {
    throw Error(ErrorCode::DivergentLoop, "R * eta must be below 1 for a finite output");
  }
}

}  // namespace

double exit_probability(const LoopConfig& c, int j) {
  require_bin(j);
  const double R = c.R;
  const double eta = c.eta;
  if (c.mode == LoopMode::Active) {
    // Switched fully into the loop, then (1 - R) out per round trip.
    return (1.0 - R) * std::pow(R, j - 1) * std::pow(eta, j);
  }
  if (j == 1) return R;
  return (1.0 - R) * (1.0 - R) * std::pow(R, j - 2) * std::pow(eta, j - 1);
}

double survival_after(const LoopConfig& c, int j) {
  require_bin(j);
  if (c.mode == LoopMode::Active) return std::pow(c.R * c.eta, j);
  return (1.0 - c.R) * std::pow(c.R * c.eta, j - 1);
}

double prob_bin_given_n(const LoopConfig& c, int j, std::uint64_t n) {
  return at_least_one(exit_probability(c, j), static_cast<double>(n));
}

double click_prob_closed(const LoopConfig& c, const PhotonSource& source, int j) {
  require_bin(j);
  const double R = c.R;
  const double eta = c.eta;
  const double dark = 1.0 - c.nu;
  const bool active = c.mode == LoopMode::Active;

  // Coefficients as they appear in the closed expressions:
  //   active:           (1-R) R^-1 (R eta)^j
  //   passive, j = 1:   R
  //   passive, j >= 2:  (1-R)^2 R^-1 (R eta)^(j-1)
  // R = 0 is the limit with R^-1 folded into the power.
  double coeff = 0.0;
  if (active) {
    coeff = R > 0.0 ? (1.0 - R) / R * std::pow(R * eta, j) : (j == 1 ? eta : 0.0);
  } else if (j == 1) {
    coeff = R;
  } else {
    coeff = R > 0.0 ? (1.0 - R) * (1.0 - R) / R * std::pow(R * eta, j - 1) : (j == 2 ? eta : 0.0);
  }

  if (const auto* f = std::get_if<Fock>(&source.variant())) {
    const double n = static_cast<double>(f->n);
    if (n == 0.0) return c.nu;
    if (coeff >= 1.0) return 1.0;
    return 1.0 - dark * std::exp(n * std::log1p(-coeff));
  }
  if (const auto* coh = std::get_if<Coherent>(&source.variant())) {
    return 1.0 - dark * std::exp(-coeff * coh->nbar);
  }
  if (const auto* th = std::get_if<Thermal>(&source.variant())) {
    const double nbar = th->nbar;
    if (R > 0.0 && active) {
      return 1.0 - dark * R / (R + (1.0 - R) * std::pow(R * eta, j) * nbar);
    }
    if (R > 0.0 && eta > 0.0 && j >= 2) {
      const double r2eta = R * R * eta;
      return 1.0 - dark * r2eta / (r2eta + (1.0 - R) * (1.0 - R) * std::pow(R * eta, j) * nbar);
    }
    return 1.0 - dark / (1.0 + coeff * nbar);
  }
  throw Error(ErrorCode::UnsupportedSource,
              "no closed form for source '" + source.to_spec() + "'; use click_prob_numeric");
}

double click_prob_numeric(const LoopConfig& c, const PhotonSource& source, int j, double tail_tol,
                          std::size_t term_cap) {
  const double q = exit_probability(c, j);
  const double photon_part = expect_over_pmf(
      source, [&](std::uint64_t n) { return at_least_one(q, static_cast<double>(n)); }, tail_tol,
      term_cap);
  return (1.0 - c.nu) * photon_part + c.nu;
}

double mean_photons_per_bin(const LoopConfig& c, double nbar_in, int j) {
  if (nbar_in < 0.0) throw ValidationError("nbar_in", "nbar_in: must be non-negative");
  return nbar_in * exit_probability(c, j);
}

double total_output_photons(const LoopConfig& c, double nbar_in) {
  if (nbar_in < 0.0) throw ValidationError("nbar_in", "nbar_in: must be non-negative");
  require_convergent(c);
  const double R = c.R;
  const double eta = c.eta;
  if (c.mode == LoopMode::Active) return nbar_in * (1.0 - R) * eta / (1.0 - R * eta);
  return nbar_in * (R + eta - 2.0 * R * eta) / (1.0 - R * eta);
}

double invert_total_output(const LoopConfig& c, double nbar_out) {
  if (nbar_out < 0.0) throw ValidationError("nbar_out", "nbar_out: must be non-negative");
  require_convergent(c);
  const double R = c.R;
  const double eta = c.eta;
  const double gain = c.mode == LoopMode::Active ? (1.0 - R) * eta : R + eta - 2.0 * R * eta;
  if (gain <= 0.0) {
    if (nbar_out == 0.0) return 0.0;
    throw Error(ErrorCode::DivergentLoop, "loop transmits no light; output cannot be inverted");
  }
  return nbar_out * (1.0 - R * eta) / gain;
}

}  // namespace photonloop::analytic
