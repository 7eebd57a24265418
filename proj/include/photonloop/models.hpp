#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "photonloop/error.hpp"
#include "photonloop/rng.hpp"

namespace photonloop {

enum class LoopMode { Active, Passive };

const char* to_string(LoopMode mode);

/// Loop detector parameters.
///
/// `R` is the beam-splitter coupling that keeps light in the loop (the
/// fraction sent straight to the detector on the first pass in passive
/// mode), `eta` the round-trip transmission and `nu` the per-bin dark-count
/// probability. Bins are 1-based. The sigma_* fields carry absolute 1-sigma
/// uncertainties used by the calibration error budget.
struct LoopConfig {
  LoopMode mode = LoopMode::Passive;
  double R = 0.5;
  double eta = 0.9;
  double nu = 0.0;
  int n_bins = 130;
  std::int64_t loop_delay_ps = 156'000;
  std::int64_t gate_width_ps = 4'000;
  double sigma_R = 0.0;
  double sigma_eta = 0.0;
  double sigma_nu = 0.0;
  // Latching guard: pulses with more photons than this are rejected.
  std::optional<std::uint64_t> n_max_guard;

  // Throws ValidationError naming the first offending field.
  void validate() const;
};

struct Fock {
  std::uint64_t n = 0;
};
struct Coherent {
  double nbar = 0.0;
};
struct Thermal {
  double nbar = 0.0;
};
// Gamma(K, nbar/K)-mixed Poisson: K thermal modes sharing the mean.
struct MultiThermal {
  double nbar = 0.0;
  double K = 1.0;
};
// Fock state thinned by binomial transmission t before the loop.
struct LossyFock {
  std::uint64_t n = 0;
  double t = 1.0;
};

class PhotonSource {
 public:
  using Variant = std::variant<Fock, Coherent, Thermal, MultiThermal, LossyFock>;

  static PhotonSource fock(std::uint64_t n) { return PhotonSource(Fock{n}); }
  static PhotonSource coherent(double nbar);
  static PhotonSource thermal(double nbar);
  static PhotonSource multi_thermal(double nbar, double K);
  static PhotonSource lossy_fock(std::uint64_t n, double t);

  const Variant& variant() const noexcept { return v_; }

  template <class T>
  bool holds() const noexcept {
    return std::holds_alternative<T>(v_);
  }

  // Grammar: fock:N | coherent:X | thermal:X | multithermal:X:K | lossyfock:N:T
  static PhotonSource parse(const std::string& spec);
  std::string to_spec() const;

 private:
  explicit PhotonSource(Variant v) : v_(std::move(v)) {}
  Variant v_;
};

double mean_photon_number(const PhotonSource& source);

/// Photon-number probability rho(n).
double pmf(const PhotonSource& source, std::uint64_t n);

/// Draws a photon number from the source distribution.
std::uint64_t sample_photon_number(const PhotonSource& source, StreamRng& rng);

namespace detail {

// Helpers for walking a unimodal pmf outward from its mode. All supported
// distributions are log-concave (MultiThermal needs K >= 1), so once the
// step ratio drops below one the remaining tail is bounded by a geometric
// series.
std::uint64_t pmf_mode(const PhotonSource& source);
std::optional<std::uint64_t> pmf_support_max(const PhotonSource& source);
// rho(n+1) / rho(n)
double pmf_ratio_up(const PhotonSource& source, std::uint64_t n);
// rho(n-1) / rho(n), n >= 1
double pmf_ratio_down(const PhotonSource& source, std::uint64_t n);

}  // namespace detail

inline constexpr std::size_t kDefaultTermCap = 10'000'000;

/// Sum over n of f(n) * rho(n) for f with values in [0, 1], truncated once
/// the neglected probability mass is below tail_tol. Throws NonConvergence
/// when more than term_cap terms would be needed.
template <class F>
double expect_over_pmf(const PhotonSource& source, F&& f, double tail_tol = 1e-12,
                       std::size_t term_cap = kDefaultTermCap) {
  if (!(tail_tol > 0.0)) throw ValidationError("tail_tol", "tail_tol must be positive");
  const std::uint64_t mode = detail::pmf_mode(source);
  const auto support_max = detail::pmf_support_max(source);
  const double rho_mode = pmf(source, mode);

  // Compensated summation: terms span many orders of magnitude.
  double sum = 0.0;
  double comp = 0.0;
  auto add = [&](double x) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  };

  std::size_t terms = 1;
  add(f(mode) * rho_mode);
  const double half_tol = 0.5 * tail_tol;

  double rho = rho_mode;
  for (std::uint64_t n = mode; !support_max || n < *support_max; ++n) {
    const double r = detail::pmf_ratio_up(source, n);
    if (r < 1.0 && rho * r / (1.0 - r) < half_tol) break;
    rho *= r;
    if (++terms > term_cap) {
      throw Error(ErrorCode::NonConvergence, "pmf summation exceeded term cap");
    }
    add(f(n + 1) * rho);
  }
  rho = rho_mode;
  for (std::uint64_t n = mode; n > 0; --n) {
    const double r = detail::pmf_ratio_down(source, n);
    if (r < 1.0 && rho * r / (1.0 - r) < half_tol) break;
    rho *= r;
    if (++terms > term_cap) {
      throw Error(ErrorCode::NonConvergence, "pmf summation exceeded term cap");
    }
    add(f(n - 1) * rho);
  }
  return sum;
}

/// Wilson score interval for k successes in m trials; z = 1 gives 68.3%.
std::pair<double, double> wilson_interval(std::uint64_t k, std::uint64_t m, double z = 1.0);

/// Per-bin click counts over `trials` pulses; index 0 is bin j = 1.
struct ClickHistogram {
  std::uint64_t trials = 0;
  std::vector<std::uint64_t> clicks;
  std::vector<double> p_hat;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;

  static ClickHistogram from_counts(std::uint64_t trials, std::vector<std::uint64_t> clicks);

  std::size_t n_bins() const noexcept { return clicks.size(); }
  // Binomial standard error of p_hat[j - 1].
  double sigma(int j) const;
};

/// Distribution of the number of fired bins per pulse (c_k) and bin moments.
struct ClickPatternStats {
  std::vector<double> c;  // size N + 1
  double mean_c = 0.0;
  double var_c = 0.0;
  double m = 0.0;
  double sigma2 = 0.0;
  std::vector<double> p;  // per-bin click probabilities behind m and sigma2

  static ClickPatternStats from_distribution(std::vector<double> c, std::vector<double> p);
  static ClickPatternStats from_counts(const std::vector<std::uint64_t>& fired_count_hist,
                                       std::uint64_t trials, std::vector<double> p);
};

struct TimeTag {
  int channel = 0;
  std::int64_t time_ps = 0;

  friend bool operator==(const TimeTag&, const TimeTag&) = default;
};

struct TimeTagStream {
  std::vector<TimeTag> records;
  std::int64_t sync_period_ps = 0;
  int sync_channel = 0;
  int detector_channel = 1;
};

/// Additive error budget of one per-bin photon-number estimate. Terms are
/// absolute 1-sigma contributions; total is their quadrature sum.
struct SigmaBreakdown {
  double p = 0.0;
  double R = 0.0;
  double eta = 0.0;
  double nu = 0.0;
  double total = 0.0;
};

struct BinEstimate {
  int j = 0;
  double p_hat = 0.0;
  double sigma_p = 0.0;
  double estimate = 0.0;
  SigmaBreakdown sigma;
  std::optional<ErrorCode> status;  // set when the bin was rejected

  bool valid() const noexcept { return !status.has_value(); }
};

struct CalibrationResult {
  std::vector<BinEstimate> n_out_per_bin;
  int j_min = 1;
  double n_measured = 0.0;
  double sigma_n_measured = 0.0;
  std::optional<double> n_pm;
  std::optional<double> sde;
  std::optional<double> sigma_sde;
  std::optional<double> dynamic_range_db;
};

struct FitResult {
  double R_hat = 0.0;
  double eta_hat = 0.0;
  double nbar_hat = 0.0;
  double sigma_R = 0.0;
  double sigma_eta = 0.0;
  double sigma_nbar = 0.0;
  // R * eta, always identifiable; the only identifiable loop quantity in
  // active mode.
  double product = 0.0;
  double sigma_product = 0.0;
  bool individually_identifiable = true;
  double residual_norm = 0.0;
  int dof = 0;
};

}  // namespace photonloop
