#include "photonloop/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

namespace photonloop {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnsupportedSource: return "UnsupportedSource";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::DivergentLoop: return "DivergentLoop";
    case ErrorCode::GuardExceeded: return "GuardExceeded";
    case ErrorCode::UnsortedStream: return "UnsortedStream";
    case ErrorCode::NoSyncRecords: return "NoSyncRecords";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::AllDegenerate: return "AllDegenerate";
    case ErrorCode::SaturatedBin: return "SaturatedBin";
    case ErrorCode::BelowNoise: return "BelowNoise";
    case ErrorCode::NoValidBins: return "NoValidBins";
    case ErrorCode::FitDiverged: return "FitDiverged";
    case ErrorCode::SaturatedFirstBin: return "SaturatedFirstBin";
  }
  return "Unknown";
}

const char* to_string(LoopMode mode) {
  return mode == LoopMode::Active ? "active" : "passive";
}

namespace {

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ValidationError(field, std::string(field) + ": " + message);
}

bool in_unit(double x) { return x >= 0.0 && x <= 1.0; }

}  // namespace

void LoopConfig::validate() const {
  require(in_unit(R), "R", "must lie in [0, 1]");
  require(in_unit(eta), "eta", "must lie in [0, 1]");
  require(nu >= 0.0 && nu < 1.0, "nu", "must lie in [0, 1)");
  require(n_bins >= 1, "n_bins", "must be at least 1");
  require(loop_delay_ps > 0, "loop_delay_ps", "must be positive");
  require(gate_width_ps > 0, "gate_width_ps", "must be positive");
  require(gate_width_ps < loop_delay_ps, "gate_width_ps", "must be shorter than loop_delay_ps");
  require(sigma_R >= 0.0, "sigma_R", "must be non-negative");
  require(sigma_eta >= 0.0, "sigma_eta", "must be non-negative");
  require(sigma_nu >= 0.0, "sigma_nu", "must be non-negative");
}

PhotonSource PhotonSource::coherent(double nbar) {
  require(nbar >= 0.0 && std::isfinite(nbar), "nbar", "must be finite and non-negative");
  return PhotonSource(Coherent{nbar});
}

PhotonSource PhotonSource::thermal(double nbar) {
  require(nbar >= 0.0 && std::isfinite(nbar), "nbar", "must be finite and non-negative");
  return PhotonSource(Thermal{nbar});
}

PhotonSource PhotonSource::multi_thermal(double nbar, double K) {
  require(nbar >= 0.0 && std::isfinite(nbar), "nbar", "must be finite and non-negative");
  require(K >= 1.0 && std::isfinite(K), "K", "must be finite and >= 1");
  return PhotonSource(MultiThermal{nbar, K});
}

PhotonSource PhotonSource::lossy_fock(std::uint64_t n, double t) {
  require(in_unit(t), "t", "must lie in [0, 1]");
  return PhotonSource(LossyFock{n, t});
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_real(const std::string& s) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) {
    throw ValidationError("source", "source: cannot parse number '" + s + "'");
  }
  return v;
}

std::uint64_t parse_count(const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ValidationError("source", "source: cannot parse photon count '" + s + "'");
  }
  return v;
}

}  // namespace

PhotonSource PhotonSource::parse(const std::string& spec) {
  const auto parts = split(spec, ':');
  const std::string& kind = parts.front();
  auto expect_arity = [&](std::size_t n) {
    if (parts.size() != n + 1) {
      throw ValidationError("source", "source: '" + kind + "' takes " + std::to_string(n) +
                                          " parameter(s), got '" + spec + "'");
    }
  };
  if (kind == "fock") {
    expect_arity(1);
    return fock(parse_count(parts[1]));
  }
  if (kind == "coherent") {
    expect_arity(1);
    return coherent(parse_real(parts[1]));
  }
  if (kind == "thermal") {
    expect_arity(1);
    return thermal(parse_real(parts[1]));
  }
  if (kind == "multithermal") {
    expect_arity(2);
    return multi_thermal(parse_real(parts[1]), parse_real(parts[2]));
  }
  if (kind == "lossyfock") {
    expect_arity(2);
    return lossy_fock(parse_count(parts[1]), parse_real(parts[2]));
  }
  throw ValidationError("source", "source: unknown kind '" + kind + "'");
}

std::string PhotonSource::to_spec() const {
  std::ostringstream os;
  os.precision(17);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Fock>) os << "fock:" << s.n;
        if constexpr (std::is_same_v<T, Coherent>) os << "coherent:" << s.nbar;
        if constexpr (std::is_same_v<T, Thermal>) os << "thermal:" << s.nbar;
        if constexpr (std::is_same_v<T, MultiThermal>) os << "multithermal:" << s.nbar << ':' << s.K;
        if constexpr (std::is_same_v<T, LossyFock>) os << "lossyfock:" << s.n << ':' << s.t;
      },
      v_);
  return os.str();
}

double mean_photon_number(const PhotonSource& source) {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Fock>) return static_cast<double>(s.n);
        if constexpr (std::is_same_v<T, LossyFock>) return static_cast<double>(s.n) * s.t;
        if constexpr (std::is_same_v<T, Coherent> || std::is_same_v<T, Thermal> ||
                      std::is_same_v<T, MultiThermal>) {
          return s.nbar;
        }
      },
      source.variant());
}

namespace {

double log_binomial_coefficient(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

double pmf(const PhotonSource& source, std::uint64_t n) {
  const double x = static_cast<double>(n);
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Fock>) {
          return n == s.n ? 1.0 : 0.0;
        } else if constexpr (std::is_same_v<T, Coherent>) {
          if (s.nbar == 0.0) return n == 0 ? 1.0 : 0.0;
          return std::exp(-s.nbar + x * std::log(s.nbar) - std::lgamma(x + 1.0));
        } else if constexpr (std::is_same_v<T, Thermal>) {
          if (s.nbar == 0.0) return n == 0 ? 1.0 : 0.0;
          return std::exp(x * std::log(s.nbar / (1.0 + s.nbar)) - std::log1p(s.nbar));
        } else if constexpr (std::is_same_v<T, MultiThermal>) {
          if (s.nbar == 0.0) return n == 0 ? 1.0 : 0.0;
          const double K = s.K;
          const double log_norm = std::lgamma(x + K) - std::lgamma(K) - std::lgamma(x + 1.0);
          return std::exp(log_norm + K * std::log(K / (K + s.nbar)) +
                          x * std::log(s.nbar / (K + s.nbar)));
        } else {
          static_assert(std::is_same_v<T, LossyFock>);
          if (n > s.n) return 0.0;
          if (s.t == 0.0) return n == 0 ? 1.0 : 0.0;
          if (s.t == 1.0) return n == s.n ? 1.0 : 0.0;
          const double N = static_cast<double>(s.n);
          return std::exp(log_binomial_coefficient(N, x) + x * std::log(s.t) +
                          (N - x) * std::log1p(-s.t));
        }
      },
      source.variant());
}

std::uint64_t sample_photon_number(const PhotonSource& source, StreamRng& rng) {
  return std::visit(
      [&](const auto& s) -> std::uint64_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Fock>) {
          return s.n;
        } else if constexpr (std::is_same_v<T, Coherent>) {
          if (s.nbar == 0.0) return 0;
          return std::poisson_distribution<std::uint64_t>(s.nbar)(rng);
        } else if constexpr (std::is_same_v<T, Thermal>) {
          if (s.nbar == 0.0) return 0;
          return std::geometric_distribution<std::uint64_t>(1.0 / (1.0 + s.nbar))(rng);
        } else if constexpr (std::is_same_v<T, MultiThermal>) {
          if (s.nbar == 0.0) return 0;
          const double lambda = std::gamma_distribution<double>(s.K, s.nbar / s.K)(rng);
          if (lambda <= 0.0) return 0;
          return std::poisson_distribution<std::uint64_t>(lambda)(rng);
        } else {
          static_assert(std::is_same_v<T, LossyFock>);
          if (s.n == 0 || s.t == 0.0) return 0;
          if (s.t == 1.0) return s.n;
          return std::binomial_distribution<std::uint64_t>(s.n, s.t)(rng);
        }
      },
      source.variant());
}

namespace detail {

std::uint64_t pmf_mode(const PhotonSource& source) {
  return std::visit(
      [](const auto& s) -> std::uint64_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Fock>) return s.n;
        if constexpr (std::is_same_v<T, Coherent>) return static_cast<std::uint64_t>(std::floor(s.nbar));
        if constexpr (std::is_same_v<T, Thermal>) return 0;
        if constexpr (std::is_same_v<T, MultiThermal>) {
          return static_cast<std::uint64_t>(std::floor((s.K - 1.0) * s.nbar / s.K));
        }
        if constexpr (std::is_same_v<T, LossyFock>) {
          const double m = std::floor((static_cast<double>(s.n) + 1.0) * s.t);
          return std::min<std::uint64_t>(s.n, static_cast<std::uint64_t>(m));
        }
      },
      source.variant());
}

std::optional<std::uint64_t> pmf_support_max(const PhotonSource& source) {
  if (const auto* f = std::get_if<Fock>(&source.variant())) return f->n;
  if (const auto* l = std::get_if<LossyFock>(&source.variant())) return l->n;
  return std::nullopt;
}

double pmf_ratio_up(const PhotonSource& source, std::uint64_t n) {
  const double x = static_cast<double>(n);
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Fock>) return 0.0;
        if constexpr (std::is_same_v<T, Coherent>) return s.nbar / (x + 1.0);
        if constexpr (std::is_same_v<T, Thermal>) return s.nbar / (1.0 + s.nbar);
        if constexpr (std::is_same_v<T, MultiThermal>) {
          return (x + s.K) / (x + 1.0) * (s.nbar / (s.K + s.nbar));
        }
        if constexpr (std::is_same_v<T, LossyFock>) {
          if (n >= s.n || s.t == 0.0) return 0.0;
          return (static_cast<double>(s.n) - x) / (x + 1.0) * (s.t / (1.0 - s.t));
        }
      },
      source.variant());
}

double pmf_ratio_down(const PhotonSource& source, std::uint64_t n) {
  const double x = static_cast<double>(n);
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Fock>) return 0.0;
        if constexpr (std::is_same_v<T, Coherent>) return s.nbar == 0.0 ? 0.0 : x / s.nbar;
        if constexpr (std::is_same_v<T, Thermal>) {
          return s.nbar == 0.0 ? 0.0 : (1.0 + s.nbar) / s.nbar;
        }
        if constexpr (std::is_same_v<T, MultiThermal>) {
          if (s.nbar == 0.0) return 0.0;
          return x / (x - 1.0 + s.K) * ((s.K + s.nbar) / s.nbar);
        }
        if constexpr (std::is_same_v<T, LossyFock>) {
          if (s.t == 1.0) return 0.0;
          return x / (static_cast<double>(s.n) - x + 1.0) * ((1.0 - s.t) / s.t);
        }
      },
      source.variant());
}

}  // namespace detail

std::pair<double, double> wilson_interval(std::uint64_t k, std::uint64_t m, double z) {
  if (m == 0) throw ValidationError("trials", "trials: must be positive");
  const double n = static_cast<double>(m);
  const double p = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  // Clamp so that lo <= p_hat <= hi holds exactly despite rounding.
  return {std::clamp(centre - half, 0.0, p), std::clamp(centre + half, p, 1.0)};
}

ClickHistogram ClickHistogram::from_counts(std::uint64_t trials, std::vector<std::uint64_t> clicks) {
  if (trials == 0) throw ValidationError("trials", "trials: must be positive");
  ClickHistogram h;
  h.trials = trials;
  h.clicks = std::move(clicks);
  const std::size_t n = h.clicks.size();
  h.p_hat.resize(n);
  h.ci_lo.resize(n);
  h.ci_hi.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (h.clicks[i] > trials) {
      throw ValidationError("clicks", "clicks: bin " + std::to_string(i + 1) + " exceeds trials");
    }
    h.p_hat[i] = static_cast<double>(h.clicks[i]) / static_cast<double>(trials);
    std::tie(h.ci_lo[i], h.ci_hi[i]) = wilson_interval(h.clicks[i], trials);
  }
  return h;
}

double ClickHistogram::sigma(int j) const {
  const double p = p_hat.at(static_cast<std::size_t>(j - 1));
  return std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

ClickPatternStats ClickPatternStats::from_distribution(std::vector<double> c, std::vector<double> p) {
  ClickPatternStats s;
  s.c = std::move(c);
  s.p = std::move(p);
  for (std::size_t k = 0; k < s.c.size(); ++k) s.mean_c += static_cast<double>(k) * s.c[k];
  for (std::size_t k = 0; k < s.c.size(); ++k) {
    const double d = static_cast<double>(k) - s.mean_c;
    s.var_c += d * d * s.c[k];
  }
  if (!s.p.empty()) {
    const double n = static_cast<double>(s.p.size());
    for (double pj : s.p) s.m += pj;
    s.m /= n;
    for (double pj : s.p) s.sigma2 += (pj - s.m) * (pj - s.m);
    s.sigma2 /= n;
  }
  return s;
}

ClickPatternStats ClickPatternStats::from_counts(const std::vector<std::uint64_t>& fired_count_hist,
                                                 std::uint64_t trials, std::vector<double> p) {
  if (trials == 0) throw ValidationError("trials", "trials: must be positive");
  std::vector<double> c(fired_count_hist.size());
  for (std::size_t k = 0; k < c.size(); ++k) {
    c[k] = static_cast<double>(fired_count_hist[k]) / static_cast<double>(trials);
  }
  return from_distribution(std::move(c), std::move(p));
}

}  // namespace photonloop
