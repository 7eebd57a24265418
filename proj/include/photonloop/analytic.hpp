#pragma once

#include <cstdint>

#include "photonloop/models.hpp"

namespace photonloop::analytic {

/// Probability that a single incident photon leaves the loop into bin j
/// (1-based). Every click law of the loop has the form 1 - (1 - q_j)^n with
/// this q_j.
double exit_probability(const LoopConfig& config, int j);

/// Probability that a photon survives the loop past bin j without being
/// detected or lost (still circulating after bin j).
double survival_after(const LoopConfig& config, int j);

/// P(j|n): bin j receives at least one of n photons (dark counts excluded).
double prob_bin_given_n(const LoopConfig& config, int j, std::uint64_t n);

/// Closed-form bin click probability for Fock, coherent and thermal input,
/// dark counts included. Throws UnsupportedSource for other sources.
double click_prob_closed(const LoopConfig& config, const PhotonSource& source, int j);

/// Bin click probability by direct summation over the photon-number
/// distribution; works for any source.
double click_prob_numeric(const LoopConfig& config, const PhotonSource& source, int j,
                          double tail_tol = 1e-12, std::size_t term_cap = kDefaultTermCap);

/// Mean photon number reaching bin j for mean input nbar_in.
double mean_photons_per_bin(const LoopConfig& config, double nbar_in, int j);

/// Mean photon number leaving the loop summed over all bins. Throws
/// DivergentLoop when R * eta >= 1.
double total_output_photons(const LoopConfig& config, double nbar_in);

/// Inverse of total_output_photons.
double invert_total_output(const LoopConfig& config, double nbar_out);

}  // namespace photonloop::analytic
