#pragma once

// Theory checks and run metrics: spectral estimate of the gossip process,
// consensus contraction, the convergence-bound constants, bandwidth
// utilization and CSV export.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saps/core.hpp"
#include "saps/matching.hpp"

namespace saps {

struct SpectralEstimate {
  double rho = 0.0;
  std::size_t n_samples = 0;
  double standard_error = 0.0;
  std::size_t iterations = 0;  // power-iteration steps on the full average
};

/// Produces one gossip matrix per call.
using GossipSampler = std::function<Eigen::MatrixXd()>;

/// Second-largest eigenvalue of a symmetric matrix with known top eigenvector
/// 1/sqrt(n) * ones (eigenvalue 1), by power iteration on the deflated matrix.
/// Stops at residual ||Av - lambda v|| < tol; throws NumericalError after max_steps.
double second_eigenvalue(const Eigen::MatrixXd& a, std::size_t* steps = nullptr, double tol = 1e-10,
                         std::size_t max_steps = 100000);

/// rho-hat from n_samples draws of W: second eigenvalue of mean(W^T W). The
/// standard error comes from 10 batch means. Throws ValidationError for n_samples < 100.
SpectralEstimate estimate_rho(const GossipSampler& sample, std::size_t n_samples);

/// Samples the stationary generator: a PeerSelector seeded with `seed` is run
/// for 10 * T_thres warm-up rounds first.
SpectralEstimate estimate_rho(const PeerSelectorConfig& generator, std::size_t n_samples, std::uint64_t seed);

struct ContractionResult {
  std::vector<double> mean_ratio;  // mean e_t / e_0 over trials, t = 0..t_max
  double rho = 0.0;
  double factor = 0.0;  // q + p rho^2 (or q + p rho)
  /// max over t of mean_ratio[t] / factor^t
  double worst_excess = 0.0;
  std::size_t worst_t = 0;
  bool within_bound = false;  // worst_excess <= 1.1
};

struct ContractionSetup {
  PeerSelectorConfig generator;
  std::uint32_t c = 1;
  std::size_t n_dims = 16;
  std::size_t t_max = 100;
  std::size_t n_trials = 500;
  double rho = 0.0;  // from estimate_rho
  /// false compares against q + p rho, the mean-square gossip rate.
  bool square_rho = true;
  double slack = 1.1;
  /// Rounds whose bound factor^t is below this are reported but not judged;
  /// a Monte-Carlo mean cannot resolve expectations far below 1/(trials * n_dims).
  double min_bound = 0.0;
};

/// Pure sparsified gossip (gamma = 0) from random X_0, mean e_t / e_0 over
/// trials with compensated summation, compared against slack * (q + p rho^2)^t.
/// Each trial runs its own generator after the stationary warm-up.
ContractionResult measure_contraction(const ContractionSetup& setup, std::uint64_t seed);

/// Consensus error sum_i ||x_i - mean||^2.
double consensus_error(const std::vector<ParameterVector>& models);
ParameterVector mean_model(const std::vector<ParameterVector>& models);

struct DConstants {
  double d1 = 0.0;
  double d2 = 0.0;
};

/// D1 = 2 / (1 - sqrt(q + p rho))^2, D2 = 2 / (1 - (q + p rho^2)). DomainError
/// if p is outside (0, 1], rho outside [0, 1), or a denominator vanishes.
DConstants d_constants(double p, double rho);

/// Right-hand side of the averaged-gradient bound for constant step size.
/// x0_consensus is ||X_0 - mean(X_0) 1^T||_F^2. DomainError for sigma = 0.
double theorem_bound(const TheoryConstants& k, double n, double T, const DConstants& d, double x0_consensus);

struct RoundRecord {
  std::uint64_t round = 0;
  std::size_t pairs = 0;
  std::uint64_t bytes_per_worker = 0;  // MODEL_VALUES frame bytes sent by a matched worker
  double min_bw = 0.0;                 // bottleneck over matched pairs, 0 with no pairs
  double mean_bw = 0.0;
  double consensus_err = 0.0;
  double mean_loss = 0.0;
  double cum_time = 0.0;
};

/// min and mean bandwidth of the matched pairs; both 0 for an empty matching.
std::pair<double, double> matched_bandwidth(const Matching& m, const BandwidthMatrix& b);

struct BandwidthStats {
  std::vector<double> min_per_round;
  std::vector<double> mean_per_round;
  double run_mean_min = 0.0;   // average bottleneck
  double run_mean_mean = 0.0;
};

/// Rounds without pairs are skipped in the run averages. ValidationError on empty input.
BandwidthStats bandwidth_stats(const std::vector<RoundRecord>& records);

inline constexpr const char* kCsvHeader =
    "round,pairs,bytes_per_worker,min_bw,mean_bw,consensus_err,mean_loss,cum_time";

std::string format_csv(const std::vector<RoundRecord>& records);
/// Throws IoError when the file cannot be written.
void export_csv(const std::vector<RoundRecord>& records, const std::filesystem::path& path);

}  // namespace saps
