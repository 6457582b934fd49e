#pragma once

// Domain types shared by every SAPS module: error kinds, the SplitMix64
// generator that keeps masks identical across workers, model vectors and the
// matrices that drive peer selection.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace saps {

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument or configuration value detected before any work is done.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent simulated-network setup, e.g. a transfer over a zero-bandwidth link.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A mathematical precondition does not hold (division by zero mixing, sigma = 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss/gradient or a non-convergent iteration.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class ProtocolFault {
  kBadMagic,
  kBadVersion,
  kTruncated,
  kCrcMismatch,
  kUnexpectedType,
  kMalformed,
  kCountMismatch,
  kRoundMismatch,
  kDuplicateAck,
  kUnknownWorker,
  kPeerMismatch,
};

const char* to_string(ProtocolFault fault);

class ProtocolError : public Error {
 public:
  ProtocolError(ProtocolFault fault, const std::string& what)
      : Error(std::string(to_string(fault)) + ": " + what), fault_(fault) {}

  ProtocolFault fault() const { return fault_; }

 private:
  ProtocolFault fault_;
};

// ---------------------------------------------------------------------------
// Deterministic PRNG

/// SplitMix64. The recurrence is fixed bit-for-bit so that every worker, in
/// any language, expands a round seed into the same mask.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t operator()() { return next(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t uniform_below(std::uint64_t bound);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  /// Uniform double in (0, 1].
  double uniform_open_closed() { return 1.0 - uniform01(); }
  /// Standard normal via Box-Muller; platform independent unlike <random>.
  double normal();

 private:
  std::uint64_t state_;
  std::optional<double> spare_normal_;
};

/// Independent stream seed for a sub-component (worker rank, trial index...).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Fisher-Yates shuffle of 0..n-1 driven by SplitMix64.
std::vector<std::uint32_t> random_permutation(std::uint32_t n, SplitMix64& rng);

// ---------------------------------------------------------------------------
// Model

/// A worker's dense model. Dimension is fixed at construction.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(std::size_t n_dims, double fill = 0.0) : values_(n_dims, fill) {}
  explicit ParameterVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  const std::vector<double>& values() const { return values_; }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  bool all_finite() const;

  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

 private:
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Network matrices

/// Symmetric pairwise link speeds in bytes/second with a zero diagonal.
class BandwidthMatrix {
 public:
  std::size_t n() const { return static_cast<std::size_t>(speeds_.rows()); }
  double operator()(std::size_t i, std::size_t j) const { return speeds_(i, j); }
  bool has_link(std::size_t i, std::size_t j) const { return speeds_(i, j) > 0.0; }
  const Eigen::MatrixXd& speeds() const { return speeds_; }

  /// Replace a single link speed, keeping the min rule and symmetry.
  void update_link(std::size_t i, std::size_t j, double bytes_per_sec);

 private:
  friend BandwidthMatrix symmetrize_bandwidth(const Eigen::MatrixXd& raw);
  explicit BandwidthMatrix(Eigen::MatrixXd speeds) : speeds_(std::move(speeds)) {}

  Eigen::MatrixXd speeds_;
};

/// B_ij = B_ji = min(raw_ij, raw_ji), diagonal zeroed. Throws ValidationError
/// on a non-square input or any negative / non-finite entry.
BandwidthMatrix symmetrize_bandwidth(const Eigen::MatrixXd& raw);

class AdjacencyMatrix {
 public:
  AdjacencyMatrix() = default;
  explicit AdjacencyMatrix(std::size_t n) : n_(n), edges_(n * n, 0) {}

  std::size_t n() const { return n_; }
  bool edge(std::size_t i, std::size_t j) const { return edges_[i * n_ + j] != 0; }
  /// Sets both (i,j) and (j,i); self-loops are ignored.
  void set_edge(std::size_t i, std::size_t j, bool on = true);
  std::size_t edge_count() const;

  friend bool operator==(const AdjacencyMatrix&, const AdjacencyMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> edges_;
};

/// Round at which each pair last exchanged models.
class TimestampMatrix {
 public:
  /// Entries start at -t_thres so nothing counts as recently connected at round 0.
  TimestampMatrix(std::size_t n, std::int64_t t_thres);

  std::size_t n() const { return n_; }
  std::int64_t at(std::size_t i, std::size_t j) const { return last_[i * n_ + j]; }
  void mark(std::size_t i, std::size_t j, std::int64_t round);

 private:
  std::size_t n_;
  std::vector<std::int64_t> last_;
};

// ---------------------------------------------------------------------------
// Matchings and gossip matrices

using WorkerPair = std::pair<std::uint32_t, std::uint32_t>;

class Matching {
 public:
  Matching() = default;

  /// Build from a mate array (mate[v] = partner or -1). Throws ValidationError
  /// if the mate relation is not symmetric.
  static Matching from_mates(const std::vector<int>& mate);
  /// Build from explicit pairs over n workers. Throws ValidationError if a worker repeats.
  static Matching from_pairs(std::size_t n, const std::vector<WorkerPair>& pairs);

  std::size_t n() const { return mate_.size(); }
  /// Pairs as (low, high), sorted ascending.
  const std::vector<WorkerPair>& pairs() const { return pairs_; }
  const std::vector<std::uint32_t>& unmatched() const { return unmatched_; }
  std::optional<std::uint32_t> peer_of(std::uint32_t worker) const;
  bool is_matched(std::uint32_t worker) const { return mate_[worker] >= 0; }
  std::size_t size() const { return pairs_.size(); }

  friend bool operator==(const Matching& a, const Matching& b) { return a.mate_ == b.mate_; }

 private:
  std::vector<int> mate_;
  std::vector<WorkerPair> pairs_;
  std::vector<std::uint32_t> unmatched_;
};

/// Pairwise-averaging mixing matrix: 1/2 on (i,i),(i,j),(j,i),(j,j) for each
/// matched pair, 1 on the diagonal for an unmatched worker.
class GossipMatrix {
 public:
  explicit GossipMatrix(const Matching& matching);

  std::size_t n() const { return static_cast<std::size_t>(weights_.rows()); }
  double operator()(std::size_t i, std::size_t j) const { return weights_(i, j); }
  const Eigen::MatrixXd& weights() const { return weights_; }

 private:
  Eigen::MatrixXd weights_;
};

/// Returns the name of the first violated invariant (row sums, column sums,
/// symmetry, idempotence) or nullopt when W passes within tol.
std::optional<std::string> gossip_invariant_violation(const Eigen::MatrixXd& w,
                                                      double tol = 1e-12);

// ---------------------------------------------------------------------------
// Configuration records

class CompressionConfig {
 public:
  explicit CompressionConfig(std::uint32_t c);

  std::uint32_t c() const { return c_; }
  double p() const { return 1.0 / c_; }
  double q() const { return 1.0 - 1.0 / c_; }

 private:
  std::uint32_t c_;
};

/// Constants of the smoothness / variance assumptions; only the bound evaluator reads them.
struct TheoryConstants {
  double sigma = 0.0;
  double zeta = 0.0;
  double lipschitz = 0.0;
  double f0_minus_fstar = 0.0;

  void validate() const;
};

}  // namespace saps
