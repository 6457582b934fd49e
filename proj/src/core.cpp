#include "saps/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace saps {

namespace {
__extension__ using u128 = unsigned __int128;
}  // namespace

const char* to_string(ProtocolFault fault) {
  switch (fault) {
    case ProtocolFault::kBadMagic: return "bad magic";
    case ProtocolFault::kBadVersion: return "bad version";
    case ProtocolFault::kTruncated: return "truncated frame";
    case ProtocolFault::kCrcMismatch: return "crc mismatch";
    case ProtocolFault::kUnexpectedType: return "unexpected message type";
    case ProtocolFault::kMalformed: return "malformed frame";
    case ProtocolFault::kCountMismatch: return "value count mismatch";
    case ProtocolFault::kRoundMismatch: return "round mismatch";
    case ProtocolFault::kDuplicateAck: return "duplicate acknowledgment";
    case ProtocolFault::kUnknownWorker: return "unknown worker";
    case ProtocolFault::kPeerMismatch: return "peer mismatch";
  }
  return "protocol error";
}

std::uint64_t SplitMix64::uniform_below(std::uint64_t bound) {
  if (bound == 0) throw ValidationError("uniform_below: bound must be positive");
  // Lemire's multiply-shift with rejection; exact and platform independent.
  u128 m = static_cast<u128>(next()) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      m = static_cast<u128>(next()) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double SplitMix64::normal() {
  if (spare_normal_) {
    const double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  const double u1 = uniform_open_closed();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  SplitMix64 mix(master ^ (stream * 0xD1B54A32D192ED03ULL));
  mix.next();
  return mix.next();
}

std::vector<std::uint32_t> random_permutation(std::uint32_t n, SplitMix64& rng) {
  std::vector<std::uint32_t> perm(n);
  for (std::uint32_t i = 0; i < n; ++i) perm[i] = i;
  for (std::uint32_t i = n; i > 1; --i) {
    const auto j = static_cast<std::uint32_t>(rng.uniform_below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

bool ParameterVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------

BandwidthMatrix symmetrize_bandwidth(const Eigen::MatrixXd& raw) {
  if (raw.rows() != raw.cols()) {
    throw ValidationError("bandwidth matrix must be square");
  }
  const Eigen::Index n = raw.rows();
  Eigen::MatrixXd speeds = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = raw(i, j);
      if (!std::isfinite(v) || v < 0.0) {
        std::ostringstream msg;
        msg << "bandwidth entry (" << i << "," << j << ") must be finite and >= 0, got " << v;
        throw ValidationError(msg.str());
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::min(raw(i, j), raw(j, i));
      speeds(i, j) = v;
      speeds(j, i) = v;
    }
  }
  return BandwidthMatrix(std::move(speeds));
}

void BandwidthMatrix::update_link(std::size_t i, std::size_t j, double bytes_per_sec) {
  if (i >= n() || j >= n() || i == j) throw ValidationError("bandwidth update: bad worker pair");
  if (!std::isfinite(bytes_per_sec) || bytes_per_sec < 0.0) {
    throw ValidationError("bandwidth update: speed must be finite and >= 0");
  }
  const auto a = static_cast<Eigen::Index>(i);
  const auto b = static_cast<Eigen::Index>(j);
  speeds_(a, b) = bytes_per_sec;
  speeds_(b, a) = bytes_per_sec;
}

void AdjacencyMatrix::set_edge(std::size_t i, std::size_t j, bool on) {
  if (i == j) return;
  edges_[i * n_ + j] = on ? 1 : 0;
  edges_[j * n_ + i] = on ? 1 : 0;
}

std::size_t AdjacencyMatrix::edge_count() const {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i + 1; j < n_; ++j) count += edge(i, j) ? 1 : 0;
  return count;
}

TimestampMatrix::TimestampMatrix(std::size_t n, std::int64_t t_thres)
    : n_(n), last_(n * n, -t_thres) {}

void TimestampMatrix::mark(std::size_t i, std::size_t j, std::int64_t round) {
  last_[i * n_ + j] = round;
  last_[j * n_ + i] = round;
}

// ---------------------------------------------------------------------------

Matching Matching::from_mates(const std::vector<int>& mate) {
  Matching m;
  m.mate_ = mate;
  const auto n = static_cast<int>(mate.size());
  for (int v = 0; v < n; ++v) {
    const int u = mate[v];
    if (u < 0) {
      m.unmatched_.push_back(static_cast<std::uint32_t>(v));
      continue;
    }
    if (u >= n || u == v || mate[u] != v) {
      throw ValidationError("matching: mate relation is not a symmetric pairing");
    }
    if (v < u) m.pairs_.emplace_back(v, u);
  }
  return m;
}

Matching Matching::from_pairs(std::size_t n, const std::vector<WorkerPair>& pairs) {
  std::vector<int> mate(n, -1);
  for (auto [a, b] : pairs) {
    if (a >= n || b >= n || a == b || mate[a] >= 0 || mate[b] >= 0) {
      throw ValidationError("matching: pairs are not disjoint worker pairs");
    }
    mate[a] = static_cast<int>(b);
    mate[b] = static_cast<int>(a);
  }
  return from_mates(mate);
}

std::optional<std::uint32_t> Matching::peer_of(std::uint32_t worker) const {
  const int u = mate_.at(worker);
  if (u < 0) return std::nullopt;
  return static_cast<std::uint32_t>(u);
}

GossipMatrix::GossipMatrix(const Matching& matching)
    : weights_(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(matching.n()),
                                         static_cast<Eigen::Index>(matching.n()))) {
  for (auto [i, j] : matching.pairs()) {
    weights_(i, i) = 0.5;
    weights_(j, j) = 0.5;
    weights_(i, j) = 0.5;
    weights_(j, i) = 0.5;
  }
}

std::optional<std::string> gossip_invariant_violation(const Eigen::MatrixXd& w, double tol) {
  if (w.rows() != w.cols()) return "square";
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    if (std::abs(w.row(i).sum() - 1.0) > tol) return "row sums";
    if (std::abs(w.col(i).sum() - 1.0) > tol) return "column sums";
  }
  if ((w - w.transpose()).cwiseAbs().maxCoeff() > tol) return "symmetry";
  if ((w * w - w).cwiseAbs().maxCoeff() > tol) return "idempotence";
  return std::nullopt;
}

CompressionConfig::CompressionConfig(std::uint32_t c) : c_(c) {
  if (c == 0) throw ValidationError("compression ratio c must be >= 1");
}

void TheoryConstants::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!ok(sigma) || !ok(zeta) || !ok(lipschitz) || !ok(f0_minus_fstar)) {
    throw ValidationError("theory constants must be finite and nonnegative");
  }
}

}  // namespace saps
