#pragma once

// Self-check suite behind `saps verify`: matrix invariants, the matching
// oracle, mask/gossip commutation, contraction, rho estimation, the cost
// model and the wire codecs.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "saps/core.hpp"
#include "saps/matching.hpp"

namespace saps {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerificationOptions {
  bool quick = false;
  std::uint64_t seed = 20240601;
  /// Negative control: feed a non-doubly-stochastic W to the invariant suite.
  bool inject_bad_gossip = false;
};

/// Size of a maximum matching by exhaustive search; for small graphs only.
std::size_t brute_force_max_matching(const AdjacencyMatrix& g);

/// Random adjacency with independent edges of probability edge_p.
AdjacencyMatrix random_graph(std::size_t n, double edge_p, SplitMix64& rng);

std::vector<SuiteResult> run_verification_suite(const VerificationOptions& options, std::ostream* log = nullptr);

bool all_passed(const std::vector<SuiteResult>& results);

}  // namespace saps
