#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "saps/core.hpp"

namespace saps {

/// Undirected simple graph over worker indices.
class Graph {
 public:
  explicit Graph(AdjacencyMatrix adjacency);
  static Graph from_edges(std::size_t n, const std::vector<WorkerPair>& edges);

  std::size_t n() const { return adjacency_.n(); }
  bool edge(std::size_t i, std::size_t j) const { return adjacency_.edge(i, j); }
  const std::vector<std::vector<std::uint32_t>>& neighbors() const { return neighbors_; }
  const AdjacencyMatrix& adjacency() const { return adjacency_; }

 private:
  AdjacencyMatrix adjacency_;
  std::vector<std::vector<std::uint32_t>> neighbors_;
};

/// Maximum-cardinality matching (Edmonds' blossom algorithm, O(n^3)).
/// Roots and neighbors are explored in ascending index order.
Matching max_matching(const Graph& g);

/// Maximum-cardinality matching computed after relabeling vertices by a
/// uniformly random permutation, so every maximum matching reachable under
/// some processing order can be returned.
Matching randomly_max_match(const Graph& g, SplitMix64& rng);

/// Q: pairs with R_ij > t - t_thres.
AdjacencyMatrix recently_connected(const TimestampMatrix& r, std::int64_t t_thres, std::int64_t t);

/// Component label per vertex (labels are dense, in order of lowest member).
std::vector<std::uint32_t> connected_components(const AdjacencyMatrix& adjacency);

bool is_connected(const AdjacencyMatrix& adjacency);

/// True when the recently-connected graph spans all workers in one component.
bool if_connected(const TimestampMatrix& r, std::int64_t t_thres, std::int64_t t);

/// Bridging candidates: available edges whose endpoints lie in different
/// recently-connected components.
AdjacencyMatrix get_over_time_matrix(const TimestampMatrix& r, const AdjacencyMatrix& available,
                                     std::int64_t t_thres, std::int64_t t);

/// Positive-bandwidth edges among workers that `m` left unmatched.
AdjacencyMatrix get_unmatch(const BandwidthMatrix& b, const Matching& m);

/// Edges with positive bandwidth.
AdjacencyMatrix positive_links(const BandwidthMatrix& b);

/// Matching union; throws ValidationError if the two overlap.
Matching merge_matchings(const Matching& first, const Matching& second);

struct GossipRound {
  GossipMatrix w;
  Matching matching;
  bool bridged = false;   // RC graph was disconnected; matched on bridging edges
  bool fallback = false;  // second match over unmatched workers ran
};

/// One round of bandwidth-adaptive gossip-matrix generation. Matches on B*
/// when the recently-connected graph is connected, otherwise on bridging
/// edges; if fewer than floor(n/2) pairs result, matches leftover workers on
/// the full positive-bandwidth graph. Workers still unmatched get a self-loop.
/// The caller records the matching into R.
GossipRound generate_gossip_matrix(const BandwidthMatrix& b, const AdjacencyMatrix& b_star,
                                   const TimestampMatrix& r, std::int64_t t_thres, std::size_t n,
                                   std::int64_t t, SplitMix64& rng);

/// R_ij = R_ji = t for every matched pair.
void record_matching(TimestampMatrix& r, const Matching& m, std::int64_t t);

// ---------------------------------------------------------------------------

enum class PeerSelection {
  kAdaptive,  // bandwidth-adaptive generator above
  kRandom,    // random maximum matching over all positive-bandwidth links
  kRing,      // alternating perfect matchings of the cycle 0-1-...-(n-1)-0
};

PeerSelection parse_peer_selection(const std::string& name);
const char* to_string(PeerSelection mode);

/// Matching of the ring baseline at round t.
Matching ring_matching(std::size_t n, std::int64_t t);

struct PeerSelectorConfig {
  BandwidthMatrix bandwidth;
  AdjacencyMatrix filtered;  // B*
  std::int64_t t_thres = 10;
  PeerSelection mode = PeerSelection::kAdaptive;
};

/// Stateful per-round matching source; owns R and the round counter.
class PeerSelector {
 public:
  PeerSelector(PeerSelectorConfig config, std::uint64_t seed);

  /// Matching for the current round without touching R or the round counter.
  GossipRound propose();
  /// Records `m` into R for the current round and advances the round.
  void commit(const Matching& m);
  /// propose() then commit().
  GossipRound next();

  std::int64_t round() const { return round_; }
  const TimestampMatrix& timestamps() const { return timestamps_; }
  const PeerSelectorConfig& config() const { return config_; }
  void update_bandwidth(std::size_t i, std::size_t j, double bytes_per_sec);

 private:
  PeerSelectorConfig config_;
  TimestampMatrix timestamps_;
  SplitMix64 rng_;
  std::int64_t round_ = 0;
};

}  // namespace saps
