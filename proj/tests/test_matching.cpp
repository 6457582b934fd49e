#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "saps/matching.hpp"

using namespace saps;

namespace {

// Exhaustive maximum matching: either leave the lowest free vertex out or pair it.
std::size_t brute(const AdjacencyMatrix& g, std::vector<char>& used, std::size_t from) {
  std::size_t v = from;
  while (v < g.n() && used[v]) ++v;
  if (v >= g.n()) return 0;
  used[v] = 1;
  std::size_t best = brute(g, used, v + 1);
  for (std::size_t u = v + 1; u < g.n(); ++u) {
    if (used[u] || !g.edge(v, u)) continue;
    used[u] = 1;
    best = std::max(best, 1 + brute(g, used, v + 1));
    used[u] = 0;
  }
  used[v] = 0;
  return best;
}

std::size_t brute(const AdjacencyMatrix& g) {
  std::vector<char> used(g.n(), 0);
  return brute(g, used, 0);
}

bool is_valid_matching_of(const Matching& m, const AdjacencyMatrix& g) {
  for (auto [a, b] : m.pairs())
    if (!g.edge(a, b)) return false;
  return true;
}

BandwidthMatrix complete_bw(std::size_t n, double v = 1.0) {
  Eigen::MatrixXd raw = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), v);
  return symmetrize_bandwidth(raw);
}

AdjacencyMatrix complete_adj(std::size_t n) {
  AdjacencyMatrix a(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a.set_edge(i, j);
  return a;
}

}  // namespace

TEST_CASE("max matching examples") {
  CHECK(max_matching(Graph(complete_adj(4))).size() == 2);
  CHECK(max_matching(Graph(complete_adj(4))).unmatched().empty());
  const Matching path = max_matching(Graph::from_edges(3, {{0, 1}, {1, 2}}));
  CHECK(path.size() == 1);
  CHECK(path.unmatched().size() == 1);
  CHECK(max_matching(Graph::from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}})).size() == 2);
}

TEST_CASE("blossom needs contraction: two triangles joined by a path") {
  // 0-1-2 triangle, 2-3, 3-4, 4-5-6 triangle... maximum is 3 (7 vertices).
  const Graph g = Graph::from_edges(7, {{0, 1}, {1, 2}, {2, 0}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {6, 4}});
  CHECK(max_matching(g).size() == 3);
  // Petersen graph has a perfect matching.
  const Graph p = Graph::from_edges(10, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {0, 5}, {1, 6}, {2, 7},
                                        {3, 8}, {4, 9}, {5, 7}, {7, 9}, {9, 6}, {6, 8}, {8, 5}});
  CHECK(max_matching(p).size() == 5);
}

TEST_CASE("blossom and randomized matching equal brute force on random graphs") {
  SplitMix64 rng(11);
  int graphs = 0;
  for (double prob : {0.2, 0.5, 0.8}) {
    for (int k = 0; k < 80; ++k) {
      const std::size_t n = 1 + rng.uniform_below(10);
      AdjacencyMatrix g(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          if (rng.uniform01() < prob) g.set_edge(i, j);
      const std::size_t best = brute(g);
      const Matching m = max_matching(Graph(g));
      REQUIRE(m.size() == best);
      REQUIRE(is_valid_matching_of(m, g));
      const Matching r = randomly_max_match(Graph(g), rng);
      REQUIRE(r.size() == best);
      REQUIRE(is_valid_matching_of(r, g));
      ++graphs;
    }
  }
  CHECK(graphs >= 200);
}

TEST_CASE("randomized matching reaches both perfect matchings of the 4-cycle") {
  const Graph c4 = Graph::from_edges(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  SplitMix64 rng(1);
  int a = 0, b = 0;
  const int trials = 10000;
  for (int k = 0; k < trials; ++k) {
    const Matching m = randomly_max_match(c4, rng);
    REQUIRE(m.size() == 2);
    if (m.peer_of(0) == 1u) ++a;
    else if (m.peer_of(0) == 3u) ++b;
  }
  CHECK(a + b == trials);
  CHECK(a >= 0.4 * trials);
  CHECK(a <= 0.6 * trials);
  CHECK(b >= 0.4 * trials);
  CHECK(b <= 0.6 * trials);
}

TEST_CASE("randomized matching degenerate graphs") {
  SplitMix64 rng(2);
  const Matching single = randomly_max_match(Graph::from_edges(2, {{0, 1}}), rng);
  CHECK(single.pairs() == std::vector<WorkerPair>{{0, 1}});
  const Matching empty = randomly_max_match(Graph(AdjacencyMatrix(5)), rng);
  CHECK(empty.size() == 0);
  CHECK(empty.unmatched().size() == 5);
}

TEST_CASE("recently connected test") {
  const std::int64_t tt = 10;
  TimestampMatrix r(4, tt);
  CHECK_FALSE(if_connected(r, tt, 0));
  for (std::uint32_t i = 0; i < 4; ++i)
    for (std::uint32_t j = i + 1; j < 4; ++j) r.mark(i, j, 7);
  CHECK(if_connected(r, tt, 7));

  TimestampMatrix split(4, tt);
  split.mark(0, 1, 20);
  split.mark(2, 3, 20);
  split.mark(1, 2, 5);  // stale cross edge
  CHECK_FALSE(if_connected(split, tt, 20));
  CHECK(if_connected(split, tt, 14));  // 5 > 14 - 10
}

TEST_CASE("bridging matrix keeps only cross-component available edges") {
  const std::int64_t tt = 10;
  TimestampMatrix r(4, tt);
  r.mark(0, 1, 3);
  r.mark(2, 3, 3);
  const AdjacencyMatrix e = get_over_time_matrix(r, complete_adj(4), tt, 4);
  CHECK(e.edge_count() == 4);
  CHECK_FALSE(e.edge(0, 1));
  CHECK_FALSE(e.edge(2, 3));
  CHECK(e.edge(0, 2));
  CHECK(e.edge(1, 3));

  const TimestampMatrix fresh(5, tt);
  AdjacencyMatrix avail = complete_adj(5);
  avail.set_edge(0, 4, false);
  CHECK(get_over_time_matrix(fresh, avail, tt, 0) == avail);
}

TEST_CASE("unmatched fallback graph") {
  const BandwidthMatrix b = complete_bw(4);
  CHECK(get_unmatch(b, Matching::from_pairs(4, {{0, 1}, {2, 3}})).edge_count() == 0);
  const AdjacencyMatrix two = get_unmatch(b, Matching::from_pairs(4, {{0, 1}}));
  CHECK(two.edge_count() == 1);
  CHECK(two.edge(2, 3));
  CHECK(get_unmatch(complete_bw(3), Matching::from_pairs(3, {{0, 1}})).edge_count() == 0);
}

TEST_CASE("generator examples") {
  SplitMix64 rng(4);
  {
    const BandwidthMatrix b = complete_bw(2);
    const TimestampMatrix r(2, 10);
    const GossipRound g = generate_gossip_matrix(b, complete_adj(2), r, 10, 2, 0, rng);
    CHECK(g.matching.pairs() == std::vector<WorkerPair>{{0, 1}});
    CHECK(g.w.weights().isApproxToConstant(0.5));
  }
  {
    const TimestampMatrix r(4, 10);
    const GossipRound g = generate_gossip_matrix(complete_bw(4), complete_adj(4), r, 10, 4, 0, rng);
    CHECK(g.matching.size() == 2);
    CHECK(g.matching.unmatched().empty());
  }
  {
    const TimestampMatrix r(3, 10);
    const GossipRound g = generate_gossip_matrix(complete_bw(3), complete_adj(3), r, 10, 3, 0, rng);
    CHECK(g.matching.size() == 1);
    REQUIRE(g.matching.unmatched().size() == 1);
    const auto u = g.matching.unmatched()[0];
    CHECK(g.w(u, u) == 1.0);
    CHECK(g.w.weights().row(u).sum() == 1.0);
    CHECK_FALSE(gossip_invariant_violation(g.w.weights()).has_value());
  }
  {
    const TimestampMatrix r(1, 10);
    CHECK_THROWS_AS(generate_gossip_matrix(complete_bw(1), complete_adj(1), r, 10, 1, 0, rng), ValidationError);
  }
}

TEST_CASE("generator branches: connected RC uses B*, fallback fills from full B") {
  SplitMix64 rng(9);
  const std::int64_t tt = 5;
  TimestampMatrix r(4, tt);
  for (std::uint32_t i = 0; i < 4; ++i)
    for (std::uint32_t j = i + 1; j < 4; ++j) r.mark(i, j, 10);
  AdjacencyMatrix bstar(4);
  bstar.set_edge(0, 1);  // B* allows only one pair
  const GossipRound g = generate_gossip_matrix(complete_bw(4), bstar, r, tt, 4, 10, rng);
  CHECK_FALSE(g.bridged);
  CHECK(g.fallback);
  CHECK(g.matching.size() == 2);
  CHECK(*g.matching.peer_of(0) == 1);
  CHECK(*g.matching.peer_of(2) == 3);

  const TimestampMatrix fresh(4, tt);
  const GossipRound b0 = generate_gossip_matrix(complete_bw(4), bstar, fresh, tt, 4, 0, rng);
  CHECK(b0.bridged);
  CHECK(b0.matching.size() == 2);
}

TEST_CASE("every matched edge comes from B* or a bridging / fallback round") {
  SplitMix64 brng(21);
  const std::size_t n = 12;
  Eigen::MatrixXd raw(n, n);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = brng.uniform01();
  const BandwidthMatrix b = symmetrize_bandwidth(raw);
  AdjacencyMatrix bstar(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (b(i, j) > 0.6) bstar.set_edge(i, j);
  PeerSelector sel({b, bstar, 5, PeerSelection::kAdaptive}, 77);
  for (int t = 0; t < 300; ++t) {
    const GossipRound g = sel.next();
    REQUIRE_FALSE(gossip_invariant_violation(g.w.weights()).has_value());
    for (auto [i, j] : g.matching.pairs()) {
      REQUIRE(b.has_link(i, j));
      if (!bstar.edge(i, j)) REQUIRE((g.bridged || g.fallback));
    }
  }
}

TEST_CASE("cumulative matched edges connect the positive-bandwidth graph") {
  SplitMix64 rng(31);
  for (std::size_t n : {2u, 5u, 8u, 16u, 32u}) {
    // sparse random connected graph: a random spanning path plus random extras
    Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const auto perm = random_permutation(static_cast<std::uint32_t>(n), rng);
    for (std::size_t k = 0; k + 1 < n; ++k) raw(perm[k], perm[k + 1]) = raw(perm[k + 1], perm[k]) = 1 + rng.uniform01();
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = rng.uniform_below(n), j = rng.uniform_below(n);
      if (i != j) raw(i, j) = raw(j, i) = 1 + rng.uniform01();
    }
    const BandwidthMatrix b = symmetrize_bandwidth(raw);
    PeerSelectorConfig cfg{b, AdjacencyMatrix(n), 10, PeerSelection::kAdaptive};
    // B* = edges above the median
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (b(i, j) > 0) v.push_back(b(i, j));
    std::sort(v.begin(), v.end());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (b(i, j) >= v[v.size() / 2]) cfg.filtered.set_edge(i, j);
    PeerSelector sel(cfg, rng.next());
    AdjacencyMatrix seen(n);
    const auto rounds = 50 * static_cast<int>(std::ceil(std::log2(static_cast<double>(n))));
    for (int t = 0; t < rounds; ++t) {
      const GossipRound g = sel.next();
      for (auto [i, j] : g.matching.pairs()) seen.set_edge(i, j);
    }
    CHECK(is_connected(seen));
  }
}

TEST_CASE("ring baseline alternates the two perfect matchings of the cycle") {
  const Matching even = ring_matching(6, 0);
  const Matching odd = ring_matching(6, 1);
  CHECK(even.pairs() == std::vector<WorkerPair>{{0, 1}, {2, 3}, {4, 5}});
  CHECK(odd.pairs() == std::vector<WorkerPair>{{0, 5}, {1, 2}, {3, 4}});
  CHECK(ring_matching(6, 2) == even);
  CHECK(ring_matching(5, 1).size() == 2);
}

TEST_CASE("peer selector propose does not advance state") {
  PeerSelector sel({complete_bw(4), complete_adj(4), 3, PeerSelection::kRandom}, 5);
  sel.propose();
  CHECK(sel.round() == 0);
  const GossipRound g = sel.next();
  CHECK(sel.round() == 1);
  for (auto [i, j] : g.matching.pairs()) CHECK(sel.timestamps().at(i, j) == 0);
  CHECK_THROWS_AS(parse_peer_selection("greedy"), ValidationError);
}
