#include "saps/matching.hpp"

#include <deque>
#include <numeric>

namespace saps {

Graph::Graph(AdjacencyMatrix adjacency)
    : adjacency_(std::move(adjacency)), neighbors_(adjacency_.n()) {
  const std::size_t n = adjacency_.n();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && adjacency_.edge(i, j)) neighbors_[i].push_back(static_cast<std::uint32_t>(j));
    }
  }
}

Graph Graph::from_edges(std::size_t n, const std::vector<WorkerPair>& edges) {
  AdjacencyMatrix adj(n);
  for (auto [a, b] : edges) {
    if (a >= n || b >= n) throw ValidationError("graph edge endpoint out of range");
    adj.set_edge(a, b);
  }
  return Graph(std::move(adj));
}

namespace {

// Edmonds' algorithm with explicit blossom contraction via base[] labels.
class BlossomMatcher {
 public:
  explicit BlossomMatcher(const Graph& g)
      : g_(g), n_(static_cast<int>(g.n())), match_(n_, -1), parent_(n_), base_(n_),
        used_(n_), in_blossom_(n_) {}

  std::vector<int> run() {
    for (int root = 0; root < n_; ++root) {
      if (match_[root] != -1) continue;
      int v = find_augmenting_path(root);
      while (v != -1) {
        const int pv = parent_[v];
        const int next = match_[pv];
        match_[v] = pv;
        match_[pv] = v;
        v = next;
      }
    }
    return match_;
  }

 private:
  int lowest_common_ancestor(int a, int b) {
    std::vector<char> seen(n_, 0);
    for (;;) {
      a = base_[a];
      seen[a] = 1;
      if (match_[a] == -1) break;
      a = parent_[match_[a]];
    }
    for (;;) {
      b = base_[b];
      if (seen[b]) return b;
      b = parent_[match_[b]];
    }
  }

  void mark_path(int v, int b, int child) {
    while (base_[v] != b) {
      in_blossom_[base_[v]] = 1;
      in_blossom_[base_[match_[v]]] = 1;
      parent_[v] = child;
      child = match_[v];
      v = parent_[match_[v]];
    }
  }

  int find_augmenting_path(int root) {
    std::fill(used_.begin(), used_.end(), 0);
    std::fill(parent_.begin(), parent_.end(), -1);
    std::iota(base_.begin(), base_.end(), 0);
    used_[root] = 1;
    std::deque<int> queue{root};
    while (!queue.empty()) {
      const int v = queue.front();
      queue.pop_front();
      for (std::uint32_t to_u : g_.neighbors()[v]) {
        const int to = static_cast<int>(to_u);
        if (base_[v] == base_[to] || match_[v] == to) continue;
        if (to == root || (match_[to] != -1 && parent_[match_[to]] != -1)) {
          // Odd cycle: contract the blossom onto its base.
          const int cur_base = lowest_common_ancestor(v, to);
          std::fill(in_blossom_.begin(), in_blossom_.end(), 0);
          mark_path(v, cur_base, to);
          mark_path(to, cur_base, v);
          for (int i = 0; i < n_; ++i) {
            if (in_blossom_[base_[i]]) {
              base_[i] = cur_base;
              if (!used_[i]) {
                used_[i] = 1;
                queue.push_back(i);
              }
            }
          }
        } else if (parent_[to] == -1) {
          parent_[to] = v;
          if (match_[to] == -1) return to;
          used_[match_[to]] = 1;
          queue.push_back(match_[to]);
        }
      }
    }
    return -1;
  }

  const Graph& g_;
  int n_;
  std::vector<int> match_;
  std::vector<int> parent_;
  std::vector<int> base_;
  std::vector<char> used_;
  std::vector<char> in_blossom_;
};

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

Matching max_matching(const Graph& g) { return Matching::from_mates(BlossomMatcher(g).run()); }

Matching randomly_max_match(const Graph& g, SplitMix64& rng) {
  const std::size_t n = g.n();
  // perm[v] is the processing label of vertex v.
  const auto perm = random_permutation(static_cast<std::uint32_t>(n), rng);
  AdjacencyMatrix relabeled(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (g.edge(i, j)) relabeled.set_edge(perm[i], perm[j]);
  const std::vector<int> mate_relabeled = BlossomMatcher(Graph(std::move(relabeled))).run();

  std::vector<std::uint32_t> inverse(n);
  for (std::size_t v = 0; v < n; ++v) inverse[perm[v]] = static_cast<std::uint32_t>(v);
  std::vector<int> mate(n, -1);
  for (std::size_t label = 0; label < n; ++label) {
    const int m = mate_relabeled[label];
    if (m >= 0) mate[inverse[label]] = static_cast<int>(inverse[static_cast<std::size_t>(m)]);
  }
  return Matching::from_mates(mate);
}

AdjacencyMatrix recently_connected(const TimestampMatrix& r, std::int64_t t_thres, std::int64_t t) {
  const std::size_t n = r.n();
  AdjacencyMatrix q(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (r.at(i, j) > t - t_thres) q.set_edge(i, j);
  return q;
}

std::vector<std::uint32_t> connected_components(const AdjacencyMatrix& adjacency) {
  const std::size_t n = adjacency.n();
  DisjointSets sets(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (adjacency.edge(i, j)) sets.unite(i, j);
  std::vector<std::uint32_t> label(n);
  std::vector<std::int64_t> label_of_root(n, -1);
  std::uint32_t next = 0;
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t root = sets.find(v);
    if (label_of_root[root] < 0) label_of_root[root] = next++;
    label[v] = static_cast<std::uint32_t>(label_of_root[root]);
  }
  return label;
}

bool is_connected(const AdjacencyMatrix& adjacency) {
  const auto label = connected_components(adjacency);
  for (auto l : label)
    if (l != 0) return false;
  return true;
}

bool if_connected(const TimestampMatrix& r, std::int64_t t_thres, std::int64_t t) {
  return is_connected(recently_connected(r, t_thres, t));
}

AdjacencyMatrix get_over_time_matrix(const TimestampMatrix& r, const AdjacencyMatrix& available,
                                     std::int64_t t_thres, std::int64_t t) {
  if (available.n() != r.n()) throw ValidationError("get_over_time_matrix: size mismatch");
  const auto component = connected_components(recently_connected(r, t_thres, t));
  const std::size_t n = r.n();
  AdjacencyMatrix e(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (component[i] != component[j] && available.edge(i, j)) e.set_edge(i, j);
  return e;
}

AdjacencyMatrix get_unmatch(const BandwidthMatrix& b, const Matching& m) {
  const std::size_t n = b.n();
  AdjacencyMatrix e(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (m.is_matched(i)) continue;
    for (std::uint32_t j = i + 1; j < n; ++j) {
      if (!m.is_matched(j) && b.has_link(i, j)) e.set_edge(i, j);
    }
  }
  return e;
}

AdjacencyMatrix positive_links(const BandwidthMatrix& b) {
  AdjacencyMatrix a(b.n());
  for (std::size_t i = 0; i < b.n(); ++i)
    for (std::size_t j = i + 1; j < b.n(); ++j)
      if (b.has_link(i, j)) a.set_edge(i, j);
  return a;
}

Matching merge_matchings(const Matching& first, const Matching& second) {
  if (first.n() != second.n()) throw ValidationError("merge_matchings: size mismatch");
  std::vector<WorkerPair> pairs = first.pairs();
  pairs.insert(pairs.end(), second.pairs().begin(), second.pairs().end());
  return Matching::from_pairs(first.n(), pairs);
}

GossipRound generate_gossip_matrix(const BandwidthMatrix& b, const AdjacencyMatrix& b_star,
                                   const TimestampMatrix& r, std::int64_t t_thres, std::size_t n,
                                   std::int64_t t, SplitMix64& rng) {
  if (n < 2) throw ValidationError("generate_gossip_matrix: need at least 2 workers");
  if (b.n() != n || b_star.n() != n || r.n() != n) {
    throw ValidationError("generate_gossip_matrix: matrix sizes disagree with n");
  }
  bool bridged = false;
  AdjacencyMatrix candidates = b_star;
  if (!if_connected(r, t_thres, t)) {
    candidates = get_over_time_matrix(r, positive_links(b), t_thres, t);
    bridged = true;
  }
  Matching match = randomly_max_match(Graph(std::move(candidates)), rng);
  bool fallback = false;
  if (match.size() < n / 2) {
    const Matching extra = randomly_max_match(Graph(get_unmatch(b, match)), rng);
    match = merge_matchings(match, extra);
    fallback = true;
  }
  GossipMatrix w(match);
  return {std::move(w), std::move(match), bridged, fallback};
}

void record_matching(TimestampMatrix& r, const Matching& m, std::int64_t t) {
  for (auto [i, j] : m.pairs()) r.mark(i, j, t);
}

// ---------------------------------------------------------------------------

PeerSelection parse_peer_selection(const std::string& name) {
  if (name == "adaptive") return PeerSelection::kAdaptive;
  if (name == "random") return PeerSelection::kRandom;
  if (name == "ring") return PeerSelection::kRing;
  throw ValidationError("unknown peer selection mode '" + name + "'");
}

const char* to_string(PeerSelection mode) {
  switch (mode) {
    case PeerSelection::kAdaptive: return "adaptive";
    case PeerSelection::kRandom: return "random";
    case PeerSelection::kRing: return "ring";
  }
  return "?";
}

Matching ring_matching(std::size_t n, std::int64_t t) {
  std::vector<int> mate(n, -1);
  const std::size_t offset = static_cast<std::size_t>(t & 1);
  for (std::size_t k = 0; k + 1 < n; k += 2) {
    const std::size_t a = (offset + k) % n;
    const std::size_t b = (offset + k + 1) % n;
    if (mate[a] >= 0 || mate[b] >= 0 || a == b) continue;
    mate[a] = static_cast<int>(b);
    mate[b] = static_cast<int>(a);
  }
  return Matching::from_mates(mate);
}

PeerSelector::PeerSelector(PeerSelectorConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      timestamps_(config_.bandwidth.n(), config_.t_thres),
      rng_(seed) {
  if (config_.bandwidth.n() < 2) throw ValidationError("peer selector needs at least 2 workers");
  if (config_.filtered.n() != config_.bandwidth.n()) {
    throw ValidationError("filtered graph size disagrees with bandwidth matrix");
  }
  if (config_.t_thres < 1) throw ValidationError("T_thres must be >= 1");
}

GossipRound PeerSelector::propose() {
  const std::size_t n = config_.bandwidth.n();
  GossipRound out{GossipMatrix(Matching::from_mates(std::vector<int>(n, -1))), {}, false, false};
  switch (config_.mode) {
    case PeerSelection::kAdaptive:
      out = generate_gossip_matrix(config_.bandwidth, config_.filtered, timestamps_,
                                   config_.t_thres, n, round_, rng_);
      break;
    case PeerSelection::kRandom: {
      Matching m = randomly_max_match(Graph(positive_links(config_.bandwidth)), rng_);
      out = GossipRound{GossipMatrix(m), std::move(m), false, false};
      break;
    }
    case PeerSelection::kRing: {
      Matching m = ring_matching(n, round_);
      out = GossipRound{GossipMatrix(m), std::move(m), false, false};
      break;
    }
  }
  return out;
}

void PeerSelector::commit(const Matching& m) {
  record_matching(timestamps_, m, round_);
  ++round_;
}

GossipRound PeerSelector::next() {
  GossipRound out = propose();
  commit(out.matching);
  return out;
}

void PeerSelector::update_bandwidth(std::size_t i, std::size_t j, double bytes_per_sec) {
  config_.bandwidth.update_link(i, j, bytes_per_sec);
}

}  // namespace saps
