#include "saps/verification.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "saps/analysis.hpp"
#include "saps/coordinator.hpp"
#include "saps/experiment.hpp"
#include "saps/sparsify.hpp"
#include "saps/wire.hpp"

namespace saps {

AdjacencyMatrix random_graph(std::size_t n, double edge_p, SplitMix64& rng) {
  AdjacencyMatrix g(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform01() < edge_p) g.set_edge(i, j);
  return g;
}

namespace {

std::size_t brute_force(const AdjacencyMatrix& g, std::vector<char>& used, std::size_t from) {
  const std::size_t n = g.n();
  while (from < n && used[from]) ++from;
  if (from >= n) return 0;
  used[from] = 1;
  std::size_t best = brute_force(g, used, from + 1);  // leave `from` unmatched
  for (std::size_t u = from + 1; u < n; ++u) {
    if (used[u] || !g.edge(from, u)) continue;
    used[u] = 1;
    best = std::max(best, 1 + brute_force(g, used, from + 1));
    used[u] = 0;
  }
  used[from] = 0;
  return best;
}

bool matching_is_valid(const Matching& m, const AdjacencyMatrix& g) {
  for (auto [a, b] : m.pairs())
    if (!g.edge(a, b)) return false;
  return true;
}

using Check = std::function<std::string()>;  // empty string means pass

SuiteResult run_suite(const std::string& name, const Check& check, std::ostream* log) {
  SuiteResult r;
  r.name = name;
  const auto start = std::chrono::steady_clock::now();
  try {
    r.detail = check();
    r.passed = r.detail.empty();
  } catch (const std::exception& e) {
    r.detail = std::string("unexpected exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (r.passed) r.detail = "ok";
  if (log) {
    *log << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.seconds << " s): " << r.detail << "\n";
  }
  return r;
}

PeerSelectorConfig uniform_generator(std::size_t n, SplitMix64& rng, PeerSelection mode = PeerSelection::kAdaptive) {
  BandwidthMatrix b = uniform_bandwidth(n, 0.0, 5e6, rng);
  return PeerSelectorConfig{b, get_new_connected_graph(b, default_bandwidth_threshold(b)), 10, mode};
}

std::string gossip_invariants(const VerificationOptions& opt) {
  SplitMix64 rng(derive_seed(opt.seed, 1));
  const std::size_t sizes[] = {2, 3, 4, 8, 16, 32};
  const std::size_t per_size = opt.quick ? 200 : 1700;
  std::size_t checked = 0;
  for (std::size_t n : sizes) {
    PeerSelector sel(uniform_generator(n, rng), rng.next());
    for (std::size_t k = 0; k < per_size; ++k) {
      const GossipRound g = sel.next();
      if (auto bad = gossip_invariant_violation(g.w.weights())) {
        return "n=" + std::to_string(n) + " round " + std::to_string(k) + ": " + *bad;
      }
      ++checked;
    }
  }
  if (opt.inject_bad_gossip) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(4, 4);
    w(0, 0) = 0.9;
    w(0, 1) = 0.2;
    w(1, 0) = 0.1;
    w(1, 1) = 0.8;
    if (auto bad = gossip_invariant_violation(w)) return "injected matrix violates " + *bad;
  }
  (void)checked;
  return {};
}

std::string matching_oracle(const VerificationOptions& opt) {
  SplitMix64 rng(derive_seed(opt.seed, 2));
  const double probs[] = {0.2, 0.5, 0.8};
  const std::size_t graphs = opt.quick ? 60 : 200;
  for (std::size_t k = 0; k < graphs; ++k) {
    const std::size_t n = 2 + rng.uniform_below(9);
    const AdjacencyMatrix adj = random_graph(n, probs[k % 3], rng);
    const Graph g(adj);
    const std::size_t expect = brute_force_max_matching(adj);
    const Matching m = max_matching(g);
    const Matching r = randomly_max_match(g, rng);
    if (!matching_is_valid(m, adj) || !matching_is_valid(r, adj)) return "matching uses a non-edge";
    if (m.size() != expect || r.size() != expect) {
      std::ostringstream s;
      s << "graph " << k << " (n=" << n << "): blossom " << m.size() << ", randomized " << r.size()
        << ", exhaustive " << expect;
      return s.str();
    }
  }
  return {};
}

std::string mask_commutation(const VerificationOptions& opt) {
  SplitMix64 rng(derive_seed(opt.seed, 3));
  const std::size_t ns[] = {2, 4, 8};
  const std::size_t dims[] = {1, 3, 17};
  const std::uint32_t cs[] = {1, 2, 10};
  const std::size_t instances = opt.quick ? 300 : 1000;
  double worst = 0.0;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = ns[k % 3];
    const std::size_t dim = dims[(k / 3) % 3];
    Eigen::MatrixXd a(dim, n);
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();
    const MaskStream mask = generate_mask(rng.next(), cs[k % 3], dim);
    Eigen::MatrixXd m(dim, n);
    for (std::size_t i = 0; i < dim; ++i) m.row(i).setConstant(mask.included(i) ? 1.0 : 0.0);
    AdjacencyMatrix complete(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) complete.set_edge(i, j);
    const Eigen::MatrixXd w = GossipMatrix(randomly_max_match(Graph(complete), rng)).weights();
    const Eigen::MatrixXd lhs = a.cwiseProduct(m) * w;
    const Eigen::MatrixXd rhs = (a * w).cwiseProduct(m);
    worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  if (worst > 1e-12) return "max deviation " + std::to_string(worst);
  return {};
}

std::string contraction(const VerificationOptions& opt) {
  // Two workers: the mixing factor q + p rho^2 is exact (rho = 0). Larger
  // networks are checked against the mean-square gossip rate q + p rho, which
  // is what the expectation argument supports for a single W step. Only
  // rounds whose bound stays above 5e-2 are judged.
  SplitMix64 rng(derive_seed(opt.seed, 4));
  const std::size_t trials = opt.quick ? 500 : 2000;
  std::ostringstream fails;
  struct Case {
    std::size_t n;
    std::uint32_t c;
  };
  for (Case cs : {Case{2, 1}, Case{2, 2}, Case{2, 10}, Case{4, 2}, Case{8, 10}}) {
    if (opt.quick && cs.n == 8) continue;
    const PeerSelectorConfig gen = uniform_generator(cs.n, rng);
    const SpectralEstimate est = estimate_rho(gen, 1000, rng.next());
    ContractionSetup setup{gen};
    setup.c = cs.c;
    setup.n_dims = 64;
    setup.t_max = 30;
    setup.n_trials = trials;
    setup.rho = est.rho;
    setup.square_rho = cs.n == 2;
    setup.min_bound = 5e-2;
    const ContractionResult r = measure_contraction(setup, rng.next());
    if (!r.within_bound) {
      fails << "n=" << cs.n << " c=" << cs.c << ": ratio exceeds bound by " << r.worst_excess << "x at t="
            << r.worst_t << "; ";
    }
  }
  return fails.str();
}

std::string rho_estimation(const VerificationOptions& opt) {
  SplitMix64 rng(derive_seed(opt.seed, 5));
  std::ostringstream fails;
  // n = 2, always matched.
  {
    const Eigen::MatrixXd w = GossipMatrix(Matching::from_pairs(2, {{0, 1}})).weights();
    const SpectralEstimate e = estimate_rho([&] { return w; }, 100);
    if (std::abs(e.rho) > 1e-9) fails << "n=2 rho " << e.rho << " != 0; ";
  }
  // n = 4 ring, alternating perfect matchings with probability 1/2 each: the
  // averaged matrix has eigenvalues {1, 1/2, 1/2, 0}.
  {
    const Eigen::MatrixXd w0 = GossipMatrix(Matching::from_pairs(4, {{0, 1}, {2, 3}})).weights();
    const Eigen::MatrixXd w1 = GossipMatrix(Matching::from_pairs(4, {{1, 2}, {0, 3}})).weights();
    const double exact = second_eigenvalue(0.5 * (w0.transpose() * w0 + w1.transpose() * w1));
    if (std::abs(exact - 0.5) > 1e-9) fails << "ring average rho " << exact << " != 0.5; ";
    const SpectralEstimate e = estimate_rho([&] { return rng.uniform01() < 0.5 ? w0 : w1; }, 2000);
    if (std::abs(e.rho - 0.5) > 0.05) fails << "ring sampled rho " << e.rho << "; ";
  }
  // Connected vs bipartitioned bandwidth.
  {
    const std::size_t n = 8;
    const PeerSelectorConfig connected = uniform_generator(n, rng);
    const SpectralEstimate c = estimate_rho(connected, 1000, rng.next());
    if (!(c.rho < 1.0 - 1e-3)) fails << "connected B gave rho " << c.rho << "; ";
    Eigen::MatrixXd raw = connected.bandwidth.speeds();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if ((i < n / 2) != (j < n / 2)) raw(i, j) = 0.0;
    const BandwidthMatrix split = symmetrize_bandwidth(raw);
    const PeerSelectorConfig parted{split, get_new_connected_graph(split, default_bandwidth_threshold(split)), 10,
                                    PeerSelection::kAdaptive};
    const SpectralEstimate p = estimate_rho(parted, 1000, rng.next());
    if (std::abs(p.rho - 1.0) > 1e-9) fails << "bipartitioned B gave rho " << p.rho << "; ";
  }
  return fails.str();
}

std::string cost_model(const VerificationOptions&) {
  std::ostringstream fails;
  auto expect = [&](Algorithm a, double N, double n, double T, double c, std::optional<double> np, double server,
                    double worker) {
    const CommCost got = comm_cost({a, N, n, T, c, np});
    if (got.server != server || got.worker != worker) {
      fails << to_string(a) << ": got (" << got.server << ", " << got.worker << "), want (" << server << ", "
            << worker << "); ";
    }
  };
  expect(Algorithm::kSapsPsgd, 100, 8, 10, 10, std::nullopt, 100, 200);
  expect(Algorithm::kPsPsgd, 100, 8, 10, 1, std::nullopt, 16000, 2000);
  expect(Algorithm::kDPsgd, 100, 8, 10, 1, 2.0, 100, 8000);
  expect(Algorithm::kAllReducePsgd, 100, 8, 10, 1, std::nullopt, 0, 2000);
  expect(Algorithm::kTopKPsgd, 100, 8, 10, 10, std::nullopt, 0, 1600);
  expect(Algorithm::kFedAvg, 100, 8, 10, 1, std::nullopt, 16000, 2000);
  expect(Algorithm::kSFedAvg, 100, 8, 10, 10, std::nullopt, 9600, 1200);
  expect(Algorithm::kDcdPsgd, 100, 8, 10, 10, 2.0, 100, 800);
  try {
    comm_cost({Algorithm::kDPsgd, 100, 8, 10, 1, std::nullopt});
    fails << "D-PSGD without n_p accepted; ";
  } catch (const ValidationError&) {
  }
  return fails.str();
}

std::string codecs(const VerificationOptions& opt) {
  SplitMix64 rng(derive_seed(opt.seed, 6));
  std::ostringstream fails;
  const wire::RoundStart rs{7, 0xDEADBEEFULL, 3, 0};
  if (wire::decode_round_start(wire::encode(rs)) != rs) fails << "ROUND_START round trip; ";
  const wire::RoundEnd re{7, 3, 0.125};
  if (wire::decode_round_end(wire::encode(re)) != re) fails << "ROUND_END round trip; ";
  const wire::ModelFull mf{{1.0, -2.5, 3e300}};
  if (wire::decode_model_full(wire::encode(mf)) != mf) fails << "MODEL_FULL round trip; ";
  const wire::BandwidthReport br{{{1, 2.5e6}, {4, 1e3}}};
  if (wire::decode_bandwidth_report(wire::encode(br)) != br) fails << "BANDWIDTH_REPORT round trip; ";
  for (std::size_t count : {std::size_t{0}, std::size_t{1}, std::size_t{100}}) {
    SparsePayload p{9, 2, {}};
    for (std::size_t k = 0; k < count; ++k) p.values.push_back(rng.normal());
    const wire::Bytes bytes = encode_payload(p);
    if (bytes.size() != payload_frame_size(count)) fails << "MODEL_VALUES size; ";
    if (decode_payload(bytes) != p) fails << "MODEL_VALUES round trip; ";
    wire::Bytes corrupt = bytes;
    corrupt[wire::kHeaderSize + 1] ^= 0x01;
    try {
      decode_payload(corrupt);
      fails << "corrupted payload accepted; ";
    } catch (const ProtocolError& e) {
      if (e.fault() != ProtocolFault::kCrcMismatch) fails << "corruption reported as " << e.what() << "; ";
    }
    try {
      decode_payload(std::span<const std::uint8_t>(bytes).first(bytes.size() - 1));
      fails << "truncated frame accepted; ";
    } catch (const ProtocolError& e) {
      if (e.fault() != ProtocolFault::kTruncated) fails << "truncation reported as " << e.what() << "; ";
    }
  }
  return fails.str();
}

}  // namespace

std::size_t brute_force_max_matching(const AdjacencyMatrix& g) {
  std::vector<char> used(g.n(), 0);
  return brute_force(g, used, 0);
}

std::vector<SuiteResult> run_verification_suite(const VerificationOptions& opt, std::ostream* log) {
  std::vector<SuiteResult> out;
  out.push_back(run_suite("gossip matrix invariants", [&] { return gossip_invariants(opt); }, log));
  out.push_back(run_suite("matching oracle", [&] { return matching_oracle(opt); }, log));
  out.push_back(run_suite("mask/gossip commutation", [&] { return mask_commutation(opt); }, log));
  out.push_back(run_suite("consensus contraction", [&] { return contraction(opt); }, log));
  out.push_back(run_suite("rho estimation", [&] { return rho_estimation(opt); }, log));
  out.push_back(run_suite("cost model", [&] { return cost_model(opt); }, log));
  out.push_back(run_suite("wire codecs", [&] { return codecs(opt); }, log));
  return out;
}

bool all_passed(const std::vector<SuiteResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return true;
}

}  // namespace saps
