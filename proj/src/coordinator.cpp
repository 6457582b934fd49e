#include "saps/coordinator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace saps {

AdjacencyMatrix get_new_connected_graph(const BandwidthMatrix& b, double b_thres) {
  const std::size_t n = b.n();
  AdjacencyMatrix filtered(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (b.has_link(i, j) && b(i, j) >= b_thres) filtered.set_edge(i, j);
  return filtered;
}

double default_bandwidth_threshold(const BandwidthMatrix& b) {
  std::vector<double> positive;
  for (std::size_t i = 0; i < b.n(); ++i)
    for (std::size_t j = i + 1; j < b.n(); ++j)
      if (b.has_link(i, j)) positive.push_back(b(i, j));
  if (positive.empty()) return 0.0;
  std::sort(positive.begin(), positive.end());
  const std::size_t rank = (positive.size() + 1) / 2;  // ceil(0.5 * k)
  return positive[rank - 1];
}

double RoundSummary::mean_loss() const {
  if (losses.empty()) return 0.0;
  double s = 0.0;
  for (double l : losses) s += l;
  return s / static_cast<double>(losses.size());
}

namespace {

PeerSelectorConfig make_selector_config(const BandwidthMatrix& b, const CoordinatorConfig& config,
                                        double b_thres) {
  return PeerSelectorConfig{b, get_new_connected_graph(b, b_thres), config.t_thres, config.mode};
}

double resolve_threshold(const BandwidthMatrix& b, const CoordinatorConfig& config) {
  if (config.b_thres) {
    if (!std::isfinite(*config.b_thres) || *config.b_thres < 0.0) {
      throw ValidationError("B_thres must be finite and >= 0");
    }
    return *config.b_thres;
  }
  return default_bandwidth_threshold(b);
}

}  // namespace

Coordinator::Coordinator(BandwidthMatrix b, CoordinatorConfig config)
    : bandwidth_(std::move(b)),
      config_(config),
      b_thres_(resolve_threshold(bandwidth_, config_)),
      selector_(make_selector_config(bandwidth_, config_, b_thres_), derive_seed(config.master_seed, 1)),
      seeds_(config.master_seed) {
  if (bandwidth_.n() < 2) throw ValidationError("coordinator needs at least 2 workers");
  if (config_.total_rounds < 1) throw ValidationError("T must be >= 1");
}

std::vector<wire::RoundStart> Coordinator::plan_round() {
  if (in_flight_) throw ProtocolError(ProtocolFault::kRoundMismatch, "previous round still in flight");
  if (round_ >= config_.total_rounds) {
    throw ValidationError("all " + std::to_string(config_.total_rounds) + " rounds already ran");
  }
  const std::uint64_t seed = seeds_.next();
  GossipRound gossip = selector_.propose();

  InFlight f;
  f.summary.round = round_;
  f.summary.seed = seed;
  f.summary.bridged = gossip.bridged;
  f.summary.fallback = gossip.fallback;
  f.summary.losses.assign(n(), 0.0);
  f.acked.assign(n(), 0);

  std::vector<wire::RoundStart> starts(n());
  for (std::uint32_t w = 0; w < n(); ++w) {
    const auto peer = gossip.matching.peer_of(w);
    starts[w] = wire::RoundStart{round_, seed, peer ? *peer : wire::kNoPeer, 0};
  }
  f.summary.matching = std::move(gossip.matching);
  in_flight_ = std::move(f);
  return starts;
}

void Coordinator::acknowledge(const wire::RoundEnd& msg) {
  if (!in_flight_) {
    throw ProtocolError(ProtocolFault::kRoundMismatch,
                        "ROUND_END from worker " + std::to_string(msg.worker) + " with no round in flight");
  }
  if (msg.worker >= n()) {
    throw ProtocolError(ProtocolFault::kUnknownWorker, "ROUND_END from worker " + std::to_string(msg.worker));
  }
  if (msg.round != in_flight_->summary.round) {
    std::ostringstream m;
    m << "worker " << msg.worker << " acknowledged round " << msg.round << " during round "
      << in_flight_->summary.round;
    throw ProtocolError(ProtocolFault::kRoundMismatch, m.str());
  }
  if (in_flight_->acked[msg.worker]) {
    throw ProtocolError(ProtocolFault::kDuplicateAck,
                        "worker " + std::to_string(msg.worker) + " acknowledged round " +
                            std::to_string(msg.round) + " twice");
  }
  in_flight_->acked[msg.worker] = 1;
  in_flight_->summary.losses[msg.worker] = msg.local_loss;
  ++in_flight_->ack_count;
}

bool Coordinator::all_acknowledged() const { return in_flight_ && in_flight_->ack_count == n(); }

const RoundSummary& Coordinator::complete_round() {
  if (!all_acknowledged()) {
    throw ProtocolError(ProtocolFault::kRoundMismatch, "round barrier closed before all ROUND_ENDs");
  }
  selector_.commit(in_flight_->summary.matching);
  log_.push_back(std::move(in_flight_->summary));
  in_flight_.reset();
  ++round_;
  return log_.back();
}

void Coordinator::abort_round() { in_flight_.reset(); }

const RoundSummary& Coordinator::run_round(ControlFabric& fabric) {
  if (fabric.n_workers() != n()) throw ValidationError("fabric worker count disagrees with B");
  std::vector<wire::BandwidthReport> reports;
  std::vector<std::uint32_t> reporters;
  const auto starts = plan_round();
  try {
    for (std::uint32_t w = 0; w < n(); ++w) fabric.send(w, wire::encode(starts[w]));
    while (!all_acknowledged()) {
      InboundFrame in = fabric.receive();
      control_bytes_received_ += in.bytes.size();
      switch (wire::peek_type(in.bytes)) {
        case wire::MsgType::kRoundEnd: {
          const wire::RoundEnd end = wire::decode_round_end(in.bytes);
          if (end.worker != in.worker) {
            throw ProtocolError(ProtocolFault::kPeerMismatch,
                                "worker " + std::to_string(in.worker) + " sent ROUND_END as worker " +
                                    std::to_string(end.worker));
          }
          acknowledge(end);
          break;
        }
        case wire::MsgType::kBandwidthReport:
          reports.push_back(wire::decode_bandwidth_report(in.bytes));
          reporters.push_back(in.worker);
          break;
        default:
          throw ProtocolError(ProtocolFault::kUnexpectedType,
                              std::string(wire::to_string(wire::peek_type(in.bytes))) + " from worker " +
                                  std::to_string(in.worker) + " during round barrier");
      }
    }
  } catch (...) {
    abort_round();
    throw;
  }
  const RoundSummary& done = complete_round();
  for (std::size_t k = 0; k < reports.size(); ++k) apply_bandwidth_report(reporters[k], reports[k]);
  return done;
}

ParameterVector Coordinator::collect_final_model(ControlFabric& fabric) {
  if (round_ != config_.total_rounds) {
    throw ValidationError("final model requested at round " + std::to_string(round_) + " of " +
                          std::to_string(config_.total_rounds));
  }
  fabric.send(0, wire::encode(wire::ModelFull{}));
  for (;;) {
    InboundFrame in = fabric.receive();
    const auto type = wire::peek_type(in.bytes);
    if (type == wire::MsgType::kModelFull && in.worker == 0) {
      model_bytes_received_ += in.bytes.size();
      return ParameterVector(wire::decode_model_full(in.bytes).values);
    }
    if (type == wire::MsgType::kBandwidthReport) {
      control_bytes_received_ += in.bytes.size();
      apply_bandwidth_report(in.worker, wire::decode_bandwidth_report(in.bytes));
      continue;
    }
    throw ProtocolError(ProtocolFault::kUnexpectedType,
                        std::string(wire::to_string(type)) + " from worker " + std::to_string(in.worker) +
                            " while collecting the final model");
  }
}

void Coordinator::apply_bandwidth_report(std::uint32_t worker, const wire::BandwidthReport& report) {
  if (worker >= n()) throw ProtocolError(ProtocolFault::kUnknownWorker, "bandwidth report sender");
  for (auto [peer, speed] : report.entries) {
    if (peer >= n() || peer == worker) {
      throw ProtocolError(ProtocolFault::kMalformed, "bandwidth report names worker " + std::to_string(peer));
    }
    if (!std::isfinite(speed) || speed < 0.0) {
      throw ProtocolError(ProtocolFault::kMalformed, "bandwidth report speed must be finite and >= 0");
    }
    // One side's measurement replaces the link speed only if it is the slower direction.
    const double current = bandwidth_(worker, peer);
    const double updated = current > 0.0 ? std::min(current, speed) : speed;
    bandwidth_.update_link(worker, peer, updated);
    selector_.update_bandwidth(worker, peer, updated);
  }
}

// ---------------------------------------------------------------------------

Algorithm parse_algorithm(const std::string& name) {
  std::string key;
  for (char ch : name)
    if (std::isalnum(static_cast<unsigned char>(ch))) key.push_back(static_cast<char>(std::tolower(ch)));
  if (key == "pspsgd") return Algorithm::kPsPsgd;
  if (key == "allreducepsgd" || key == "psgdallreduce" || key == "allreduce") return Algorithm::kAllReducePsgd;
  if (key == "topkpsgd" || key == "topk") return Algorithm::kTopKPsgd;
  if (key == "fedavg") return Algorithm::kFedAvg;
  if (key == "sfedavg") return Algorithm::kSFedAvg;
  if (key == "dpsgd") return Algorithm::kDPsgd;
  if (key == "dcdpsgd") return Algorithm::kDcdPsgd;
  if (key == "sapspsgd" || key == "saps") return Algorithm::kSapsPsgd;
  throw ValidationError("unknown algorithm '" + name + "'");
}

const char* to_string(Algorithm algo) {
  switch (algo) {
    case Algorithm::kPsPsgd: return "PS-PSGD";
    case Algorithm::kAllReducePsgd: return "PSGD (all-reduce)";
    case Algorithm::kTopKPsgd: return "TopK-PSGD";
    case Algorithm::kFedAvg: return "FedAvg";
    case Algorithm::kSFedAvg: return "S-FedAvg";
    case Algorithm::kDPsgd: return "D-PSGD";
    case Algorithm::kDcdPsgd: return "DCD-PSGD";
    case Algorithm::kSapsPsgd: return "SAPS-PSGD";
  }
  return "?";
}

CostFormula cost_formula(Algorithm algo) {
  switch (algo) {
    case Algorithm::kPsPsgd: return {"2NnT", "2NT"};
    case Algorithm::kAllReducePsgd: return {"0", "2NT"};
    case Algorithm::kTopKPsgd: return {"0", "2n(N/c)T"};
    case Algorithm::kFedAvg: return {"2NnT", "2NT"};
    case Algorithm::kSFedAvg: return {"(N+2N/c)nT", "(N+2N/c)T"};
    case Algorithm::kDPsgd: return {"N", "4n_pNT"};
    case Algorithm::kDcdPsgd: return {"N", "4n_p(N/c)T"};
    case Algorithm::kSapsPsgd: return {"N", "2(N/c)T"};
  }
  return {"?", "?"};
}

CommCost comm_cost(const CostModelInput& in) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(in.N) || !positive(in.n) || !positive(in.T)) {
    throw ValidationError("cost model: N, n and T must be positive");
  }
  if (!std::isfinite(in.c) || in.c < 1.0) throw ValidationError("cost model: c must be >= 1");
  const double N = in.N, n = in.n, T = in.T, c = in.c;
  auto neighbors = [&]() {
    if (!in.n_p) throw ValidationError(std::string("cost model: ") + to_string(in.algorithm) + " needs n_p");
    if (!std::isfinite(*in.n_p) || *in.n_p < 1.0) throw ValidationError("cost model: n_p must be >= 1");
    return *in.n_p;
  };
  switch (in.algorithm) {
    case Algorithm::kPsPsgd: return {2 * N * n * T, 2 * N * T};
    case Algorithm::kAllReducePsgd: return {0, 2 * N * T};
    case Algorithm::kTopKPsgd: return {0, 2 * n * (N / c) * T};
    case Algorithm::kFedAvg: return {2 * N * n * T, 2 * N * T};
    case Algorithm::kSFedAvg: return {(N + 2 * N / c) * n * T, (N + 2 * N / c) * T};
    case Algorithm::kDPsgd: return {N, 4 * neighbors() * N * T};
    case Algorithm::kDcdPsgd: return {N, 4 * neighbors() * (N / c) * T};
    case Algorithm::kSapsPsgd: return {N, 2 * (N / c) * T};
  }
  throw ValidationError("cost model: unknown algorithm");
}

}  // namespace saps
