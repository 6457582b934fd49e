#include "saps/transport.hpp"

#include <limits>
#include <sstream>

#include "saps/sparsify.hpp"

namespace saps {

double round_time(const Matching& matching, std::size_t payload_bytes, const BandwidthMatrix& b) {
  if (matching.n() != b.n()) throw ValidationError("round_time: matching and B disagree on n");
  if (matching.size() == 0) return 0.0;
  double bottleneck = std::numeric_limits<double>::infinity();
  for (auto [i, j] : matching.pairs()) {
    if (!b.has_link(i, j)) {
      std::ostringstream m;
      m << "matched pair (" << i << ", " << j << ") has zero bandwidth";
      throw ConfigError(m.str());
    }
    bottleneck = std::min(bottleneck, b(i, j));
  }
  return static_cast<double>(payload_bytes) / bottleneck;
}

SimNetwork::SimNetwork(BandwidthMatrix b) : bandwidth_(std::move(b)), bytes_sent_(bandwidth_.n(), 0) {}

DeliveryReceipt SimNetwork::send(std::uint32_t src, std::uint32_t dst, wire::Bytes frame) {
  if (src >= n() || dst >= n() || src == dst) {
    throw ConfigError("simulated send between invalid workers " + std::to_string(src) + " -> " +
                      std::to_string(dst));
  }
  if (!bandwidth_.has_link(src, dst)) {
    throw ConfigError("simulated send over zero-bandwidth link " + std::to_string(src) + " -> " +
                      std::to_string(dst));
  }
  DeliveryReceipt r;
  r.src = src;
  r.dst = dst;
  r.bytes = frame.size();
  r.transfer_seconds = static_cast<double>(frame.size()) / bandwidth_(src, dst);
  clock_ += r.transfer_seconds;
  r.delivered_at = clock_;
  bytes_sent_[src] += frame.size();
  queues_[{src, dst}].push_back(std::move(frame));
  return r;
}

wire::Bytes SimNetwork::receive(std::uint32_t dst, std::uint32_t src, wire::MsgType expected) {
  auto it = queues_.find({src, dst});
  if (it == queues_.end() || it->second.empty()) {
    throw TransportError("no frame queued from worker " + std::to_string(src) + " to " + std::to_string(dst));
  }
  wire::Bytes frame = std::move(it->second.front());
  it->second.pop_front();
  wire::decode_frame(frame, expected);  // validates framing and CRC
  return frame;
}

SimulatedFabric::SimulatedFabric(std::vector<Worker> workers, BandwidthMatrix b)
    : workers_(std::move(workers)), network_(std::move(b)), pending_(workers_.size()) {
  if (workers_.size() != network_.n()) throw ValidationError("worker count disagrees with B");
  for (std::size_t r = 0; r < workers_.size(); ++r) {
    if (workers_[r].rank() != r) throw ValidationError("workers must be ordered by rank");
  }
}

void SimulatedFabric::send(std::uint32_t worker, const wire::Bytes& frame) {
  if (worker >= workers_.size()) throw TransportError("send to unknown worker " + std::to_string(worker));
  switch (wire::peek_type(frame)) {
    case wire::MsgType::kRoundStart: {
      if (pending_[worker]) {
        throw ProtocolError(ProtocolFault::kRoundMismatch,
                            "second ROUND_START for worker " + std::to_string(worker));
      }
      pending_[worker] = wire::decode_round_start(frame);
      if (++pending_count_ == workers_.size()) run_pending_round();
      break;
    }
    case wire::MsgType::kModelFull: {
      if (!wire::decode_model_full(frame).values.empty()) {
        throw ProtocolError(ProtocolFault::kUnexpectedType, "workers do not accept models from the coordinator");
      }
      inbox_.push_back({worker, wire::encode(wire::ModelFull{workers_[worker].model().values()})});
      break;
    }
    default:
      throw ProtocolError(ProtocolFault::kUnexpectedType,
                          std::string(wire::to_string(wire::peek_type(frame))) + " sent to a worker");
  }
}

void SimulatedFabric::run_pending_round() {
  const std::size_t n = workers_.size();
  std::vector<std::optional<SparsePayload>> outgoing(n);
  for (std::uint32_t w = 0; w < n; ++w) outgoing[w] = workers_[w].begin_round(*pending_[w]);
  for (std::uint32_t w = 0; w < n; ++w) {
    if (outgoing[w]) network_.send(w, pending_[w]->peer, encode_payload(*outgoing[w]));
  }
  for (std::uint32_t w = 0; w < n; ++w) {
    wire::RoundEnd end;
    if (pending_[w]->has_peer()) {
      const std::uint32_t peer = pending_[w]->peer;
      const SparsePayload theirs =
          decode_payload(network_.receive(w, peer, wire::MsgType::kModelValues));
      end = workers_[w].finish_round(&theirs);
    } else {
      end = workers_[w].finish_round(nullptr);
    }
    inbox_.push_back({w, wire::encode(end)});
  }
  for (auto& p : pending_) p.reset();
  pending_count_ = 0;
}

InboundFrame SimulatedFabric::receive() {
  if (inbox_.empty()) {
    throw TransportError("coordinator waits on an empty simulated inbox (" + std::to_string(pending_count_) +
                         " of " + std::to_string(workers_.size()) + " ROUND_STARTs delivered)");
  }
  InboundFrame f = std::move(inbox_.front());
  inbox_.pop_front();
  return f;
}

std::vector<ParameterVector> SimulatedFabric::models() const {
  std::vector<ParameterVector> out;
  out.reserve(workers_.size());
  for (const auto& w : workers_) out.push_back(w.model());
  return out;
}

std::vector<WorkerTraffic> SimulatedFabric::traffic() const {
  std::vector<WorkerTraffic> out;
  for (std::uint32_t r = 0; r < workers_.size(); ++r) {
    out.push_back({workers_[r].values_sent(), workers_[r].values_received(), network_.bytes_sent(r)});
  }
  return out;
}

}  // namespace saps
