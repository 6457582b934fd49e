#include "saps/worker.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace saps {

Worker::Worker(std::uint32_t rank, ParameterVector x0, std::shared_ptr<const Objective> objective,
               WorkerOptions options, std::uint64_t sampling_seed)
    : rank_(rank), x_(std::move(x0)), objective_(std::move(objective)), options_(options),
      sampler_(sampling_seed) {
  if (!objective_) throw ValidationError("worker needs an objective");
  if (x_.size() != objective_->dimension()) {
    throw ValidationError("initial model length does not match objective dimension");
  }
  if (objective_->sample_count() == 0) throw ValidationError("worker data shard is empty");
  if (!std::isfinite(options_.gamma) || options_.gamma < 0.0) {
    throw ValidationError("learning rate must be finite and >= 0");
  }
  if (options_.compression == 0) throw ValidationError("compression ratio c must be >= 1");
  grad_.resize(x_.size());
}

double Worker::local_sgd_step() {
  const std::size_t shard = objective_->sample_count();
  if (options_.batch_size == 0 || options_.batch_size >= shard) {
    batch_.resize(shard);
    std::iota(batch_.begin(), batch_.end(), 0);
  } else {
    batch_.resize(options_.batch_size);
    for (auto& k : batch_) k = static_cast<std::size_t>(sampler_.uniform_below(shard));
  }
  const double loss = objective_->loss_and_gradient(x_.span(), batch_, grad_);
  bool finite = std::isfinite(loss);
  for (double g : grad_) finite = finite && std::isfinite(g);
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite loss or gradient at round " << round_ << " on worker " << rank_;
    throw NumericalError(msg.str());
  }
  for (std::size_t j = 0; j < x_.size(); ++j) x_[j] -= options_.gamma * grad_[j];
  return loss;
}

std::optional<SparsePayload> Worker::begin_round(const wire::RoundStart& msg) {
  if (pending_) throw ProtocolError(ProtocolFault::kRoundMismatch, "round already in progress");
  if (msg.round != round_) {
    std::ostringstream m;
    m << "worker " << rank_ << " at round " << round_ << " got ROUND_START for " << msg.round;
    throw ProtocolError(ProtocolFault::kRoundMismatch, m.str());
  }
  if (msg.has_peer() && msg.peer == rank_) {
    throw ProtocolError(ProtocolFault::kPeerMismatch, "worker assigned to itself");
  }
  const double loss = local_sgd_step();
  MaskStream mask = generate_mask(msg.seed, options_.compression, x_.size());
  std::optional<SparsePayload> out;
  std::optional<std::uint32_t> peer;
  if (msg.has_peer()) {
    peer = msg.peer;
    out = extract_payload(x_, mask, msg.round, rank_);
    values_sent_ += out->count();
  }
  pending_ = Pending{msg.round, peer, std::move(mask), loss};
  return out;
}

wire::RoundEnd Worker::finish_round(const SparsePayload* peer_payload) {
  if (!pending_) throw ProtocolError(ProtocolFault::kRoundMismatch, "no round in progress");
  const Pending& p = *pending_;
  if (p.peer) {
    if (!peer_payload) throw ProtocolError(ProtocolFault::kPeerMismatch, "missing peer payload");
    if (peer_payload->round != p.round) {
      std::ostringstream m;
      m << "peer payload for round " << peer_payload->round << ", expected " << p.round;
      throw ProtocolError(ProtocolFault::kRoundMismatch, m.str());
    }
    if (peer_payload->sender != *p.peer) {
      std::ostringstream m;
      m << "payload from worker " << peer_payload->sender << ", expected " << *p.peer;
      throw ProtocolError(ProtocolFault::kPeerMismatch, m.str());
    }
    merge_masked_in_place(x_, p.mask, *peer_payload);
    values_received_ += peer_payload->count();
  } else if (peer_payload) {
    throw ProtocolError(ProtocolFault::kPeerMismatch, "payload received in a self-loop round");
  }
  wire::RoundEnd end{p.round, rank_, p.loss};
  pending_.reset();
  ++round_;
  return end;
}

wire::RoundEnd Worker::run_round(const wire::RoundStart& msg, PeerExchange& link) {
  std::optional<SparsePayload> mine = begin_round(msg);
  if (!mine) return finish_round(nullptr);
  const SparsePayload theirs = link.exchange(*mine, msg.peer);
  return finish_round(&theirs);
}

}  // namespace saps
