#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>

#include "saps/core.hpp"
#include "saps/objectives.hpp"
#include "saps/sparsify.hpp"
#include "saps/wire.hpp"

namespace saps {

struct WorkerOptions {
  double gamma = 0.05;
  std::uint32_t compression = 1;
  /// Mini-batch size; 0 or anything >= the shard size uses the whole shard.
  std::size_t batch_size = 0;
};

/// Blocking symmetric exchange with this round's peer: send `mine`, return theirs.
class PeerExchange {
 public:
  virtual ~PeerExchange() = default;
  virtual SparsePayload exchange(const SparsePayload& mine, std::uint32_t peer) = 0;
};

/// One training worker. A round is SGD on the local shard, then masked
/// averaging with the assigned peer.
class Worker {
 public:
  Worker(std::uint32_t rank, ParameterVector x0, std::shared_ptr<const Objective> objective,
         WorkerOptions options, std::uint64_t sampling_seed);

  std::uint32_t rank() const { return rank_; }
  std::uint64_t round() const { return round_; }
  const ParameterVector& model() const { return x_; }
  const WorkerOptions& options() const { return options_; }

  /// x <- x - gamma * grad F(x; batch). Returns the mini-batch loss; throws
  /// NumericalError (naming round and rank) on a non-finite loss or gradient.
  double local_sgd_step();

  /// First half of a round: SGD, mask expansion, payload extraction. Returns
  /// the payload to send, or nullopt for a self-loop round.
  std::optional<SparsePayload> begin_round(const wire::RoundStart& msg);
  /// Second half: merge the peer payload (nullptr for self-loop), advance the round.
  wire::RoundEnd finish_round(const SparsePayload* peer_payload);
  /// Both halves around a blocking exchange.
  wire::RoundEnd run_round(const wire::RoundStart& msg, PeerExchange& link);

  std::uint64_t values_sent() const { return values_sent_; }
  std::uint64_t values_received() const { return values_received_; }

 private:
  struct Pending {
    std::uint64_t round;
    std::optional<std::uint32_t> peer;
    MaskStream mask;
    double loss;
  };

  std::uint32_t rank_;
  ParameterVector x_;
  std::shared_ptr<const Objective> objective_;
  WorkerOptions options_;
  SplitMix64 sampler_;
  std::uint64_t round_ = 0;
  std::optional<Pending> pending_;
  std::vector<double> grad_;
  std::vector<std::size_t> batch_;
  std::uint64_t values_sent_ = 0;
  std::uint64_t values_received_ = 0;
};

}  // namespace saps
