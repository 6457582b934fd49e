#pragma once

// Message fabrics. SimNetwork is an in-process, single-threaded network whose
// virtual clock advances by bytes / bandwidth; SimulatedFabric drives a set of
// in-process workers over it. The TCP backend lives in tcp.hpp.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "saps/coordinator.hpp"
#include "saps/core.hpp"
#include "saps/wire.hpp"
#include "saps/worker.hpp"

namespace saps {

/// Synchronous-round duration: payload_bytes over the slowest matched link.
/// An all-self-loop round takes 0 s. Throws ConfigError for a matched pair
/// without bandwidth.
double round_time(const Matching& matching, std::size_t payload_bytes, const BandwidthMatrix& b);

struct DeliveryReceipt {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;
  std::size_t bytes = 0;
  double transfer_seconds = 0.0;
  double delivered_at = 0.0;  // virtual clock after the transfer
};

/// Point-to-point mailboxes between workers. Each send advances the virtual
/// clock by bytes / B_ij; frames are delivered in FIFO order per (src, dst).
class SimNetwork {
 public:
  explicit SimNetwork(BandwidthMatrix b);

  std::size_t n() const { return bandwidth_.n(); }
  double clock() const { return clock_; }
  const BandwidthMatrix& bandwidth() const { return bandwidth_; }

  DeliveryReceipt send(std::uint32_t src, std::uint32_t dst, wire::Bytes frame);
  /// Next frame from src to dst, checked to be a well-formed frame of the
  /// expected type. Throws TransportError when nothing is queued.
  wire::Bytes receive(std::uint32_t dst, std::uint32_t src, wire::MsgType expected);

  std::uint64_t bytes_sent(std::uint32_t worker) const { return bytes_sent_.at(worker); }

 private:
  BandwidthMatrix bandwidth_;
  double clock_ = 0.0;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::deque<wire::Bytes>> queues_;
  std::vector<std::uint64_t> bytes_sent_;
};

struct WorkerTraffic {
  std::uint64_t values_sent = 0;
  std::uint64_t values_received = 0;
  std::uint64_t peer_bytes_sent = 0;
};

/// A control fabric whose workers can be inspected, for metrics.
class WorkerFabric : public ControlFabric {
 public:
  /// Current model of every worker, by rank. Only meaningful between rounds.
  virtual std::vector<ParameterVector> models() const = 0;
  virtual std::vector<WorkerTraffic> traffic() const = 0;
};

/// Deterministic in-process execution of the worker side. ROUND_STARTs are
/// buffered until every worker has one; the round then runs in two phases
/// (all begin_round, then payloads routed through SimNetwork as encoded
/// MODEL_VALUES frames, then all finish_round) and the ROUND_ENDs are queued
/// for the coordinator in rank order.
class SimulatedFabric final : public WorkerFabric {
 public:
  SimulatedFabric(std::vector<Worker> workers, BandwidthMatrix b);

  std::size_t n_workers() const override { return workers_.size(); }
  void send(std::uint32_t worker, const wire::Bytes& frame) override;
  InboundFrame receive() override;

  std::vector<ParameterVector> models() const override;
  std::vector<WorkerTraffic> traffic() const override;

  const Worker& worker(std::uint32_t rank) const { return workers_.at(rank); }
  const SimNetwork& network() const { return network_; }

 private:
  void run_pending_round();

  std::vector<Worker> workers_;
  SimNetwork network_;
  std::vector<std::optional<wire::RoundStart>> pending_;
  std::size_t pending_count_ = 0;
  std::deque<InboundFrame> inbox_;
};

}  // namespace saps
