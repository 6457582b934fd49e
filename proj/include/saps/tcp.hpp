#pragma once

// TCP backend. Each worker host listens on two ports: one for its coordinator
// stream and one for per-round peer connections. In a peer exchange the lower
// rank connects to the higher rank, both sides write their MODEL_VALUES frame
// and read the other's, and the connection is closed.

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "saps/transport.hpp"
#include "saps/worker.hpp"

namespace saps {

struct TcpAddress {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// Blocking frame I/O on a connected socket; exposed for the loopback tests.
class TcpStream {
 public:
  static TcpStream connect(const TcpAddress& addr);

  TcpStream(TcpStream&&) noexcept;
  TcpStream& operator=(TcpStream&&) noexcept;
  ~TcpStream();

  void write_frame(const wire::Bytes& frame);
  /// Reads exactly one frame (header, payload, CRC) and validates it.
  wire::Bytes read_frame();
  void close();

 private:
  friend class TcpListener;
  struct Impl;
  explicit TcpStream(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

class TcpListener {
 public:
  /// Binds host:port; port 0 picks an ephemeral port.
  explicit TcpListener(const TcpAddress& addr = {});
  TcpListener(TcpListener&&) noexcept;
  ~TcpListener();

  TcpAddress address() const;
  TcpStream accept();
  /// Makes a blocked accept() in another thread fail.
  void interrupt();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Runs one Worker behind a TCP control port on a background thread.
class TcpWorkerHost {
 public:
  explicit TcpWorkerHost(Worker worker, const std::string& host = "127.0.0.1");
  ~TcpWorkerHost();
  TcpWorkerHost(const TcpWorkerHost&) = delete;
  TcpWorkerHost& operator=(const TcpWorkerHost&) = delete;

  std::uint32_t rank() const;
  TcpAddress control_address() const;
  TcpAddress peer_address() const;
  /// Peer listen addresses indexed by rank; must be set before the first round.
  void set_peer_table(std::vector<TcpAddress> table);
  /// Starts accepting the coordinator connection.
  void start();

  ParameterVector model() const;
  WorkerTraffic traffic() const;
  /// Error that stopped the serve loop, if any.
  std::string failure() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Coordinator side: one stream per worker, a reader thread per stream, all
/// feeding a single arrival-ordered queue.
class TcpCoordinatorFabric final : public ControlFabric {
 public:
  TcpCoordinatorFabric(const std::vector<TcpAddress>& workers,
                       std::chrono::milliseconds receive_timeout = std::chrono::seconds(30));
  ~TcpCoordinatorFabric() override;

  std::size_t n_workers() const override;
  void send(std::uint32_t worker, const wire::Bytes& frame) override;
  /// Throws TransportError on timeout or when a worker connection drops.
  InboundFrame receive() override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// n in-process worker hosts on loopback plus a coordinator fabric connected
/// to them; exposes the hosts for metrics.
class TcpLoopbackCluster final : public WorkerFabric {
 public:
  explicit TcpLoopbackCluster(std::vector<Worker> workers);
  ~TcpLoopbackCluster() override;

  std::size_t n_workers() const override { return hosts_.size(); }
  void send(std::uint32_t worker, const wire::Bytes& frame) override { fabric_->send(worker, frame); }
  InboundFrame receive() override { return fabric_->receive(); }

  std::vector<ParameterVector> models() const override;
  std::vector<WorkerTraffic> traffic() const override;

 private:
  std::vector<std::unique_ptr<TcpWorkerHost>> hosts_;
  std::unique_ptr<TcpCoordinatorFabric> fabric_;
};

}  // namespace saps
