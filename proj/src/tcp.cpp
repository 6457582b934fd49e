#include "saps/tcp.hpp"

#include <sys/socket.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>

#include <boost/asio.hpp>

#include "saps/sparsify.hpp"

namespace saps {

namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

tcp::endpoint to_endpoint(const TcpAddress& addr) {
  boost::system::error_code ec;
  const auto ip = asio::ip::make_address(addr.host, ec);
  if (ec) throw ValidationError("invalid listen address '" + addr.host + "'");
  return {ip, addr.port};
}

}  // namespace

// ---------------------------------------------------------------------------

struct TcpStream::Impl {
  asio::io_context ctx;
  tcp::socket socket{ctx};
};

TcpStream::TcpStream(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
TcpStream::TcpStream(TcpStream&&) noexcept = default;
TcpStream& TcpStream::operator=(TcpStream&&) noexcept = default;
TcpStream::~TcpStream() = default;

TcpStream TcpStream::connect(const TcpAddress& addr) {
  auto impl = std::make_unique<Impl>();
  boost::system::error_code ec;
  impl->socket.connect(to_endpoint(addr), ec);
  if (ec) {
    throw TransportError("connect to " + addr.host + ":" + std::to_string(addr.port) + " failed: " + ec.message());
  }
  impl->socket.set_option(tcp::no_delay(true), ec);
  return TcpStream(std::move(impl));
}

void TcpStream::write_frame(const wire::Bytes& frame) {
  boost::system::error_code ec;
  asio::write(impl_->socket, asio::buffer(frame), ec);
  if (ec) throw TransportError("write failed: " + ec.message());
}

wire::Bytes TcpStream::read_frame() {
  wire::Bytes frame(wire::kHeaderSize);
  boost::system::error_code ec;
  asio::read(impl_->socket, asio::buffer(frame), ec);
  if (ec == asio::error::eof) throw TransportError("connection closed by peer");
  if (ec) throw TransportError("read failed: " + ec.message());
  const wire::FrameHeader h = wire::parse_header(frame);
  frame.resize(wire::kHeaderSize + h.payload_len + wire::kTrailerSize);
  asio::read(impl_->socket, asio::buffer(frame.data() + wire::kHeaderSize, h.payload_len + wire::kTrailerSize),
             ec);
  if (ec) throw TransportError("connection lost mid-frame: " + ec.message());
  wire::decode_frame(frame);
  return frame;
}

void TcpStream::close() {
  if (!impl_) return;
  // shutdown() wakes a reader blocked on this socket in another thread.
  ::shutdown(impl_->socket.native_handle(), SHUT_RDWR);
}

// ---------------------------------------------------------------------------

struct TcpListener::Impl {
  asio::io_context ctx;
  tcp::acceptor acceptor{ctx};
};

TcpListener::TcpListener(const TcpAddress& addr) : impl_(std::make_unique<Impl>()) {
  const auto ep = to_endpoint(addr);
  boost::system::error_code ec;
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(tcp::acceptor::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw TransportError("listen on " + addr.host + ":" + std::to_string(addr.port) + ": " + ec.message());
}

TcpListener::TcpListener(TcpListener&&) noexcept = default;
TcpListener::~TcpListener() = default;

TcpAddress TcpListener::address() const {
  const auto ep = impl_->acceptor.local_endpoint();
  return {ep.address().to_string(), ep.port()};
}

void TcpListener::interrupt() { ::shutdown(impl_->acceptor.native_handle(), SHUT_RDWR); }

TcpStream TcpListener::accept() {
  auto stream = std::make_unique<TcpStream::Impl>();
  boost::system::error_code ec;
  impl_->acceptor.accept(stream->socket, ec);
  if (ec) throw TransportError("accept failed: " + ec.message());
  stream->socket.set_option(tcp::no_delay(true), ec);
  return TcpStream(std::move(stream));
}

// ---------------------------------------------------------------------------

struct TcpWorkerHost::Impl {
  explicit Impl(Worker w, const std::string& host)
      : worker(std::move(w)), control(TcpAddress{host, 0}), peer(TcpAddress{host, 0}) {}

  void serve();
  SparsePayload exchange(const SparsePayload& mine, std::uint32_t peer_rank);

  Worker worker;
  mutable std::mutex mu;  // guards worker, failure, traffic
  TcpListener control;
  TcpListener peer;
  std::vector<TcpAddress> peers;
  std::optional<TcpStream> coordinator;
  std::thread thread;
  std::atomic<bool> stopping{false};
  std::string failure;
  std::uint64_t peer_bytes_sent = 0;
};

SparsePayload TcpWorkerHost::Impl::exchange(const SparsePayload& mine, std::uint32_t peer_rank) {
  if (peer_rank >= peers.size()) {
    throw ProtocolError(ProtocolFault::kUnknownWorker, "peer " + std::to_string(peer_rank) + " not in table");
  }
  TcpStream link = worker.rank() < peer_rank ? TcpStream::connect(peers[peer_rank]) : peer.accept();
  const wire::Bytes out = encode_payload(mine);
  // Full duplex: write on a helper thread while this one reads.
  std::exception_ptr write_error;
  std::thread writer([&] {
    try {
      link.write_frame(out);
    } catch (...) {
      write_error = std::current_exception();
    }
  });
  wire::Bytes in;
  std::exception_ptr read_error;
  try {
    in = link.read_frame();
  } catch (...) {
    read_error = std::current_exception();
  }
  writer.join();
  if (read_error) std::rethrow_exception(read_error);
  if (write_error) std::rethrow_exception(write_error);
  {
    std::lock_guard lock(mu);
    peer_bytes_sent += out.size();
  }
  return decode_payload(in);
}

void TcpWorkerHost::Impl::serve() {
  try {
    TcpStream stream = control.accept();
    {
      std::lock_guard lock(mu);
      coordinator.emplace(std::move(stream));
    }
    if (stopping) return;
    for (;;) {
      wire::Bytes frame;
      try {
        frame = coordinator->read_frame();
      } catch (const TransportError&) {
        return;  // coordinator hung up
      }
      switch (wire::peek_type(frame)) {
        case wire::MsgType::kRoundStart: {
          const wire::RoundStart msg = wire::decode_round_start(frame);
          std::optional<SparsePayload> mine;
          {
            std::lock_guard lock(mu);
            mine = worker.begin_round(msg);
          }
          std::optional<SparsePayload> theirs;
          if (mine) theirs = exchange(*mine, msg.peer);
          wire::RoundEnd end;
          {
            std::lock_guard lock(mu);
            end = worker.finish_round(theirs ? &*theirs : nullptr);
          }
          coordinator->write_frame(wire::encode(end));
          break;
        }
        case wire::MsgType::kModelFull: {
          if (!wire::decode_model_full(frame).values.empty()) {
            throw ProtocolError(ProtocolFault::kUnexpectedType, "worker received a model push");
          }
          wire::Bytes reply;
          {
            std::lock_guard lock(mu);
            reply = wire::encode(wire::ModelFull{worker.model().values()});
          }
          coordinator->write_frame(reply);
          break;
        }
        default:
          throw ProtocolError(ProtocolFault::kUnexpectedType,
                              std::string(wire::to_string(wire::peek_type(frame))) + " on control stream");
      }
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(mu);
    failure = "worker " + std::to_string(worker.rank()) + ": " + e.what();
    if (coordinator) coordinator->close();
  }
}

TcpWorkerHost::TcpWorkerHost(Worker worker, const std::string& host)
    : impl_(std::make_unique<Impl>(std::move(worker), host)) {}

TcpWorkerHost::~TcpWorkerHost() {
  if (!impl_->thread.joinable()) return;
  impl_->stopping = true;
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->coordinator) impl_->coordinator->close();
  }
  // Wake a serve loop still waiting for its coordinator, or for a peer.
  impl_->control.interrupt();
  impl_->peer.interrupt();
  impl_->thread.join();
}

std::uint32_t TcpWorkerHost::rank() const { return impl_->worker.rank(); }
TcpAddress TcpWorkerHost::control_address() const { return impl_->control.address(); }
TcpAddress TcpWorkerHost::peer_address() const { return impl_->peer.address(); }

void TcpWorkerHost::set_peer_table(std::vector<TcpAddress> table) {
  if (impl_->thread.joinable()) throw ValidationError("peer table must be set before start()");
  impl_->peers = std::move(table);
}

void TcpWorkerHost::start() {
  if (impl_->thread.joinable()) return;
  impl_->thread = std::thread([this] { impl_->serve(); });
}

ParameterVector TcpWorkerHost::model() const {
  std::lock_guard lock(impl_->mu);
  return impl_->worker.model();
}

WorkerTraffic TcpWorkerHost::traffic() const {
  std::lock_guard lock(impl_->mu);
  return {impl_->worker.values_sent(), impl_->worker.values_received(), impl_->peer_bytes_sent};
}

std::string TcpWorkerHost::failure() const {
  std::lock_guard lock(impl_->mu);
  return impl_->failure;
}

// ---------------------------------------------------------------------------

struct TcpCoordinatorFabric::Impl {
  std::vector<TcpStream> streams;
  std::vector<std::thread> readers;
  std::chrono::milliseconds timeout{0};
  std::mutex mu;
  std::condition_variable cv;
  std::deque<InboundFrame> queue;
  std::optional<std::string> error;
  std::atomic<bool> closing{false};

  void read_loop(std::uint32_t worker) {
    try {
      for (;;) {
        wire::Bytes frame = streams[worker].read_frame();
        std::lock_guard lock(mu);
        queue.push_back({worker, std::move(frame)});
        cv.notify_all();
      }
    } catch (const std::exception& e) {
      if (closing) return;
      std::lock_guard lock(mu);
      if (!error) error = "worker " + std::to_string(worker) + ": " + e.what();
      cv.notify_all();
    }
  }
};

TcpCoordinatorFabric::TcpCoordinatorFabric(const std::vector<TcpAddress>& workers,
                                           std::chrono::milliseconds receive_timeout)
    : impl_(std::make_unique<Impl>()) {
  impl_->timeout = receive_timeout;
  for (const auto& addr : workers) impl_->streams.push_back(TcpStream::connect(addr));
  for (std::uint32_t w = 0; w < workers.size(); ++w) {
    impl_->readers.emplace_back([this, w] { impl_->read_loop(w); });
  }
}

TcpCoordinatorFabric::~TcpCoordinatorFabric() {
  impl_->closing = true;
  for (auto& s : impl_->streams) s.close();
  for (auto& t : impl_->readers) t.join();
}

std::size_t TcpCoordinatorFabric::n_workers() const { return impl_->streams.size(); }

void TcpCoordinatorFabric::send(std::uint32_t worker, const wire::Bytes& frame) {
  if (worker >= impl_->streams.size()) throw TransportError("send to unknown worker " + std::to_string(worker));
  impl_->streams[worker].write_frame(frame);
}

InboundFrame TcpCoordinatorFabric::receive() {
  std::unique_lock lock(impl_->mu);
  const bool ready = impl_->cv.wait_for(lock, impl_->timeout,
                                        [&] { return !impl_->queue.empty() || impl_->error.has_value(); });
  if (!impl_->queue.empty()) {
    InboundFrame f = std::move(impl_->queue.front());
    impl_->queue.pop_front();
    return f;
  }
  if (!ready) throw TransportError("timed out waiting for workers");
  throw TransportError("connection lost: " + *impl_->error);
}

// ---------------------------------------------------------------------------

TcpLoopbackCluster::TcpLoopbackCluster(std::vector<Worker> workers) {
  std::vector<TcpAddress> peer_table;
  for (auto& w : workers) {
    hosts_.push_back(std::make_unique<TcpWorkerHost>(std::move(w)));
    peer_table.push_back(hosts_.back()->peer_address());
  }
  std::vector<TcpAddress> control;
  for (std::size_t r = 0; r < hosts_.size(); ++r) {
    if (hosts_[r]->rank() != r) throw ValidationError("workers must be ordered by rank");
    hosts_[r]->set_peer_table(peer_table);
    hosts_[r]->start();
    control.push_back(hosts_[r]->control_address());
  }
  fabric_ = std::make_unique<TcpCoordinatorFabric>(control);
}

TcpLoopbackCluster::~TcpLoopbackCluster() {
  fabric_.reset();
  hosts_.clear();
}

std::vector<ParameterVector> TcpLoopbackCluster::models() const {
  std::vector<ParameterVector> out;
  for (const auto& h : hosts_) out.push_back(h->model());
  return out;
}

std::vector<WorkerTraffic> TcpLoopbackCluster::traffic() const {
  std::vector<WorkerTraffic> out;
  for (const auto& h : hosts_) out.push_back(h->traffic());
  return out;
}

}  // namespace saps
