#include <doctest.h>

#include <thread>

#include "saps/tcp.hpp"
#include "saps/transport.hpp"

using namespace saps;

namespace {

BandwidthMatrix bw2(double v) {
  Eigen::MatrixXd raw(2, 2);
  raw << 0, v, v, 0;
  return symmetrize_bandwidth(raw);
}

BandwidthMatrix complete_bw(std::size_t n, double v = 1e6) {
  return symmetrize_bandwidth(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), v));
}

std::vector<Worker> make_workers(std::size_t n, std::size_t dims, std::uint32_t c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const ObjectiveSet s = make_logistic(n, 40 * n, dims, Partition::kIid, rng);
  std::vector<Worker> ws;
  for (std::uint32_t i = 0; i < n; ++i) {
    ws.emplace_back(i, ParameterVector(dims, 0.0), s.per_worker[i], WorkerOptions{0.2, c, 4}, derive_seed(seed, 100 + i));
  }
  return ws;
}

std::vector<ParameterVector> train(WorkerFabric& fabric, const BandwidthMatrix& b, std::uint64_t rounds, ParameterVector* final_model) {
  Coordinator coord(b, CoordinatorConfig{11, 4, std::nullopt, PeerSelection::kAdaptive, rounds});
  for (std::uint64_t t = 0; t < rounds; ++t) coord.run_round(fabric);
  *final_model = coord.collect_final_model(fabric);
  return fabric.models();
}

}  // namespace

TEST_CASE("simulated link timing") {
  SimNetwork net(bw2(100.0));
  const DeliveryReceipt r = net.send(0, 1, wire::Bytes(800, 0));
  CHECK(r.transfer_seconds == 8.0);
  CHECK(net.clock() == 8.0);
  CHECK(net.bytes_sent(0) == 800);

  SimNetwork dead(bw2(0.0));
  CHECK_THROWS_AS(dead.send(0, 1, wire::Bytes(10, 0)), ConfigError);
  CHECK_THROWS_AS(net.send(0, 0, wire::Bytes(10, 0)), ConfigError);
}

TEST_CASE("simulated receive validates frames and order") {
  SimNetwork net(bw2(1000.0));
  const wire::Bytes a = encode_payload(SparsePayload{0, 0, {1.0}});
  const wire::Bytes b = encode_payload(SparsePayload{1, 0, {2.0}});
  net.send(0, 1, a);
  net.send(0, 1, b);
  CHECK(net.receive(1, 0, wire::MsgType::kModelValues) == a);
  CHECK(net.receive(1, 0, wire::MsgType::kModelValues) == b);
  CHECK_THROWS_AS(net.receive(1, 0, wire::MsgType::kModelValues), TransportError);

  wire::Bytes bad = a;
  bad[wire::kHeaderSize + 2] ^= 0xFF;
  net.send(0, 1, bad);
  CHECK_THROWS_AS(net.receive(1, 0, wire::MsgType::kModelValues), ProtocolError);
}

TEST_CASE("round time is set by the slowest matched pair") {
  CHECK(round_time(Matching::from_pairs(2, {{0, 1}}), 10, bw2(2.0)) == 5.0);

  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(4, 4);
  raw(0, 1) = raw(1, 0) = 4;
  raw(2, 3) = raw(3, 2) = 2;
  const BandwidthMatrix b = symmetrize_bandwidth(raw);
  CHECK(round_time(Matching::from_pairs(4, {{0, 1}, {2, 3}}), 8, b) == 4.0);
  CHECK(round_time(Matching::from_pairs(4, {}), 8, b) == 0.0);
  CHECK_THROWS_AS(round_time(Matching::from_pairs(4, {{0, 2}}), 8, b), ConfigError);
}

TEST_CASE("tcp loopback frames arrive byte-identical") {
  TcpListener listener;
  const TcpAddress addr = listener.address();
  CHECK(addr.port != 0);
  SplitMix64 rng(1);
  std::vector<wire::Bytes> frames = {
      wire::encode(wire::RoundStart{3, 99, 1, 0}),
      wire::encode(wire::RoundEnd{3, 2, 0.125}),
      wire::encode(wire::ModelFull{}),
      wire::encode(wire::BandwidthReport{{{1, 3.5}}}),
  };
  SparsePayload big{1, 2, {}};
  for (int k = 0; k < 50000; ++k) big.values.push_back(rng.normal());
  frames.push_back(encode_payload(big));

  std::vector<wire::Bytes> received;
  std::thread server([&] {
    TcpStream s = listener.accept();
    for (std::size_t k = 0; k < frames.size(); ++k) {
      received.push_back(s.read_frame());
      s.write_frame(received.back());
    }
  });
  TcpStream client = TcpStream::connect(addr);
  for (const auto& f : frames) {
    client.write_frame(f);
    CHECK(client.read_frame() == f);
  }
  server.join();
  CHECK(received == frames);
}

TEST_CASE("tcp read reports a dropped connection") {
  TcpListener listener;
  std::thread server([&] {
    TcpStream s = listener.accept();
    s.close();
  });
  TcpStream client = TcpStream::connect(listener.address());
  server.join();
  CHECK_THROWS_AS(client.read_frame(), TransportError);
}

TEST_CASE("simulated fabric runs a round and answers model requests") {
  SimulatedFabric fabric(make_workers(4, 5, 2, 3), complete_bw(4));
  Coordinator coord(complete_bw(4), CoordinatorConfig{1, 4, std::nullopt, PeerSelection::kAdaptive, 3});
  for (int t = 0; t < 3; ++t) coord.run_round(fabric);
  const auto traffic = fabric.traffic();
  std::uint64_t sent = 0, recv = 0;
  for (const auto& w : traffic) {
    sent += w.values_sent;
    recv += w.values_received;
  }
  CHECK(sent == recv);
  CHECK(fabric.network().clock() > 0.0);
  const ParameterVector x = coord.collect_final_model(fabric);
  CHECK(x == fabric.models()[0]);
  CHECK_THROWS_AS(fabric.receive(), TransportError);
}

TEST_CASE("tcp and simulated transports give bit-identical models") {
  const std::size_t n = 4, dims = 6;
  const std::uint64_t rounds = 20;
  const BandwidthMatrix b = complete_bw(n);
  SimulatedFabric sim(make_workers(n, dims, 3, 5), b);
  TcpLoopbackCluster tcp(make_workers(n, dims, 3, 5));
  ParameterVector sim_final, tcp_final;
  const auto sim_models = train(sim, b, rounds, &sim_final);
  const auto tcp_models = train(tcp, b, rounds, &tcp_final);
  CHECK(sim_final == tcp_final);
  CHECK(sim_models == tcp_models);
  const auto st = sim.traffic();
  const auto tt = tcp.traffic();
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(st[i].values_sent == tt[i].values_sent);
    CHECK(st[i].peer_bytes_sent == tt[i].peer_bytes_sent);
  }
}

TEST_CASE("tcp coordinator times out on a silent worker") {
  TcpListener fake;
  std::thread accept_only([&] { TcpStream s = fake.accept(); std::this_thread::sleep_for(std::chrono::milliseconds(500)); });
  {
    TcpCoordinatorFabric fabric({fake.address()}, std::chrono::milliseconds(100));
    CHECK_THROWS_AS(fabric.receive(), TransportError);
  }
  accept_only.join();
}
