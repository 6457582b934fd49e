#pragma once

// Round orchestration: threshold filtering, per-round peer assignment and
// seed distribution, the ROUND_END barrier, final-model collection; plus the
// analytic communication-cost model for SAPS and the baselines it is compared to.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "saps/core.hpp"
#include "saps/matching.hpp"
#include "saps/wire.hpp"

namespace saps {

/// B*_ij = 1 iff B_ij >= b_thres (and i != j). A pair with zero bandwidth is
/// never connected, even for b_thres = 0.
AdjacencyMatrix get_new_connected_graph(const BandwidthMatrix& b, double b_thres);

/// Median (nearest-rank 50th percentile) of the positive off-diagonal entries;
/// 0 if there are none.
double default_bandwidth_threshold(const BandwidthMatrix& b);

struct InboundFrame {
  std::uint32_t worker;
  wire::Bytes bytes;
};

/// The coordinator's side of the control plane.
class ControlFabric {
 public:
  virtual ~ControlFabric() = default;
  virtual std::size_t n_workers() const = 0;
  virtual void send(std::uint32_t worker, const wire::Bytes& frame) = 0;
  /// Next frame from any worker, in arrival order.
  virtual InboundFrame receive() = 0;
};

struct CoordinatorConfig {
  std::uint64_t master_seed = 0;
  std::int64_t t_thres = 10;
  /// nullopt selects default_bandwidth_threshold(B).
  std::optional<double> b_thres;
  PeerSelection mode = PeerSelection::kAdaptive;
  std::uint64_t total_rounds = 1;
};

struct RoundSummary {
  std::uint64_t round = 0;
  std::uint64_t seed = 0;
  Matching matching;
  bool bridged = false;
  bool fallback = false;
  std::vector<double> losses;  // indexed by worker

  double mean_loss() const;
};

class Coordinator {
 public:
  Coordinator(BandwidthMatrix b, CoordinatorConfig config);

  std::size_t n() const { return bandwidth_.n(); }
  std::uint64_t round() const { return round_; }
  double b_thres() const { return b_thres_; }
  const BandwidthMatrix& bandwidth() const { return bandwidth_; }
  const AdjacencyMatrix& filtered_graph() const { return selector_.config().filtered; }
  const TimestampMatrix& timestamps() const { return selector_.timestamps(); }
  const std::vector<RoundSummary>& log() const { return log_; }
  bool round_in_flight() const { return in_flight_.has_value(); }

  /// Draws the round seed, generates the matching and returns one ROUND_START per worker.
  std::vector<wire::RoundStart> plan_round();
  /// Registers a ROUND_END. Throws ProtocolError for a wrong round, unknown
  /// worker or duplicate acknowledgment; the error names the worker.
  void acknowledge(const wire::RoundEnd& msg);
  bool all_acknowledged() const;
  /// Closes the barrier: records the matching into R and advances t by one.
  const RoundSummary& complete_round();
  /// Drops an in-flight round without advancing t or touching R.
  void abort_round();

  /// plan -> send ROUND_STARTs -> wait for n ROUND_ENDs -> complete. Any error
  /// aborts the round and is rethrown. BANDWIDTH_REPORTs received meanwhile
  /// are applied after the barrier.
  const RoundSummary& run_round(ControlFabric& fabric);

  /// Requests and returns worker 0's dense model; requires t == total_rounds.
  ParameterVector collect_final_model(ControlFabric& fabric);

  /// Updates B from a worker's measured link speeds (min rule). B* stays fixed.
  void apply_bandwidth_report(std::uint32_t worker, const wire::BandwidthReport& report);

  std::uint64_t model_bytes_received() const { return model_bytes_received_; }
  std::uint64_t control_bytes_received() const { return control_bytes_received_; }

 private:
  struct InFlight {
    RoundSummary summary;
    std::vector<char> acked;
    std::size_t ack_count = 0;
  };

  BandwidthMatrix bandwidth_;
  CoordinatorConfig config_;
  double b_thres_;
  PeerSelector selector_;
  SplitMix64 seeds_;
  std::uint64_t round_ = 0;
  std::optional<InFlight> in_flight_;
  std::vector<RoundSummary> log_;
  std::uint64_t model_bytes_received_ = 0;
  std::uint64_t control_bytes_received_ = 0;
};

// ---------------------------------------------------------------------------
// Analytic communication cost, counted in model parameters

enum class Algorithm {
  kPsPsgd,
  kAllReducePsgd,
  kTopKPsgd,
  kFedAvg,
  kSFedAvg,
  kDPsgd,
  kDcdPsgd,
  kSapsPsgd,
};

inline constexpr Algorithm kAllAlgorithms[] = {
    Algorithm::kPsPsgd, Algorithm::kAllReducePsgd, Algorithm::kTopKPsgd, Algorithm::kFedAvg,
    Algorithm::kSFedAvg, Algorithm::kDPsgd, Algorithm::kDcdPsgd, Algorithm::kSapsPsgd};

Algorithm parse_algorithm(const std::string& name);
const char* to_string(Algorithm algo);

struct CostModelInput {
  Algorithm algorithm = Algorithm::kSapsPsgd;
  double N = 0;  // model size
  double n = 0;  // workers
  double T = 0;  // rounds
  double c = 1;  // compression ratio
  std::optional<double> n_p;  // neighbor count, D-PSGD and DCD-PSGD only
};

struct CommCost {
  double server = 0;
  double worker = 0;
};

/// Closed-form (server, worker) cost. Throws ValidationError for non-positive
/// inputs, c < 1, or a missing or < 1 neighbor count where one is required.
CommCost comm_cost(const CostModelInput& input);

struct CostFormula {
  const char* server;
  const char* worker;
};

/// Symbolic form of comm_cost, e.g. {"N", "2(N/c)T"} for SAPS-PSGD.
CostFormula cost_formula(Algorithm algo);

}  // namespace saps
