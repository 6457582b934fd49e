#pragma once

// End-to-end runs: config parsing, bandwidth source, objective construction,
// the coordinator loop over a simulated or TCP fabric, and per-round metrics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "saps/analysis.hpp"
#include "saps/coordinator.hpp"
#include "saps/core.hpp"
#include "saps/matching.hpp"
#include "saps/objectives.hpp"

namespace saps {

enum class TransportKind { kSim, kTcp };
TransportKind parse_transport(const std::string& name);
const char* to_string(TransportKind kind);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::kQuadratic;
  std::size_t batch_size = 0;  // 0: whole shard
  std::size_t n_samples = 0;   // 0: 50 per worker
  std::size_t hidden = 8;      // mlp only
  int classes = 3;             // synthetic mlp data only
  std::optional<std::string> data_file;
};

struct BandwidthSpec {
  enum class Kind { kFile, kUniform, kFourteenCity };
  Kind kind = Kind::kUniform;
  std::string path;  // kFile: n x n CSV in bytes/s, '#' starts a comment line
  double lo = 0.0;   // kUniform: entries ~ Uniform(lo, hi] bytes/s
  double hi = 5e6;
};

/// JSON keys are exactly the field names below, with T_thres, B_thres and
/// master_seed spelled as shown. N is the model dimension for the quadratic,
/// the feature dimension for logistic regression and the input width for the MLP.
struct ExperimentConfig {
  std::size_t n = 8;
  std::size_t N = 10;
  std::uint64_t T = 100;
  std::uint32_t c = 1;
  double gamma = 0.05;
  std::int64_t T_thres = 10;
  std::optional<double> B_thres;
  std::uint64_t master_seed = 0;
  ObjectiveSpec objective;
  Partition partition = Partition::kIid;
  TransportKind transport = TransportKind::kSim;
  PeerSelection peer_selection = PeerSelection::kAdaptive;
  BandwidthSpec bandwidth;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Unknown keys and type mismatches are ValidationErrors.
ExperimentConfig parse_config(const std::string& json_text);
/// Relative bandwidth and dataset paths are resolved against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
std::string to_json(const ExperimentConfig& config);

/// n x n bandwidth matrix from a CSV file; throws IoError / ValidationError.
BandwidthMatrix load_bandwidth_csv(const std::filesystem::path& path);
/// Upper triangle drawn from Uniform(lo, hi], mirrored.
BandwidthMatrix uniform_bandwidth(std::size_t n, double lo, double hi, SplitMix64& rng);
/// The bundled synthetic 14-worker preset.
BandwidthMatrix fourteen_city_bandwidth();

/// Seeds: bandwidth from derive_seed(master, 2), data from derive_seed(master, 3).
BandwidthMatrix build_bandwidth(const ExperimentConfig& config);
ObjectiveSet build_objectives(const ExperimentConfig& config);

struct RunOptions {
  std::optional<std::filesystem::path> csv_path;
  /// Samples for the rho estimate in the summary; 0 skips it.
  std::size_t rho_samples = 1000;
};

struct RunSummary {
  double final_loss = 0.0;       // global f at the collected final model
  double mean_model_loss = 0.0;  // global f at the worker average
  std::uint64_t total_values_sent = 0;
  std::uint64_t total_peer_bytes = 0;
  std::vector<std::uint64_t> values_per_worker;  // sent + received
  std::uint64_t coordinator_model_bytes = 0;
  std::uint64_t coordinator_model_values = 0;
  double virtual_time = 0.0;
  std::optional<SpectralEstimate> rho;
  double b_thres = 0.0;
};

struct ExperimentResult {
  ParameterVector final_model;               // worker 0's model as collected by the coordinator
  std::vector<ParameterVector> worker_models;
  std::vector<RoundRecord> records;
  RunSummary summary;
  ObjectiveSet objectives;
};

/// Runs T rounds and collects the final model. The config is validated
/// before anything is built.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

std::string format_summary(const ExperimentConfig& config, const RunSummary& summary);

}  // namespace saps
