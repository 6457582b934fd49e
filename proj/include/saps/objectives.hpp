#pragma once

// Desk-scale loss/gradient oracles. Each worker i owns an Objective bound to
// its data shard and evaluates f_i; the global objective is the mean over workers.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saps/core.hpp"

namespace saps {

enum class ObjectiveKind { kQuadratic, kLogistic, kMlp };
enum class Partition { kIid, kLabelSkew };

ObjectiveKind parse_objective_kind(const std::string& name);
Partition parse_partition(const std::string& name);
const char* to_string(ObjectiveKind kind);
const char* to_string(Partition partition);

/// Row-major samples with integer class labels.
struct Dataset {
  Eigen::MatrixXd features;  // rows = samples
  std::vector<int> labels;
  int n_classes = 2;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
};

/// A worker's slice of a dataset, as indices into it.
struct DataShard {
  std::shared_ptr<const Dataset> data;
  std::vector<std::size_t> sample_ids;
  Partition scheme = Partition::kIid;

  std::size_t size() const { return sample_ids.size(); }
};

/// Splits 0..n_samples-1 into n_workers disjoint, covering shards. iid shuffles
/// first; label-skew sorts by label so each shard is dominated by few classes.
std::vector<DataShard> partition_dataset(std::shared_ptr<const Dataset> data, std::size_t n_workers,
                                         Partition scheme, SplitMix64& rng);

class Objective {
 public:
  virtual ~Objective() = default;

  virtual ObjectiveKind kind() const = 0;
  virtual std::size_t dimension() const = 0;
  /// Number of samples a mini-batch can draw from (1 for the quadratic).
  virtual std::size_t sample_count() const = 0;
  /// Mean loss over `batch` (local sample indices); writes the gradient into grad.
  virtual double loss_and_gradient(std::span<const double> x, std::span<const std::size_t> batch,
                                   std::span<double> grad) const = 0;

  /// f_i(x) over the whole shard.
  double full_loss(std::span<const double> x) const;
  double full_loss_and_gradient(std::span<const double> x, std::span<double> grad) const;
};

/// f_i(x) = 1/2 ||x - b_i||^2.
class QuadraticObjective final : public Objective {
 public:
  explicit QuadraticObjective(ParameterVector target) : target_(std::move(target)) {}

  ObjectiveKind kind() const override { return ObjectiveKind::kQuadratic; }
  std::size_t dimension() const override { return target_.size(); }
  std::size_t sample_count() const override { return 1; }
  double loss_and_gradient(std::span<const double> x, std::span<const std::size_t> batch,
                           std::span<double> grad) const override;

  const ParameterVector& target() const { return target_; }

 private:
  ParameterVector target_;
};

/// Binary logistic loss with l2 regularization (labels 0/1).
class LogisticObjective final : public Objective {
 public:
  static constexpr double kDefaultL2 = 1e-4;

  LogisticObjective(DataShard shard, double l2 = kDefaultL2);

  ObjectiveKind kind() const override { return ObjectiveKind::kLogistic; }
  std::size_t dimension() const override { return shard_.data->dim(); }
  std::size_t sample_count() const override { return shard_.size(); }
  double loss_and_gradient(std::span<const double> x, std::span<const std::size_t> batch,
                           std::span<double> grad) const override;

  const DataShard& shard() const { return shard_; }

 private:
  DataShard shard_;
  double l2_;
};

/// One hidden tanh layer followed by softmax cross-entropy. Parameter layout:
/// W1 (hidden x input, row-major), b1, W2 (classes x hidden, row-major), b2.
class MlpObjective final : public Objective {
 public:
  MlpObjective(DataShard shard, std::size_t hidden);

  static std::size_t parameter_count(std::size_t input, std::size_t hidden, std::size_t classes);

  ObjectiveKind kind() const override { return ObjectiveKind::kMlp; }
  std::size_t dimension() const override;
  std::size_t sample_count() const override { return shard_.size(); }
  double loss_and_gradient(std::span<const double> x, std::span<const std::size_t> batch,
                           std::span<double> grad) const override;

  /// Class probabilities for one input row.
  Eigen::VectorXd predict(std::span<const double> x, const Eigen::VectorXd& input) const;

 private:
  DataShard shard_;
  std::size_t input_;
  std::size_t hidden_;
  std::size_t classes_;
};

/// One objective per worker plus what the runner needs about the global problem.
struct ObjectiveSet {
  ObjectiveKind kind = ObjectiveKind::kQuadratic;
  std::vector<std::shared_ptr<const Objective>> per_worker;
  std::shared_ptr<const Dataset> data;
  /// Closed-form optimum, known for the quadratic only.
  std::optional<ParameterVector> optimum;

  std::size_t dimension() const { return per_worker.front()->dimension(); }
  std::size_t n_workers() const { return per_worker.size(); }
  /// f(x) = mean_i f_i(x).
  double global_loss(const ParameterVector& x) const;
  ParameterVector global_gradient(const ParameterVector& x) const;
  /// Common starting point: zeros for convex objectives, small Gaussian weights for the MLP.
  ParameterVector initial_point(std::uint64_t seed) const;
};

/// b_i ~ N(0, I); optimum is mean(b_i).
ObjectiveSet make_quadratic(std::size_t n_workers, std::size_t n_dims, SplitMix64& rng);
ObjectiveSet make_quadratic(const std::vector<ParameterVector>& targets);

/// Two Gaussian classes at +/- a random unit direction (unit noise), n_samples
/// split across workers.
Dataset make_gaussian_clusters(std::size_t n_samples, std::size_t dim, int n_classes,
                               double separation, SplitMix64& rng);

ObjectiveSet make_logistic(std::size_t n_workers, std::size_t n_samples, std::size_t n_dims,
                           Partition partition, SplitMix64& rng);
ObjectiveSet make_logistic(std::shared_ptr<const Dataset> data, std::size_t n_workers,
                           Partition partition, SplitMix64& rng);

struct MlpShape {
  std::size_t input = 4;
  std::size_t hidden = 8;
  int classes = 3;
};

ObjectiveSet make_mlp(std::size_t n_workers, std::size_t n_samples, MlpShape shape,
                      Partition partition, SplitMix64& rng);
ObjectiveSet make_mlp(std::shared_ptr<const Dataset> data, std::size_t n_workers,
                      std::size_t hidden, Partition partition, SplitMix64& rng);

/// Binary matrix file: columns u32, rows u32, then rows x columns f64 row-major.
/// The last column holds the integer class label.
Dataset load_dataset_file(const std::filesystem::path& path);
void write_dataset_file(const std::filesystem::path& path, const Dataset& data);

}  // namespace saps
