#include "saps/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace saps {

ObjectiveKind parse_objective_kind(const std::string& name) {
  if (name == "quadratic") return ObjectiveKind::kQuadratic;
  if (name == "logistic") return ObjectiveKind::kLogistic;
  if (name == "mlp") return ObjectiveKind::kMlp;
  throw ValidationError("unknown objective kind '" + name + "'");
}

Partition parse_partition(const std::string& name) {
  if (name == "iid") return Partition::kIid;
  if (name == "label-skew" || name == "label_skew") return Partition::kLabelSkew;
  throw ValidationError("unknown partition scheme '" + name + "'");
}

const char* to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kQuadratic: return "quadratic";
    case ObjectiveKind::kLogistic: return "logistic";
    case ObjectiveKind::kMlp: return "mlp";
  }
  return "?";
}

const char* to_string(Partition partition) {
  return partition == Partition::kIid ? "iid" : "label-skew";
}

std::vector<DataShard> partition_dataset(std::shared_ptr<const Dataset> data, std::size_t n_workers,
                                         Partition scheme, SplitMix64& rng) {
  const std::size_t total = data->size();
  if (n_workers == 0 || total < n_workers) {
    throw ValidationError("partition: need at least one sample per worker");
  }
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = total; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_below(i)]);
  if (scheme == Partition::kLabelSkew) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return data->labels[a] < data->labels[b]; });
  }
  std::vector<DataShard> shards(n_workers);
  const std::size_t base = total / n_workers;
  const std::size_t extra = total % n_workers;
  std::size_t pos = 0;
  for (std::size_t w = 0; w < n_workers; ++w) {
    const std::size_t len = base + (w < extra ? 1 : 0);
    shards[w].data = data;
    shards[w].scheme = scheme;
    shards[w].sample_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return shards;
}

double Objective::full_loss(std::span<const double> x) const {
  std::vector<double> scratch(dimension());
  return full_loss_and_gradient(x, scratch);
}

double Objective::full_loss_and_gradient(std::span<const double> x, std::span<double> grad) const {
  std::vector<std::size_t> all(sample_count());
  std::iota(all.begin(), all.end(), 0);
  return loss_and_gradient(x, all, grad);
}

// ---------------------------------------------------------------------------

double QuadraticObjective::loss_and_gradient(std::span<const double> x, std::span<const std::size_t>,
                                             std::span<double> grad) const {
  double loss = 0.0;
  for (std::size_t j = 0; j < target_.size(); ++j) {
    const double d = x[j] - target_[j];
    grad[j] = d;
    loss += 0.5 * d * d;
  }
  return loss;
}

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void require_batch(std::span<const std::size_t> batch, std::size_t limit) {
  if (batch.empty()) throw ValidationError("empty mini-batch");
  for (std::size_t k : batch)
    if (k >= limit) throw ValidationError("mini-batch index outside shard");
}

}  // namespace

LogisticObjective::LogisticObjective(DataShard shard, double l2) : shard_(std::move(shard)), l2_(l2) {
  if (!shard_.data || shard_.size() == 0) throw ValidationError("logistic objective needs a non-empty shard");
}

double LogisticObjective::loss_and_gradient(std::span<const double> x,
                                            std::span<const std::size_t> batch,
                                            std::span<double> grad) const {
  require_batch(batch, shard_.size());
  const std::size_t dim = dimension();
  Eigen::Map<const Eigen::VectorXd> w(x.data(), static_cast<Eigen::Index>(dim));
  Eigen::Map<Eigen::VectorXd> g(grad.data(), static_cast<Eigen::Index>(dim));
  g.setZero();
  double loss = 0.0;
  for (std::size_t k : batch) {
    const std::size_t id = shard_.sample_ids[k];
    const auto row = shard_.data->features.row(static_cast<Eigen::Index>(id));
    const double sign = shard_.data->labels[id] == 1 ? 1.0 : -1.0;
    const double margin = sign * row.dot(w);
    loss += softplus(-margin);
    g -= (sign * sigmoid(-margin)) * row.transpose();
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  g *= inv;
  g += l2_ * w;
  return loss * inv + 0.5 * l2_ * w.squaredNorm();
}

// ---------------------------------------------------------------------------

MlpObjective::MlpObjective(DataShard shard, std::size_t hidden)
    : shard_(std::move(shard)), hidden_(hidden) {
  if (!shard_.data || shard_.size() == 0) throw ValidationError("mlp objective needs a non-empty shard");
  if (hidden == 0) throw ValidationError("mlp needs at least one hidden unit");
  input_ = shard_.data->dim();
  classes_ = static_cast<std::size_t>(shard_.data->n_classes);
}

std::size_t MlpObjective::parameter_count(std::size_t input, std::size_t hidden, std::size_t classes) {
  return hidden * input + hidden + classes * hidden + classes;
}

std::size_t MlpObjective::dimension() const { return parameter_count(input_, hidden_, classes_); }

namespace {

struct MlpView {
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w1;
  Eigen::Map<const Eigen::VectorXd> b1;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w2;
  Eigen::Map<const Eigen::VectorXd> b2;
};

MlpView view_of(std::span<const double> x, Eigen::Index in, Eigen::Index hid, Eigen::Index cls) {
  const double* p = x.data();
  return MlpView{{p, hid, in}, {p + hid * in, hid}, {p + hid * in + hid, cls, hid},
                 {p + hid * in + hid + cls * hid, cls}};
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

Eigen::VectorXd MlpObjective::predict(std::span<const double> x, const Eigen::VectorXd& input) const {
  const auto in = static_cast<Eigen::Index>(input_);
  const auto hid = static_cast<Eigen::Index>(hidden_);
  const auto cls = static_cast<Eigen::Index>(classes_);
  const MlpView v = view_of(x, in, hid, cls);
  const Eigen::VectorXd h = (v.w1 * input + v.b1).array().tanh();
  return softmax(v.w2 * h + v.b2);
}

double MlpObjective::loss_and_gradient(std::span<const double> x, std::span<const std::size_t> batch,
                                       std::span<double> grad) const {
  require_batch(batch, shard_.size());
  const auto in = static_cast<Eigen::Index>(input_);
  const auto hid = static_cast<Eigen::Index>(hidden_);
  const auto cls = static_cast<Eigen::Index>(classes_);
  const MlpView v = view_of(x, in, hid, cls);

  std::fill(grad.begin(), grad.end(), 0.0);
  double* gp = grad.data();
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw1(gp, hid, in);
  Eigen::Map<Eigen::VectorXd> gb1(gp + hid * in, hid);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw2(
      gp + hid * in + hid, cls, hid);
  Eigen::Map<Eigen::VectorXd> gb2(gp + hid * in + hid + cls * hid, cls);

  double loss = 0.0;
  for (std::size_t k : batch) {
    const std::size_t id = shard_.sample_ids[k];
    const Eigen::VectorXd a = shard_.data->features.row(static_cast<Eigen::Index>(id)).transpose();
    const int label = shard_.data->labels[id];
    const Eigen::VectorXd h = (v.w1 * a + v.b1).array().tanh();
    const Eigen::VectorXd z = v.w2 * h + v.b2;
    const double zmax = z.maxCoeff();
    const double log_sum = zmax + std::log((z.array() - zmax).exp().sum());
    loss += log_sum - z(label);

    Eigen::VectorXd dz = (z.array() - log_sum).exp();
    dz(label) -= 1.0;
    gw2 += dz * h.transpose();
    gb2 += dz;
    const Eigen::VectorXd dh = (v.w2.transpose() * dz).array() * (1.0 - h.array().square());
    gw1 += dh * a.transpose();
    gb1 += dh;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv;
  return loss * inv;
}

// ---------------------------------------------------------------------------

double ObjectiveSet::global_loss(const ParameterVector& x) const {
  double total = 0.0;
  for (const auto& f : per_worker) total += f->full_loss(x.span());
  return total / static_cast<double>(per_worker.size());
}

ParameterVector ObjectiveSet::global_gradient(const ParameterVector& x) const {
  ParameterVector sum(dimension());
  std::vector<double> g(dimension());
  for (const auto& f : per_worker) {
    f->full_loss_and_gradient(x.span(), g);
    for (std::size_t j = 0; j < g.size(); ++j) sum[j] += g[j];
  }
  for (std::size_t j = 0; j < sum.size(); ++j) sum[j] /= static_cast<double>(per_worker.size());
  return sum;
}

ParameterVector ObjectiveSet::initial_point(std::uint64_t seed) const {
  ParameterVector x(dimension());
  if (kind == ObjectiveKind::kMlp) {
    SplitMix64 rng(seed);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = 0.3 * rng.normal();
  }
  return x;
}

ObjectiveSet make_quadratic(const std::vector<ParameterVector>& targets) {
  if (targets.empty()) throw ValidationError("make_quadratic: need at least one worker");
  const std::size_t dim = targets.front().size();
  if (dim == 0) throw ValidationError("make_quadratic: dimension must be >= 1");
  ObjectiveSet set;
  set.kind = ObjectiveKind::kQuadratic;
  ParameterVector mean(dim);
  for (const auto& b : targets) {
    if (b.size() != dim) throw ValidationError("make_quadratic: targets differ in dimension");
    set.per_worker.push_back(std::make_shared<QuadraticObjective>(b));
    for (std::size_t j = 0; j < dim; ++j) mean[j] += b[j];
  }
  for (std::size_t j = 0; j < dim; ++j) mean[j] /= static_cast<double>(targets.size());
  set.optimum = mean;
  return set;
}

ObjectiveSet make_quadratic(std::size_t n_workers, std::size_t n_dims, SplitMix64& rng) {
  if (n_dims == 0) throw ValidationError("make_quadratic: N must be >= 1");
  std::vector<ParameterVector> targets;
  targets.reserve(n_workers);
  for (std::size_t i = 0; i < n_workers; ++i) {
    ParameterVector b(n_dims);
    for (std::size_t j = 0; j < n_dims; ++j) b[j] = rng.normal();
    targets.push_back(std::move(b));
  }
  return make_quadratic(targets);
}

Dataset make_gaussian_clusters(std::size_t n_samples, std::size_t dim, int n_classes,
                               double separation, SplitMix64& rng) {
  if (n_classes < 2 || dim == 0) throw ValidationError("clusters need >= 2 classes and dim >= 1");
  const auto rows = static_cast<Eigen::Index>(n_samples);
  const auto cols = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd centers(n_classes, cols);
  if (n_classes == 2) {
    Eigen::VectorXd u(cols);
    for (Eigen::Index j = 0; j < cols; ++j) u(j) = rng.normal();
    u.normalize();
    centers.row(0) = -separation * u.transpose();
    centers.row(1) = separation * u.transpose();
  } else {
    for (int c = 0; c < n_classes; ++c)
      for (Eigen::Index j = 0; j < cols; ++j) centers(c, j) = separation * rng.normal();
  }
  Dataset d;
  d.n_classes = n_classes;
  d.features.resize(rows, cols);
  d.labels.resize(n_samples);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int label = static_cast<int>(i % n_classes);
    d.labels[static_cast<std::size_t>(i)] = label;
    for (Eigen::Index j = 0; j < cols; ++j) d.features(i, j) = centers(label, j) + rng.normal();
  }
  return d;
}

ObjectiveSet make_logistic(std::shared_ptr<const Dataset> data, std::size_t n_workers,
                           Partition partition, SplitMix64& rng) {
  if (data->n_classes != 2) throw ValidationError("logistic objective needs binary labels");
  ObjectiveSet set;
  set.kind = ObjectiveKind::kLogistic;
  set.data = data;
  for (auto& shard : partition_dataset(data, n_workers, partition, rng)) {
    set.per_worker.push_back(std::make_shared<LogisticObjective>(std::move(shard)));
  }
  return set;
}

ObjectiveSet make_logistic(std::size_t n_workers, std::size_t n_samples, std::size_t n_dims,
                           Partition partition, SplitMix64& rng) {
  if (n_samples < n_workers) throw ValidationError("make_logistic: n_samples must be >= n_workers");
  auto data = std::make_shared<const Dataset>(make_gaussian_clusters(n_samples, n_dims, 2, 1.0, rng));
  return make_logistic(std::move(data), n_workers, partition, rng);
}

ObjectiveSet make_mlp(std::shared_ptr<const Dataset> data, std::size_t n_workers,
                      std::size_t hidden, Partition partition, SplitMix64& rng) {
  ObjectiveSet set;
  set.kind = ObjectiveKind::kMlp;
  set.data = data;
  for (auto& shard : partition_dataset(data, n_workers, partition, rng)) {
    set.per_worker.push_back(std::make_shared<MlpObjective>(std::move(shard), hidden));
  }
  return set;
}

ObjectiveSet make_mlp(std::size_t n_workers, std::size_t n_samples, MlpShape shape,
                      Partition partition, SplitMix64& rng) {
  if (n_samples < n_workers) throw ValidationError("make_mlp: n_samples must be >= n_workers");
  auto data = std::make_shared<const Dataset>(
      make_gaussian_clusters(n_samples, shape.input, shape.classes, 2.0, rng));
  return make_mlp(std::move(data), n_workers, shape.hidden, partition, rng);
}

// ---------------------------------------------------------------------------

Dataset load_dataset_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file " + path.string());
  std::uint32_t cols = 0;
  std::uint32_t rows = 0;
  in.read(reinterpret_cast<char*>(&cols), 4);
  in.read(reinterpret_cast<char*>(&rows), 4);
  if (!in) throw IoError("dataset file " + path.string() + ": truncated header");
  if (cols < 2 || rows == 0) throw ValidationError("dataset file needs >= 2 columns and >= 1 row");
  std::vector<double> raw(static_cast<std::size_t>(cols) * rows);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 8));
  if (!in) throw IoError("dataset file " + path.string() + ": truncated body");

  Dataset d;
  d.features.resize(rows, cols - 1);
  d.labels.resize(rows);
  int max_label = 0;
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j + 1 < cols; ++j) d.features(i, j) = raw[std::size_t{i} * cols + j];
    const double label = raw[std::size_t{i} * cols + cols - 1];
    if (!(label >= 0.0) || label != std::floor(label) || label > 1e6) {
      throw ValidationError("dataset file: label column must hold small nonnegative integers");
    }
    d.labels[i] = static_cast<int>(label);
    max_label = std::max(max_label, d.labels[i]);
  }
  if (!d.features.allFinite()) throw ValidationError("dataset file: non-finite feature value");
  d.n_classes = std::max(2, max_label + 1);
  return d;
}

void write_dataset_file(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file " + path.string());
  const auto cols = static_cast<std::uint32_t>(data.dim() + 1);
  const auto rows = static_cast<std::uint32_t>(data.size());
  out.write(reinterpret_cast<const char*>(&cols), 4);
  out.write(reinterpret_cast<const char*>(&rows), 4);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j + 1 < cols; ++j) {
      const double v = data.features(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
    const double label = data.labels[i];
    out.write(reinterpret_cast<const char*>(&label), 8);
  }
  if (!out) throw IoError("write failed for dataset file " + path.string());
}

}  // namespace saps
