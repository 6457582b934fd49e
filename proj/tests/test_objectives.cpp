#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "saps/objectives.hpp"

using namespace saps;

namespace {

// max over components of |analytic - central difference| / max(|analytic|, |fd|, 1e-4)
double fd_relative_error(const Objective& f, std::vector<double> x, double h = 1e-5) {
  const std::size_t n = f.dimension();
  std::vector<double> g(n), scratch(n);
  f.full_loss_and_gradient(x, g);
  double worst = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double keep = x[j];
    x[j] = keep + h;
    const double up = f.full_loss(x);
    x[j] = keep - h;
    const double down = f.full_loss(x);
    x[j] = keep;
    const double fd = (up - down) / (2 * h);
    const double scale = std::max({std::abs(g[j]), std::abs(fd), 1e-4});
    worst = std::max(worst, std::abs(g[j] - fd) / scale);
  }
  return worst;
}

std::vector<double> random_point(std::size_t n, SplitMix64& rng, double scale) {
  std::vector<double> x(n);
  for (auto& v : x) v = scale * rng.normal();
  return x;
}

}  // namespace

TEST_CASE("quadratic closed forms") {
  const ObjectiveSet s = make_quadratic({ParameterVector(1, 0.0), ParameterVector(1, 2.0)});
  REQUIRE(s.optimum.has_value());
  CHECK((*s.optimum)[0] == 1.0);
  // f is the mean of f_i = 1/2 (x - b_i)^2: (1/2)(1/2 + 1/2). The sum would be 1.
  CHECK(s.global_loss(*s.optimum) == 0.5);

  const ObjectiveSet same = make_quadratic({ParameterVector(3, 0.5), ParameterVector(3, 0.5)});
  CHECK(*same.optimum == ParameterVector(3, 0.5));
  CHECK(same.global_loss(*same.optimum) == 0.0);

  SplitMix64 rng(1);
  const ObjectiveSet r = make_quadratic(7, 5, rng);
  for (std::size_t j = 0; j < 5; ++j) {
    double mean = 0;
    for (const auto& f : r.per_worker) mean += static_cast<const QuadraticObjective&>(*f).target()[j];
    mean /= 7;
    CHECK(std::abs((*r.optimum)[j] - mean) <= 1e-12);
  }
  const ParameterVector g = r.global_gradient(*r.optimum);
  for (double v : g) CHECK(std::abs(v) <= 1e-12);
}

TEST_CASE("quadratic gradient at its target is zero") {
  const QuadraticObjective q(ParameterVector(std::vector<double>{1, -2}));
  std::vector<double> grad(2);
  const std::size_t batch[] = {0};
  CHECK(q.loss_and_gradient(std::vector<double>{1, -2}, batch, grad) == 0.0);
  CHECK(grad == std::vector<double>{0, 0});
  CHECK_THROWS_AS(make_quadratic(2, 0, *std::make_unique<SplitMix64>(1)), ValidationError);
}

TEST_CASE("logistic loss at zero weights is ln 2") {
  SplitMix64 rng(2);
  const ObjectiveSet s = make_logistic(4, 200, 6, Partition::kIid, rng);
  const std::vector<double> zero(6, 0.0);
  for (const auto& f : s.per_worker) CHECK(std::abs(f->full_loss(zero) - std::log(2.0)) < 1e-12);
}

TEST_CASE("logistic gradient matches central differences") {
  SplitMix64 rng(3);
  const ObjectiveSet s = make_logistic(2, 120, 5, Partition::kIid, rng);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const auto& f = *s.per_worker[static_cast<std::size_t>(k) % 2];
    worst = std::max(worst, fd_relative_error(f, random_point(5, rng, 1.0)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("mlp gradient matches central differences") {
  SplitMix64 rng(4);
  const ObjectiveSet s = make_mlp(2, 60, MlpShape{3, 5, 3}, Partition::kIid, rng);
  const std::size_t dim = s.dimension();
  CHECK(dim == MlpObjective::parameter_count(3, 5, 3));
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    worst = std::max(worst, fd_relative_error(*s.per_worker[0], random_point(dim, rng, 0.5)));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("zero-weight mlp predicts uniform class probabilities") {
  SplitMix64 rng(5);
  const ObjectiveSet s = make_mlp(1, 20, MlpShape{4, 6, 3}, Partition::kIid, rng);
  const auto& mlp = static_cast<const MlpObjective&>(*s.per_worker[0]);
  const std::vector<double> zero(s.dimension(), 0.0);
  const Eigen::VectorXd p = mlp.predict(zero, Eigen::VectorXd::Ones(4));
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(std::abs(p(k) - 1.0 / 3.0) < 1e-15);
  CHECK(std::abs(mlp.full_loss(zero) - std::log(3.0)) < 1e-12);
}

TEST_CASE("mlp overtrains a single sample") {
  auto data = std::make_shared<Dataset>();
  data->features = Eigen::MatrixXd(1, 3);
  data->features << 0.5, -1.0, 2.0;
  data->labels = {1};
  data->n_classes = 3;
  SplitMix64 rng(6);
  const ObjectiveSet s = make_mlp(data, 1, 4, Partition::kIid, rng);
  ParameterVector x = s.initial_point(7);
  std::vector<double> g(x.size());
  double loss = 1;
  for (int it = 0; it < 20000 && loss >= 1e-3; ++it) {
    loss = s.per_worker[0]->full_loss_and_gradient(x.span(), g);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] -= 0.5 * g[j];
  }
  CHECK(s.per_worker[0]->full_loss(x.span()) < 1e-3);
}

TEST_CASE("partitions are disjoint and covering; label skew concentrates classes") {
  SplitMix64 rng(8);
  auto data = std::make_shared<const Dataset>(make_gaussian_clusters(400, 3, 2, 3.0, rng));
  for (Partition p : {Partition::kIid, Partition::kLabelSkew}) {
    const auto shards = partition_dataset(data, 4, p, rng);
    std::vector<int> seen(400, 0);
    for (const auto& s : shards)
      for (auto id : s.sample_ids) seen.at(id)++;
    for (int v : seen) CHECK(v == 1);

    for (const auto& s : shards) {
      std::size_t ones = 0;
      for (auto id : s.sample_ids) ones += data->labels[id] == 1 ? 1 : 0;
      const double frac = static_cast<double>(ones) / static_cast<double>(s.size());
      const double majority = std::max(frac, 1 - frac);
      if (p == Partition::kLabelSkew) {
        CHECK(majority >= 0.9);
      } else {
        CHECK(majority < 0.7);
      }
    }
  }
  CHECK_THROWS_AS(partition_dataset(data, 401, Partition::kIid, rng), ValidationError);
}

TEST_CASE("dataset file round trip") {
  SplitMix64 rng(9);
  const Dataset d = make_gaussian_clusters(30, 4, 3, 2.0, rng);
  const auto path = std::filesystem::temp_directory_path() / "saps_dataset_test.bin";
  write_dataset_file(path, d);
  const Dataset back = load_dataset_file(path);
  CHECK(back.features == d.features);
  CHECK(back.labels == d.labels);
  CHECK(back.n_classes == 3);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset_file(path), IoError);
}

TEST_CASE("non-empty batches inside the shard are required") {
  SplitMix64 rng(10);
  const ObjectiveSet s = make_logistic(2, 20, 3, Partition::kIid, rng);
  std::vector<double> x(3, 0.0), g(3);
  const std::size_t outside[] = {1000};
  CHECK_THROWS_AS(s.per_worker[0]->loss_and_gradient(x, {}, g), ValidationError);
  CHECK_THROWS_AS(s.per_worker[0]->loss_and_gradient(x, outside, g), ValidationError);
  CHECK(parse_partition("label-skew") == Partition::kLabelSkew);
  CHECK_THROWS_AS(parse_objective_kind("cnn"), ValidationError);
}
