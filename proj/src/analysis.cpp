#include "saps/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "saps/sparsify.hpp"

namespace saps {

namespace {

/// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

void remove_mean(Eigen::VectorXd& v) { v.array() -= v.mean(); }

PeerSelector warmed_up(const PeerSelectorConfig& generator, std::uint64_t seed) {
  PeerSelector sel(generator, seed);
  const auto warmup = static_cast<std::size_t>(10 * generator.t_thres);
  for (std::size_t k = 0; k < warmup; ++k) sel.next();
  return sel;
}

}  // namespace

double second_eigenvalue(const Eigen::MatrixXd& a, std::size_t* steps, double tol, std::size_t max_steps) {
  const Eigen::Index n = a.rows();
  if (n < 2 || a.cols() != n) throw ValidationError("second_eigenvalue needs a square matrix with n >= 2");
  const Eigen::MatrixXd deflated = a - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));

  SplitMix64 rng(0x5A7E11A5EEDULL);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  remove_mean(v);
  v.normalize();

  for (std::size_t k = 1; k <= max_steps; ++k) {
    Eigen::VectorXd w = deflated * v;
    remove_mean(w);  // keep roundoff from reintroducing the top eigenvector
    const double lambda = v.dot(w);
    const double residual = (w - lambda * v).norm();
    if (steps) *steps = k;
    if (residual < tol) return lambda;
    const double norm = w.norm();
    if (norm < 1e-300) return 0.0;
    v = w / norm;
  }
  throw NumericalError("power iteration did not reach residual " + std::to_string(tol) + " in " +
                       std::to_string(max_steps) + " steps");
}

SpectralEstimate estimate_rho(const GossipSampler& sample, std::size_t n_samples) {
  if (n_samples < 100) throw ValidationError("estimate_rho needs at least 100 samples");
  constexpr std::size_t kBatches = 10;
  Eigen::MatrixXd first = sample();
  const Eigen::Index n = first.rows();
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd batch = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> batch_rho;
  std::size_t in_batch = 0;
  const std::size_t batch_size = n_samples / kBatches;

  for (std::size_t s = 0; s < n_samples; ++s) {
    const Eigen::MatrixXd w = s == 0 ? first : sample();
    if (w.rows() != n || w.cols() != n) throw ValidationError("sampler changed matrix size");
    const Eigen::MatrixXd wtw = w.transpose() * w;
    total += wtw;
    batch += wtw;
    if (++in_batch == batch_size && batch_rho.size() < kBatches) {
      batch_rho.push_back(second_eigenvalue(batch / static_cast<double>(in_batch)));
      batch.setZero();
      in_batch = 0;
    }
  }

  SpectralEstimate est;
  est.n_samples = n_samples;
  est.rho = second_eigenvalue(total / static_cast<double>(n_samples), &est.iterations);
  est.rho = std::clamp(est.rho, 0.0, 1.0);
  double mean = 0.0;
  for (double r : batch_rho) mean += r;
  mean /= static_cast<double>(batch_rho.size());
  double var = 0.0;
  for (double r : batch_rho) var += (r - mean) * (r - mean);
  var /= static_cast<double>(batch_rho.size() - 1);
  est.standard_error = std::sqrt(var / static_cast<double>(batch_rho.size()));
  return est;
}

SpectralEstimate estimate_rho(const PeerSelectorConfig& generator, std::size_t n_samples, std::uint64_t seed) {
  PeerSelector sel = warmed_up(generator, seed);
  return estimate_rho([&] { return sel.next().w.weights(); }, n_samples);
}

double consensus_error(const std::vector<ParameterVector>& models) {
  if (models.empty()) return 0.0;
  const ParameterVector mean = mean_model(models);
  double err = 0.0;
  for (const auto& x : models) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - mean[j];
      err += d * d;
    }
  }
  return err;
}

ParameterVector mean_model(const std::vector<ParameterVector>& models) {
  if (models.empty()) throw ValidationError("mean of zero models");
  ParameterVector mean(models.front().size());
  for (const auto& x : models) {
    if (x.size() != mean.size()) throw ValidationError("models differ in dimension");
    for (std::size_t j = 0; j < x.size(); ++j) mean[j] += x[j];
  }
  for (std::size_t j = 0; j < mean.size(); ++j) mean[j] /= static_cast<double>(models.size());
  return mean;
}

ContractionResult measure_contraction(const ContractionSetup& setup, std::uint64_t seed) {
  if (setup.n_trials < 100) throw ValidationError("measure_contraction needs at least 100 trials");
  if (setup.n_dims == 0) throw ValidationError("measure_contraction needs n_dims >= 1");
  const CompressionConfig comp(setup.c);
  const std::size_t n = setup.generator.bandwidth.n();
  const std::size_t dims = setup.n_dims;

  std::vector<CompensatedSum> sums(setup.t_max + 1);
  for (std::size_t trial = 0; trial < setup.n_trials; ++trial) {
    const std::uint64_t trial_seed = derive_seed(seed, trial);
    SplitMix64 rng(trial_seed);
    PeerSelector sel = warmed_up(setup.generator, derive_seed(trial_seed, 1));

    Eigen::MatrixXd x(n, dims);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
    auto error = [&] {
      const Eigen::RowVectorXd mean = x.colwise().mean();
      return (x.rowwise() - mean).squaredNorm();
    };
    const double e0 = error();
    sums[0].add(1.0);
    for (std::size_t t = 1; t <= setup.t_max; ++t) {
      const Matching m = sel.next().matching;
      const MaskStream mask = generate_mask(rng.next(), setup.c, dims);
      for (auto [a, b] : m.pairs()) {
        for (std::uint32_t j : mask.indices()) {
          const double avg = 0.5 * (x(a, j) + x(b, j));
          x(a, j) = avg;
          x(b, j) = avg;
        }
      }
      sums[t].add(error() / e0);
    }
  }

  ContractionResult out;
  out.rho = setup.rho;
  out.factor = comp.q() + comp.p() * (setup.square_rho ? setup.rho * setup.rho : setup.rho);
  out.mean_ratio.resize(setup.t_max + 1);
  for (std::size_t t = 0; t <= setup.t_max; ++t) {
    out.mean_ratio[t] = sums[t].value() / static_cast<double>(setup.n_trials);
  }
  for (std::size_t t = 1; t <= setup.t_max; ++t) {
    const double bound = std::pow(out.factor, static_cast<double>(t));
    if (bound < setup.min_bound) break;
    double excess;
    if (bound > 0.0) {
      excess = out.mean_ratio[t] / bound;
    } else {
      excess = out.mean_ratio[t] > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
    if (excess > out.worst_excess) {
      out.worst_excess = excess;
      out.worst_t = t;
    }
  }
  out.within_bound = out.worst_excess <= setup.slack;
  return out;
}

DConstants d_constants(double p, double rho) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw DomainError("p must lie in (0, 1]; p = 0 means nothing is ever exchanged and q + p*rho = 1");
  }
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw DomainError("rho must lie in [0, 1); rho = 1 means the gossip process never mixes");
  }
  const double q = 1.0 - p;
  const double a = q + p * rho;
  const double b = q + p * rho * rho;
  const double den1 = (1.0 - std::sqrt(a)) * (1.0 - std::sqrt(a));
  const double den2 = 1.0 - b;
  if (den1 <= 0.0 || den2 <= 0.0) throw DomainError("mixing factor rounds to 1; D1/D2 undefined");
  return {2.0 / den1, 2.0 / den2};
}

double theorem_bound(const TheoryConstants& k, double n, double T, const DConstants& d, double x0_consensus) {
  k.validate();
  if (k.sigma == 0.0) {
    throw DomainError(
        "sigma = 0: the step size the bound is derived for, 1/(2 sqrt(3 D1) L + sigma sqrt(T/n)), "
        "and the zeta^2/sigma^2 term are undefined without gradient noise");
  }
  if (!(n >= 1.0) || !(T >= 1.0)) throw ValidationError("theorem_bound needs n >= 1 and T >= 1");
  if (!(x0_consensus >= 0.0)) throw ValidationError("initial consensus distance must be >= 0");
  const double s = k.sigma, L = k.lipschitz, f = k.f0_minus_fstar, z = k.zeta;
  const double t1 = (6.0 * s * f + 3.0 * s) / (2.0 * std::sqrt(n * T));
  const double t2 = (6.0 * std::sqrt(3.0) * L * f + 2.0 * L * L * d.d1 * n) / T;
  const double t3 = 3.0 * L * L * d.d1 * n * z * z / (s * s * T);
  const double t4 = 2.0 * L * L * d.d2 * x0_consensus / (n * T);
  return t1 + t2 + t3 + t4;
}

std::pair<double, double> matched_bandwidth(const Matching& m, const BandwidthMatrix& b) {
  if (m.size() == 0) return {0.0, 0.0};
  double lo = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (auto [i, j] : m.pairs()) {
    lo = std::min(lo, b(i, j));
    sum += b(i, j);
  }
  return {lo, sum / static_cast<double>(m.size())};
}

BandwidthStats bandwidth_stats(const std::vector<RoundRecord>& records) {
  if (records.empty()) throw ValidationError("bandwidth_stats needs at least one round");
  BandwidthStats s;
  CompensatedSum lo, mean;
  std::size_t active = 0;
  for (const auto& r : records) {
    s.min_per_round.push_back(r.min_bw);
    s.mean_per_round.push_back(r.mean_bw);
    if (r.pairs == 0) continue;
    lo.add(r.min_bw);
    mean.add(r.mean_bw);
    ++active;
  }
  if (active > 0) {
    s.run_mean_min = lo.value() / static_cast<double>(active);
    s.run_mean_mean = mean.value() / static_cast<double>(active);
  }
  return s;
}

std::string format_csv(const std::vector<RoundRecord>& records) {
  std::string out = kCsvHeader;
  out += '\n';
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%llu,%zu,%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<unsigned long long>(r.round), r.pairs,
                  static_cast<unsigned long long>(r.bytes_per_worker), r.min_bw, r.mean_bw, r.consensus_err,
                  r.mean_loss, r.cum_time);
    out += buf;
  }
  return out;
}

void export_csv(const std::vector<RoundRecord>& records, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string text = format_csv(records);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  f.close();
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace saps
