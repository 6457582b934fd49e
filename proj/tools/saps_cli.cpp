// saps: run experiments, the verification suite, rho estimates and the cost model.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "saps/analysis.hpp"
#include "saps/coordinator.hpp"
#include "saps/experiment.hpp"
#include "saps/verification.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kSuiteFailed = 2;

int cmd_run(const std::string& config_path, const std::string& out, const std::string& transport,
            std::optional<std::uint64_t> seed) {
  saps::ExperimentConfig cfg = saps::load_config(config_path);
  if (!transport.empty()) cfg.transport = saps::parse_transport(transport);
  if (seed) cfg.master_seed = *seed;
  saps::RunOptions opts;
  if (!out.empty()) opts.csv_path = out;
  const saps::ExperimentResult r = saps::run_experiment(cfg, opts);
  std::cout << saps::format_summary(cfg, r.summary);
  if (!out.empty()) std::cout << "metrics written to " << out << "\n";
  return kOk;
}

int cmd_verify(bool quick, bool inject) {
  saps::VerificationOptions opt;
  opt.quick = quick;
  opt.inject_bad_gossip = inject;
  const auto results = saps::run_verification_suite(opt, &std::cout);
  const bool ok = saps::all_passed(results);
  std::cout << (ok ? "all suites passed\n" : "verification FAILED\n");
  return ok ? kOk : kSuiteFailed;
}

int cmd_rho(const std::string& config_path, std::size_t samples) {
  const saps::ExperimentConfig cfg = saps::load_config(config_path);
  const saps::BandwidthMatrix b = saps::build_bandwidth(cfg);
  const double b_thres = cfg.B_thres ? *cfg.B_thres : saps::default_bandwidth_threshold(b);
  const saps::PeerSelectorConfig gen{b, saps::get_new_connected_graph(b, b_thres), cfg.T_thres,
                                     cfg.peer_selection};
  const saps::SpectralEstimate est = saps::estimate_rho(gen, samples, saps::derive_seed(cfg.master_seed, 5));
  std::printf("rho      %.10g\n", est.rho);
  std::printf("std err  %.3g (%zu samples)\n", est.standard_error, est.n_samples);
  if (est.rho < 1.0) {
    const saps::CompressionConfig comp(cfg.c);
    const saps::DConstants d = saps::d_constants(comp.p(), est.rho);
    std::printf("q+p*rho^2 %.10g\n", comp.q() + comp.p() * est.rho * est.rho);
    std::printf("D1       %.10g\nD2       %.10g\n", d.d1, d.d2);
  } else {
    std::printf("rho = 1: the gossip process does not mix (disconnected communication graph)\n");
  }
  return kOk;
}

int cmd_cost(const std::string& algo, double N, double n, double T, double c, std::optional<double> np) {
  saps::CostModelInput in;
  in.algorithm = saps::parse_algorithm(algo);
  in.N = N;
  in.n = n;
  in.T = T;
  in.c = c;
  in.n_p = np;
  const saps::CommCost cost = saps::comm_cost(in);
  const saps::CostFormula f = saps::cost_formula(in.algorithm);
  std::printf("%s\n", saps::to_string(in.algorithm));
  std::printf("server  %-12s = %.17g\n", f.server, cost.server);
  std::printf("worker  %-12s = %.17g\n", f.worker, cost.worker);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAPS-PSGD decentralized training simulator"};
  app.require_subcommand(1);

  std::string config, out, transport;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "per-round metrics CSV");
  run->add_option("--transport", transport, "sim or tcp (overrides the config)");
  run->add_option("--seed", seed, "master seed (overrides the config)");

  bool quick = false, inject = false;
  auto* verify = app.add_subcommand("verify", "run the verification suite");
  verify->add_flag("--quick", quick, "smaller sample counts");
  verify->add_flag("--inject-bad-gossip", inject, "negative control: must make the suite fail");

  std::size_t samples = 1000;
  auto* rho = app.add_subcommand("rho", "estimate rho for a config's generator");
  rho->add_option("--config", config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  rho->add_option("--samples", samples, "gossip matrices to sample")->required();

  std::string algo;
  double N = 0, n = 0, T = 0, c = 1;
  std::optional<double> np;
  auto* cost = app.add_subcommand("cost", "analytic communication cost");
  cost->add_option("--algo", algo, "algorithm name, e.g. SAPS-PSGD, D-PSGD")->required();
  cost->add_option("--N", N, "model size")->required();
  cost->add_option("--n", n, "workers")->required();
  cost->add_option("--T", T, "rounds")->required();
  cost->add_option("--c", c, "compression ratio")->required();
  cost->add_option("--np", np, "neighbors per worker (D-PSGD, DCD-PSGD)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*run) return cmd_run(config, out, transport, seed);
    if (*verify) return cmd_verify(quick, inject);
    if (*rho) return cmd_rho(config, samples);
    if (*cost) return cmd_cost(algo, N, n, T, c, np);
  } catch (const saps::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}
