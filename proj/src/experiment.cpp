#include "saps/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

#include "saps/sparsify.hpp"
#include "saps/tcp.hpp"
#include "saps/transport.hpp"
#include "saps/worker.hpp"

namespace saps {

using nlohmann::json;

TransportKind parse_transport(const std::string& name) {
  if (name == "sim") return TransportKind::kSim;
  if (name == "tcp") return TransportKind::kTcp;
  throw ValidationError("transport must be 'sim' or 'tcp', got '" + name + "'");
}

const char* to_string(TransportKind kind) { return kind == TransportKind::kSim ? "sim" : "tcp"; }

void ExperimentConfig::validate() const {
  if (n < 2) throw ValidationError("n must be >= 2");
  if (N < 1) throw ValidationError("N must be >= 1");
  if (T < 1) throw ValidationError("T must be >= 1");
  if (c < 1) throw ValidationError("c must be >= 1");
  if (!std::isfinite(gamma) || gamma < 0.0) throw ValidationError("gamma must be finite and >= 0");
  if (T_thres < 1) throw ValidationError("T_thres must be >= 1");
  if (B_thres && (!std::isfinite(*B_thres) || *B_thres < 0.0)) {
    throw ValidationError("B_thres must be finite and >= 0");
  }
  if (objective.kind != ObjectiveKind::kQuadratic && !objective.data_file) {
    const std::size_t samples = objective.n_samples == 0 ? 50 * n : objective.n_samples;
    if (samples < n) throw ValidationError("objective.n_samples must be >= n");
  }
  if (objective.kind == ObjectiveKind::kMlp) {
    if (objective.hidden < 1) throw ValidationError("objective.hidden must be >= 1");
    if (objective.classes < 2) throw ValidationError("objective.classes must be >= 2");
  }
  switch (bandwidth.kind) {
    case BandwidthSpec::Kind::kUniform:
      if (!std::isfinite(bandwidth.lo) || !std::isfinite(bandwidth.hi) || bandwidth.lo < 0.0 ||
          bandwidth.hi <= bandwidth.lo) {
        throw ValidationError("bandwidth.uniform needs 0 <= lo < hi");
      }
      break;
    case BandwidthSpec::Kind::kFourteenCity:
      if (n != 14) throw ValidationError("the fourteen_city bandwidth preset needs n = 14");
      break;
    case BandwidthSpec::Kind::kFile:
      if (bandwidth.path.empty()) throw ValidationError("bandwidth.path is required for kind 'file'");
      break;
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ValidationError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_as(const json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + " has the wrong type");
  }
}

std::uint64_t get_count(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ValidationError(where + "." + key + " must be a nonnegative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(doc, "config",
             {"n", "N", "T", "c", "gamma", "T_thres", "B_thres", "master_seed", "objective", "partition",
              "transport", "peer_selection", "bandwidth"});
  ExperimentConfig cfg;
  const std::string top = "config";
  if (doc.contains("n")) cfg.n = get_count(doc, "n", top);
  if (doc.contains("N")) cfg.N = get_count(doc, "N", top);
  if (doc.contains("T")) cfg.T = get_count(doc, "T", top);
  if (doc.contains("c")) {
    const auto c = get_count(doc, "c", top);
    if (c > 0xFFFFFFFFu) throw ValidationError("c is too large");
    cfg.c = static_cast<std::uint32_t>(c);
  }
  if (doc.contains("gamma")) cfg.gamma = get_as<double>(doc, "gamma", top);
  if (doc.contains("T_thres")) cfg.T_thres = static_cast<std::int64_t>(get_count(doc, "T_thres", top));
  if (doc.contains("B_thres") && !doc["B_thres"].is_null()) cfg.B_thres = get_as<double>(doc, "B_thres", top);
  if (doc.contains("master_seed")) cfg.master_seed = get_count(doc, "master_seed", top);
  if (doc.contains("partition")) cfg.partition = parse_partition(get_as<std::string>(doc, "partition", top));
  if (doc.contains("transport")) cfg.transport = parse_transport(get_as<std::string>(doc, "transport", top));
  if (doc.contains("peer_selection")) {
    cfg.peer_selection = parse_peer_selection(get_as<std::string>(doc, "peer_selection", top));
  }
  if (doc.contains("objective")) {
    const json& o = doc["objective"];
    const std::string where = "objective";
    check_keys(o, where, {"kind", "batch_size", "n_samples", "hidden", "classes", "data_file"});
    if (o.contains("kind")) cfg.objective.kind = parse_objective_kind(get_as<std::string>(o, "kind", where));
    if (o.contains("batch_size")) cfg.objective.batch_size = get_count(o, "batch_size", where);
    if (o.contains("n_samples")) cfg.objective.n_samples = get_count(o, "n_samples", where);
    if (o.contains("hidden")) cfg.objective.hidden = get_count(o, "hidden", where);
    if (o.contains("classes")) cfg.objective.classes = static_cast<int>(get_count(o, "classes", where));
    if (o.contains("data_file")) cfg.objective.data_file = get_as<std::string>(o, "data_file", where);
  }
  if (doc.contains("bandwidth")) {
    const json& b = doc["bandwidth"];
    const std::string where = "bandwidth";
    check_keys(b, where, {"kind", "path", "lo", "hi"});
    const std::string kind = b.contains("kind") ? get_as<std::string>(b, "kind", where) : "uniform";
    if (kind == "uniform") {
      cfg.bandwidth.kind = BandwidthSpec::Kind::kUniform;
      if (b.contains("lo")) cfg.bandwidth.lo = get_as<double>(b, "lo", where);
      if (b.contains("hi")) cfg.bandwidth.hi = get_as<double>(b, "hi", where);
    } else if (kind == "file") {
      cfg.bandwidth.kind = BandwidthSpec::Kind::kFile;
      if (b.contains("path")) cfg.bandwidth.path = get_as<std::string>(b, "path", where);
    } else if (kind == "fourteen_city") {
      cfg.bandwidth.kind = BandwidthSpec::Kind::kFourteenCity;
    } else {
      throw ValidationError("bandwidth.kind must be uniform, file or fourteen_city");
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg = parse_config(ss.str());
  // relative file references are relative to the config file
  const std::filesystem::path base = path.parent_path();
  auto anchor = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
  };
  if (cfg.bandwidth.kind == BandwidthSpec::Kind::kFile) anchor(cfg.bandwidth.path);
  if (cfg.objective.data_file) anchor(*cfg.objective.data_file);
  return cfg;
}

std::string to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["n"] = cfg.n;
  doc["N"] = cfg.N;
  doc["T"] = cfg.T;
  doc["c"] = cfg.c;
  doc["gamma"] = cfg.gamma;
  doc["T_thres"] = cfg.T_thres;
  doc["B_thres"] = cfg.B_thres ? json(*cfg.B_thres) : json(nullptr);
  doc["master_seed"] = cfg.master_seed;
  json o;
  o["kind"] = to_string(cfg.objective.kind);
  o["batch_size"] = cfg.objective.batch_size;
  o["n_samples"] = cfg.objective.n_samples;
  o["hidden"] = cfg.objective.hidden;
  o["classes"] = cfg.objective.classes;
  if (cfg.objective.data_file) o["data_file"] = *cfg.objective.data_file;
  doc["objective"] = o;
  doc["partition"] = to_string(cfg.partition);
  doc["transport"] = to_string(cfg.transport);
  doc["peer_selection"] = to_string(cfg.peer_selection);
  json b;
  switch (cfg.bandwidth.kind) {
    case BandwidthSpec::Kind::kUniform:
      b = {{"kind", "uniform"}, {"lo", cfg.bandwidth.lo}, {"hi", cfg.bandwidth.hi}};
      break;
    case BandwidthSpec::Kind::kFile:
      b = {{"kind", "file"}, {"path", cfg.bandwidth.path}};
      break;
    case BandwidthSpec::Kind::kFourteenCity:
      b = {{"kind", "fourteen_city"}};
      break;
  }
  doc["bandwidth"] = b;
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Bandwidth sources

BandwidthMatrix load_bandwidth_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open bandwidth file '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ValidationError("bad bandwidth entry '" + cell + "' in " + path.string());
      }
    }
    rows.push_back(std::move(row));
  }
  const std::size_t n = rows.size();
  Eigen::MatrixXd raw(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != n) throw ValidationError("bandwidth file " + path.string() + " is not square");
    for (std::size_t j = 0; j < n; ++j) raw(i, j) = rows[i][j];
  }
  return symmetrize_bandwidth(raw);
}

BandwidthMatrix uniform_bandwidth(std::size_t n, double lo, double hi, SplitMix64& rng) {
  if (!(lo >= 0.0 && hi > lo)) throw ValidationError("uniform bandwidth needs 0 <= lo < hi");
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      raw(i, j) = lo + (hi - lo) * rng.uniform_open_closed();
      raw(j, i) = raw(i, j);
    }
  }
  return symmetrize_bandwidth(raw);
}

BandwidthMatrix fourteen_city_bandwidth() {
  return load_bandwidth_csv(std::filesystem::path(SAPS_DATA_DIR) / "fourteen_city_synthetic.csv");
}

BandwidthMatrix build_bandwidth(const ExperimentConfig& cfg) {
  BandwidthMatrix b = [&] {
    switch (cfg.bandwidth.kind) {
      case BandwidthSpec::Kind::kFile: return load_bandwidth_csv(cfg.bandwidth.path);
      case BandwidthSpec::Kind::kFourteenCity: return fourteen_city_bandwidth();
      case BandwidthSpec::Kind::kUniform:
        break;
    }
    SplitMix64 rng(derive_seed(cfg.master_seed, 2));
    return uniform_bandwidth(cfg.n, cfg.bandwidth.lo, cfg.bandwidth.hi, rng);
  }();
  if (b.n() != cfg.n) {
    throw ValidationError("bandwidth matrix is " + std::to_string(b.n()) + "x" + std::to_string(b.n()) +
                          " but n = " + std::to_string(cfg.n));
  }
  return b;
}

ObjectiveSet build_objectives(const ExperimentConfig& cfg) {
  SplitMix64 rng(derive_seed(cfg.master_seed, 3));
  const std::size_t samples = cfg.objective.n_samples == 0 ? 50 * cfg.n : cfg.objective.n_samples;
  std::shared_ptr<const Dataset> data;
  if (cfg.objective.data_file) {
    data = std::make_shared<const Dataset>(load_dataset_file(*cfg.objective.data_file));
    if (data->size() < cfg.n) throw ValidationError("dataset has fewer samples than workers");
  }
  switch (cfg.objective.kind) {
    case ObjectiveKind::kQuadratic:
      return make_quadratic(cfg.n, cfg.N, rng);
    case ObjectiveKind::kLogistic:
      if (data) return make_logistic(data, cfg.n, cfg.partition, rng);
      return make_logistic(cfg.n, samples, cfg.N, cfg.partition, rng);
    case ObjectiveKind::kMlp:
      if (data) return make_mlp(data, cfg.n, cfg.objective.hidden, cfg.partition, rng);
      return make_mlp(cfg.n, samples, MlpShape{cfg.N, cfg.objective.hidden, cfg.objective.classes},
                      cfg.partition, rng);
  }
  throw ValidationError("unknown objective kind");
}

// ---------------------------------------------------------------------------

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  BandwidthMatrix b = build_bandwidth(cfg);
  ExperimentResult result;
  result.objectives = build_objectives(cfg);
  const ObjectiveSet& objs = result.objectives;
  const std::size_t dim = objs.dimension();

  CoordinatorConfig cc;
  cc.master_seed = cfg.master_seed;
  cc.t_thres = cfg.T_thres;
  cc.b_thres = cfg.B_thres;
  cc.mode = cfg.peer_selection;
  cc.total_rounds = cfg.T;
  Coordinator coordinator(b, cc);

  const ParameterVector x0 = objs.initial_point(derive_seed(cfg.master_seed, 4));
  std::vector<Worker> workers;
  for (std::uint32_t r = 0; r < cfg.n; ++r) {
    workers.emplace_back(r, x0, objs.per_worker[r],
                         WorkerOptions{cfg.gamma, cfg.c, cfg.objective.batch_size},
                         derive_seed(cfg.master_seed, 100 + r));
  }
  std::unique_ptr<WorkerFabric> fabric;
  if (cfg.transport == TransportKind::kSim) {
    fabric = std::make_unique<SimulatedFabric>(std::move(workers), b);
  } else {
    fabric = std::make_unique<TcpLoopbackCluster>(std::move(workers));
  }

  double clock = 0.0;
  result.records.reserve(cfg.T);
  for (std::uint64_t t = 0; t < cfg.T; ++t) {
    const RoundSummary& s = coordinator.run_round(*fabric);
    RoundRecord rec;
    rec.round = s.round;
    rec.pairs = s.matching.size();
    if (rec.pairs > 0) {
      rec.bytes_per_worker = payload_frame_size(generate_mask(s.seed, cfg.c, dim).count());
    }
    std::tie(rec.min_bw, rec.mean_bw) = matched_bandwidth(s.matching, coordinator.bandwidth());
    rec.consensus_err = consensus_error(fabric->models());
    rec.mean_loss = s.mean_loss();
    clock += round_time(s.matching, rec.bytes_per_worker, coordinator.bandwidth());
    rec.cum_time = clock;
    result.records.push_back(rec);
  }
  result.final_model = coordinator.collect_final_model(*fabric);
  result.worker_models = fabric->models();

  RunSummary& sum = result.summary;
  sum.final_loss = objs.global_loss(result.final_model);
  sum.mean_model_loss = objs.global_loss(mean_model(result.worker_models));
  for (const auto& tr : fabric->traffic()) {
    sum.total_values_sent += tr.values_sent;
    sum.total_peer_bytes += tr.peer_bytes_sent;
    sum.values_per_worker.push_back(tr.values_sent + tr.values_received);
  }
  sum.coordinator_model_bytes = coordinator.model_bytes_received();
  sum.coordinator_model_values = result.final_model.size();
  sum.virtual_time = clock;
  sum.b_thres = coordinator.b_thres();
  fabric.reset();

  if (options.rho_samples > 0) {
    PeerSelectorConfig gen{b, get_new_connected_graph(b, coordinator.b_thres()), cfg.T_thres, cfg.peer_selection};
    sum.rho = estimate_rho(gen, options.rho_samples, derive_seed(cfg.master_seed, 5));
  }
  if (options.csv_path) export_csv(result.records, *options.csv_path);
  return result;
}

std::string format_summary(const ExperimentConfig& cfg, const RunSummary& s) {
  std::ostringstream out;
  char buf[128];
  auto real = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  out << "rounds            " << cfg.T << " (" << to_string(cfg.peer_selection) << ", c=" << cfg.c << ", "
      << to_string(cfg.transport) << ")\n";
  out << "final loss        " << real(s.final_loss) << " (worker 0), " << real(s.mean_model_loss)
      << " (worker average)\n";
  out << "peer traffic      " << s.total_values_sent << " values, " << s.total_peer_bytes << " bytes\n";
  out << "coordinator model " << s.coordinator_model_values << " values, " << s.coordinator_model_bytes
      << " bytes\n";
  out << "virtual comm time " << real(s.virtual_time) << " s\n";
  out << "B_thres           " << real(s.b_thres) << " B/s\n";
  if (s.rho) {
    out << "rho estimate      " << real(s.rho->rho) << " +/- " << real(s.rho->standard_error) << " ("
        << s.rho->n_samples << " samples)\n";
  }
  return out.str();
}

}  // namespace saps
