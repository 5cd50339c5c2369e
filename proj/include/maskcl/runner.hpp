#pragma once

// Experiment runner: seed grids, results JSON (schema 1), summary tables.
//
// Results file layout:
//   { "schema": 1, "engine_version": str, "dataset": "mnist"|"blobs",
//     "config": {...flags echoed...},
//     "runs": [ { "seed": int,
//                 "class_il": { "matrix": [[...]], "avg_acc": x, "avg_forget": x,
//                               "forget_defined": bool },
//                 "task_il":  { ...same... } } ],
//     "aggregate": { "class_il": { "avg_acc": {"mean", "std"}, "avg_forget": {...} },
//                    "task_il":  { ... } },
//     "wall_clock_s": x }
// Accuracies are fractions in [0, 1]; std is the sample standard deviation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "maskcl/continual.hpp"
#include "maskcl/data.hpp"
#include "maskcl/errors.hpp"

namespace maskcl {

inline constexpr int kResultsSchema = 1;
inline constexpr const char* kEngineVersion = "0.1.0";

enum class DatasetKind { mnist, blobs };

inline std::string dataset_name(DatasetKind d) { return d == DatasetKind::mnist ? "mnist" : "blobs"; }

inline DatasetKind parse_dataset(const std::string& s) {
  if (s == "mnist") return DatasetKind::mnist;
  if (s == "blobs") return DatasetKind::blobs;
  throw ConfigError("unknown dataset '" + s + "' (expected mnist or blobs)");
}

struct BlobOptions {
  std::size_t classes = 4;
  std::size_t dim = 16;
  double std = 0.1;
  std::size_t n_per_class = 200;
  std::uint64_t seed = 0;
};

struct RunConfig {
  DatasetKind dataset = DatasetKind::mnist;
  std::filesystem::path mnist_dir;
  BlobOptions blobs;
  std::size_t classes_per_task = 2;
  std::vector<std::size_t> hidden{100, 100};
  MethodConfig method;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out;
  std::size_t jobs = 1;

  void validate() const {
    method.validate();
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    if (jobs == 0) throw ConfigError("jobs must be >= 1");
    if (classes_per_task == 0) throw ConfigError("classes per task must be positive");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("hidden layer sizes must be positive");
    if (dataset == DatasetKind::blobs && blobs.classes % classes_per_task != 0)
      throw ConfigError("blob class count must be divisible by classes per task");
  }
};

struct ModeResult {
  AccuracyMatrix matrix;
  Metrics metrics;
};

struct SeedRun {
  std::uint64_t seed = 0;
  ModeResult class_il;
  ModeResult task_il;
  MlpParams model;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

struct RunResult {
  RunConfig config;
  std::vector<SeedRun> runs;
  double wall_clock_s = 0.0;

  MeanStd aggregate(EvalMode mode, bool forgetting) const {
    std::vector<double> xs;
    for (const auto& r : runs) {
      const auto& m = mode == EvalMode::class_il ? r.class_il.metrics : r.task_il.metrics;
      xs.push_back(forgetting ? m.avg_forgetting : m.avg_accuracy);
    }
    return mean_std(xs);
  }
};

inline DataSplits load_dataset(const RunConfig& cfg) {
  if (cfg.dataset == DatasetKind::blobs) {
    const auto& b = cfg.blobs;
    return gen_blobs(BlobSpec::separated(b.classes, b.dim, b.std, b.n_per_class, b.seed));
  }
  std::filesystem::path dir = cfg.mnist_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("MASKCL_MNIST_DIR")) dir = env;
  }
  if (dir.empty()) throw IoError("no MNIST directory given (--mnist-dir or MASKCL_MNIST_DIR)");
  return load_mnist_dir(dir);
}

// Runs every seed on an already-built stream. Seeds are independent and may
// run on `cfg.jobs` threads; results keep the order of cfg.seeds.
inline RunResult run_on_stream(const RunConfig& cfg, const TaskStream& stream) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunResult result;
  result.config = cfg;
  result.runs.resize(cfg.seeds.size());

  std::mutex err_mu;
  std::exception_ptr first_error;
  auto work = [&](std::size_t i) {
    try {
      const auto seed = cfg.seeds[i];
      StreamResult r = run_stream(cfg.method, stream, cfg.hidden, seed);
      SeedRun& out = result.runs[i];
      out.seed = seed;
      out.class_il = {r.class_il, metrics(r.class_il)};
      out.task_il = {r.task_il, metrics(r.task_il)};
      out.model = std::move(r.model);
    } catch (...) {
      std::lock_guard lock(err_mu);
      if (!first_error) first_error = std::current_exception();
    }
  };

  const std::size_t n_threads = std::min(cfg.jobs, cfg.seeds.size());
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < cfg.seeds.size(); i += n_threads) work(i);
      });
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  result.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

inline RunResult run(const RunConfig& cfg) {
  cfg.validate();  // before touching the dataset or training anything
  const DataSplits data = load_dataset(cfg);
  const TaskStream stream = build_stream(data, cfg.classes_per_task);
  return run_on_stream(cfg, stream);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json config_to_json(const RunConfig& cfg) {
  const auto& m = cfg.method;
  nlohmann::json j{
      {"dataset", dataset_name(cfg.dataset)},
      {"method", std::string(method_name(m.method))},
      {"buffer", m.buffer_capacity},
      {"lr", m.lr},
      {"alpha", m.derpp_alpha},
      {"beta", m.derpp_beta},
      {"cfgm_alpha", m.cfgm_alpha},
      {"cfgm_weight", m.cfgm_weight},
      {"cfgm_clip", m.cfgm_clip},
      {"epochs", m.epochs_per_task},
      {"batch", m.batch_size},
      {"replay_batch", m.replay_batch_size},
      {"mask_replay", m.mask_replay},
      {"mask_distillation", m.mask_distillation},
      {"hidden", cfg.hidden},
      {"classes_per_task", cfg.classes_per_task},
      {"seeds", cfg.seeds},
      {"eval_modes", {"class_il", "task_il"}},
  };
  if (cfg.dataset == DatasetKind::mnist) {
    j["mnist_dir"] = cfg.mnist_dir.string();
  } else {
    j["blobs"] = {{"classes", cfg.blobs.classes},
                  {"dim", cfg.blobs.dim},
                  {"std", cfg.blobs.std},
                  {"n_per_class", cfg.blobs.n_per_class},
                  {"seed", cfg.blobs.seed}};
  }
  return j;
}

inline nlohmann::json to_json(const RunResult& r) {
  auto mode_json = [](const ModeResult& m) {
    return nlohmann::json{{"matrix", m.matrix},
                          {"avg_acc", m.metrics.avg_accuracy},
                          {"avg_forget", m.metrics.avg_forgetting},
                          {"forget_defined", m.metrics.forgetting_defined}};
  };
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& s : r.runs)
    runs.push_back({{"seed", s.seed}, {"class_il", mode_json(s.class_il)}, {"task_il", mode_json(s.task_il)}});
  auto agg = [&](EvalMode mode) {
    const auto acc = r.aggregate(mode, false);
    const auto fgt = r.aggregate(mode, true);
    return nlohmann::json{{"avg_acc", {{"mean", acc.mean}, {"std", acc.std}}},
                          {"avg_forget", {{"mean", fgt.mean}, {"std", fgt.std}}}};
  };
  return {{"schema", kResultsSchema},
          {"engine_version", kEngineVersion},
          {"dataset", dataset_name(r.config.dataset)},
          {"config", config_to_json(r.config)},
          {"runs", runs},
          {"aggregate", {{"class_il", agg(EvalMode::class_il)}, {"task_il", agg(EvalMode::task_il)}}},
          {"wall_clock_s", r.wall_clock_s}};
}

// Writes to a sibling temp file and renames it into place.
inline void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Summaries

struct SummaryRow {
  std::string dataset;
  std::string method;
  std::size_t buffer = 0;
  MeanStd class_acc, task_acc, class_forget, task_forget;  // percent
};

inline nlohmann::json read_results(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(path.string() + ": not valid JSON: " + e.what());
  }
  if (!j.contains("schema") || !j["schema"].is_number_integer() || j["schema"].get<int>() != kResultsSchema)
    throw ProtocolError(path.string() + ": unsupported results schema");
  return j;
}

inline SummaryRow summary_row(const nlohmann::json& j) {
  auto pct = [&](const char* mode, const char* metric) {
    const auto& a = j.at("aggregate").at(mode).at(metric);
    return MeanStd{100.0 * a.at("mean").get<double>(), 100.0 * a.at("std").get<double>()};
  };
  return {j.at("dataset").get<std::string>(),
          j.at("config").at("method").get<std::string>(),
          j.at("config").at("buffer").get<std::size_t>(),
          pct("class_il", "avg_acc"),
          pct("task_il", "avg_acc"),
          pct("class_il", "avg_forget"),
          pct("task_il", "avg_forget")};
}

// One row per results document, sorted by (buffer, method catalogue order).
inline std::vector<SummaryRow> summarize(const std::vector<nlohmann::json>& docs) {
  std::vector<SummaryRow> rows;
  for (const auto& d : docs) {
    if (!d.contains("schema") || d["schema"] != kResultsSchema)
      throw ProtocolError("unsupported results schema");
    rows.push_back(summary_row(d));
  }
  for (const auto& r : rows)
    if (r.dataset != rows.front().dataset)
      throw ProtocolError("refusing to aggregate results from different datasets (" +
                          rows.front().dataset + " vs " + r.dataset + ")");
  auto rank = [](const std::string& name) {
    const auto m = parse_method(name);
    return static_cast<int>(m);
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const SummaryRow& a, const SummaryRow& b) {
    if (a.buffer != b.buffer) return a.buffer < b.buffer;
    return rank(a.method) < rank(b.method);
  });
  return rows;
}

inline std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

inline std::string render_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  auto cell = [](const MeanStd& m) { return fixed2(m.mean) + " +- " + fixed2(m.std); };
  os << std::left << std::setw(10) << "Method" << std::right << std::setw(8) << "Buffer"
     << std::setw(18) << "Class-IL acc" << std::setw(18) << "Task-IL acc" << std::setw(18)
     << "Class-IL forget" << std::setw(18) << "Task-IL forget" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.method << std::right << std::setw(8)
       << (r.buffer == 0 ? std::string("-") : std::to_string(r.buffer)) << std::setw(18)
       << cell(r.class_acc) << std::setw(18) << cell(r.task_acc) << std::setw(18)
       << cell(r.class_forget) << std::setw(18) << cell(r.task_forget) << '\n';
  }
  return os.str();
}

inline constexpr const char* kCsvHeader =
    "dataset,method,buffer,class_il_acc_mean,class_il_acc_std,task_il_acc_mean,task_il_acc_std,"
    "class_il_forget_mean,class_il_forget_std,task_il_forget_mean,task_il_forget_std";

inline std::string render_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.dataset << ',' << r.method << ',' << r.buffer;
    for (const auto* m : {&r.class_acc, &r.task_acc, &r.class_forget, &r.task_forget})
      os << ',' << fixed2(m->mean) << ',' << fixed2(m->std);
    os << '\n';
  }
  return os.str();
}

}  // namespace maskcl
