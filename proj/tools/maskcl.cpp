// maskcl: run continual-learning experiments and summarize their results.
//
//   maskcl --dataset mnist --mnist-dir DIR --method ER_MR --buffer 200 --seeds 0,1,2 --out er_mr.json
//   maskcl --summarize a.json b.json [--out table.csv]

#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "maskcl/runner.hpp"

namespace {

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw maskcl::ConfigError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  return out;
}

int summarize_files(const std::vector<std::string>& files, const std::string& csv_path) {
  std::vector<nlohmann::json> docs;
  for (const auto& f : files) docs.push_back(maskcl::read_results(f));
  const auto rows = maskcl::summarize(docs);
  std::cout << maskcl::render_table(rows);
  if (!csv_path.empty()) {
    std::ofstream os(csv_path);
    if (!os) throw maskcl::IoError("cannot open " + csv_path + " for writing");
    os << maskcl::render_csv(rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-softmax continual learning engine"};

  std::string dataset = "mnist";
  std::string mnist_dir;
  std::string method = "SGD";
  std::size_t buffer = 0;
  std::optional<double> lr, alpha, beta;
  double cfgm_alpha = maskcl::MethodConfig{}.cfgm_alpha;
  double cfgm_weight = 1.0;
  bool no_cfgm_clip = false;
  std::size_t epochs = 1, batch = 10;
  std::optional<std::size_t> replay_batch;
  std::string seeds = "0";
  std::string hidden = "100,100";
  std::size_t classes_per_task = 2;
  std::string out;
  std::vector<std::string> summarize;
  std::size_t jobs = 1;
  bool mask_replay = false, mask_distillation = false;
  std::string save_model;
  maskcl::BlobOptions blobs;

  app.add_option("--dataset", dataset, "mnist or blobs")->capture_default_str();
  app.add_option("--mnist-dir", mnist_dir,
                 "directory with the four MNIST IDX files (fallback: $MASKCL_MNIST_DIR)");
  app.add_option("--method", method,
                 "SGD, SGD_MR, CFSGMF, ER, ER_MR, DERPP, DERPP_MR, JOINT")
      ->capture_default_str();
  app.add_option("--buffer", buffer, "replay buffer capacity (0 for zero-memory methods)")
      ->capture_default_str();
  app.add_option("--lr", lr, "learning rate (default: Split-MNIST table value for method/buffer)");
  app.add_option("--alpha", alpha, "DER++ logit-MSE weight (default: table value)");
  app.add_option("--beta", beta, "DER++ replay-CE weight (default: table value)");
  app.add_option("--cfgm-alpha", cfgm_alpha, "CFGM input step size")->capture_default_str();
  app.add_option("--cfgm-weight", cfgm_weight, "weight of the CFGM pseudo-sample loss")
      ->capture_default_str();
  app.add_flag("--no-cfgm-clip", no_cfgm_clip, "do not clip CFGM samples to [0, 1]");
  app.add_option("--epochs", epochs, "epochs per task")->capture_default_str();
  app.add_option("--batch", batch, "minibatch size")->capture_default_str();
  app.add_option("--replay-batch", replay_batch, "replay minibatch size (default: --batch)");
  app.add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
  app.add_option("--hidden", hidden, "comma-separated hidden layer sizes")->capture_default_str();
  app.add_option("--classes-per-task", classes_per_task)->capture_default_str();
  app.add_option("--jobs", jobs, "seeds trained concurrently")->capture_default_str();
  app.add_flag("--mask-replay", mask_replay, "restrict replay CE to classes seen so far");
  app.add_flag("--mask-distillation", mask_distillation,
               "restrict DER++ logit MSE to classes seen so far");
  app.add_option("--save-model", save_model, "write the final network of each seed (MCLP format)");
  app.add_option("--blob-classes", blobs.classes)->capture_default_str();
  app.add_option("--blob-dim", blobs.dim)->capture_default_str();
  app.add_option("--blob-std", blobs.std)->capture_default_str();
  app.add_option("--blob-n", blobs.n_per_class, "samples per class")->capture_default_str();
  app.add_option("--blob-seed", blobs.seed)->capture_default_str();
  app.add_option("--out", out, "results JSON path (run) or CSV path (--summarize)");
  app.add_option("--summarize", summarize, "summarize result files instead of training");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!summarize.empty()) return summarize_files(summarize, out);

    maskcl::RunConfig cfg;
    cfg.dataset = maskcl::parse_dataset(dataset);
    cfg.mnist_dir = mnist_dir;
    cfg.blobs = blobs;
    cfg.classes_per_task = classes_per_task;
    cfg.hidden = parse_list<std::size_t>(hidden, "hidden size");
    cfg.seeds = parse_list<std::uint64_t>(seeds, "seed");
    cfg.jobs = jobs;
    cfg.out = out;

    const auto m = maskcl::parse_method(method);
    cfg.method = maskcl::mnist_defaults(m, buffer);
    cfg.method.buffer_capacity = buffer;
    if (lr) cfg.method.lr = *lr;
    if (alpha) cfg.method.derpp_alpha = *alpha;
    if (beta) cfg.method.derpp_beta = *beta;
    cfg.method.cfgm_alpha = cfgm_alpha;
    cfg.method.cfgm_weight = cfgm_weight;
    cfg.method.cfgm_clip = !no_cfgm_clip;
    cfg.method.epochs_per_task = epochs;
    cfg.method.batch_size = batch;
    cfg.method.replay_batch_size = replay_batch.value_or(batch);
    cfg.method.mask_replay = mask_replay;
    cfg.method.mask_distillation = mask_distillation;

    const maskcl::RunResult result = maskcl::run(cfg);

    if (!out.empty()) maskcl::write_json_atomic(out, maskcl::to_json(result));
    if (!save_model.empty()) {
      for (const auto& r : result.runs) {
        std::string path = save_model;
        if (result.runs.size() > 1) path += ".seed" + std::to_string(r.seed);
        maskcl::checkpoint::save(path, r.model);
      }
    }

    std::vector<nlohmann::json> docs{maskcl::to_json(result)};
    std::cout << maskcl::render_table(maskcl::summarize(docs));
    std::cout << "wall clock: " << maskcl::fixed2(result.wall_clock_s) << " s\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "maskcl: error: " << e.what() << '\n';
    return 1;
  }
}
