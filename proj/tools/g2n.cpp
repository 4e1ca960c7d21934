// Command line front end: model summaries, gradient checks, training,
// evaluation, and pruning reports over JSON preset configs.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "g2n/analysis.hpp"
#include "g2n/backbone.hpp"
#include "g2n/config.hpp"
#include "g2n/data.hpp"
#include "g2n/gradcheck.hpp"
#include "g2n/pruning.hpp"
#include "g2n/training.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::optional<uint64_t> seed;
  std::optional<int> epochs;
  std::vector<std::string> overrides;
  std::string precision = "f32";
  std::string checkpoint;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) g2n::fail("cannot open config '", path, "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

g2n::NetworkConfig load_config(const CommonArgs& args) {
  std::string text = read_file(args.config_path);
  for (const auto& ov : args.overrides)
    text = g2n::apply_config_override(text, ov);
  g2n::NetworkConfig cfg = g2n::parse_network_config(text);
  if (args.seed) cfg.seed = *args.seed;
  if (args.epochs) {
    if (!cfg.train) g2n::fail("--epochs given but config has no train section");
    cfg.train->epochs = *args.epochs;
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out.good()) g2n::fail("cannot open '", path.string(), "' for writing");
  out << text;
}

struct MnistPaths {
  std::string train_images, train_labels, test_images, test_labels;
  bool present = false;
};

MnistPaths find_mnist(const std::string& data_dir) {
  MnistPaths p;
  auto pick = [&](const std::string& a, const std::string& b) -> std::string {
    if (fs::exists(fs::path(data_dir) / a)) return (fs::path(data_dir) / a).string();
    if (fs::exists(fs::path(data_dir) / b)) return (fs::path(data_dir) / b).string();
    return "";
  };
  p.train_images = pick("train-images-idx3-ubyte", "train-images.idx3-ubyte");
  p.train_labels = pick("train-labels-idx1-ubyte", "train-labels.idx1-ubyte");
  p.test_images = pick("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte");
  p.test_labels = pick("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte");
  p.present = !p.train_images.empty() && !p.train_labels.empty() &&
              !p.test_images.empty() && !p.test_labels.empty();
  return p;
}

// Loads the configured dataset. When MNIST files are absent under data_dir, a
// deterministic synthetic digit corpus is written there once (in IDX form)
// and loaded through the same parser, so the full pipeline still runs.
void load_train_eval(const std::string& dataset, const std::string& data_dir,
                     g2n::Dataset& train, g2n::Dataset& test) {
  if (dataset == "mnist") {
    MnistPaths p = find_mnist(data_dir);
    if (!p.present) {
      fs::create_directories(data_dir);
      const fs::path base(data_dir);
      std::cerr << "note: MNIST files not found under '" << data_dir
                << "'; writing synthetic digit corpus\n";
      g2n::write_idx((base / "synthetic-train-images-idx3-ubyte").string(),
                     (base / "synthetic-train-labels-idx1-ubyte").string(),
                     g2n::synthetic_digits(8000, 20240501));
      g2n::write_idx((base / "synthetic-t10k-images-idx3-ubyte").string(),
                     (base / "synthetic-t10k-labels-idx1-ubyte").string(),
                     g2n::synthetic_digits(2000, 20240502));
      train = g2n::load_mnist_idx(
          (base / "synthetic-train-images-idx3-ubyte").string(),
          (base / "synthetic-train-labels-idx1-ubyte").string());
      test = g2n::load_mnist_idx(
          (base / "synthetic-t10k-images-idx3-ubyte").string(),
          (base / "synthetic-t10k-labels-idx1-ubyte").string());
      return;
    }
    train = g2n::load_mnist_idx(p.train_images, p.train_labels);
    test = g2n::load_mnist_idx(p.test_images, p.test_labels);
    return;
  }
  if (dataset == "cifar10") {
    const fs::path base = fs::path(data_dir) / "cifar-10-batches-bin";
    std::vector<std::string> train_files;
    for (int i = 1; i <= 5; ++i)
      train_files.push_back((base / ("data_batch_" + std::to_string(i) + ".bin")).string());
    train = g2n::load_cifar10_bin(train_files);
    test = g2n::load_cifar10_bin({(base / "test_batch.bin").string()});
    return;
  }
  g2n::fail("unknown dataset '", dataset, "'");
}

std::vector<int64_t> iota_indices(int64_t n) {
  std::vector<int64_t> v(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) v[size_t(i)] = i;
  return v;
}

template <typename T>
int run_summary(const CommonArgs& args) {
  g2n::NetworkConfig cfg = load_config(args);
  g2n::Model<T> model(cfg);
  auto rows = model.layer_stats();
  std::cout << g2n::format_summary_table(rows);
  const int64_t params = g2n::count_params(rows);
  const int64_t macs = g2n::count_macs(rows);
  std::cout << std::fixed << std::setprecision(3) << "params: "
            << double(params) / 1e6 << "M  macs: " << double(macs) / 1e9
            << "G (per sample at " << cfg.in_channels << "x" << cfg.in_h << "x"
            << cfg.in_w << ")\n";
  write_text(fs::path(args.out_dir) / (cfg.name + "-summary.csv"),
             g2n::summary_csv(rows));
  return 0;
}

template <typename T>
int run_gradcheck(const CommonArgs& args, double tol_override) {
  const uint64_t seed = args.seed.value_or(7);
  const T h = std::is_same_v<T, double> ? T(g2n::kGradCheckStepF64)
                                        : T(g2n::kGradCheckStepF32);
  const double tol =
      tol_override > 0.0
          ? tol_override
          : (std::is_same_v<T, double> ? g2n::kGradCheckTolF64
                                       : g2n::kGradCheckTolF32);
  g2n::GradCheckReport report = g2n::run_gradcheck_suite<T>(seed, h);
  size_t name_w = 0;
  for (const auto& c : report.cases) name_w = std::max(name_w, c.name.size());
  bool all_pass = true;
  for (const auto& c : report.cases) {
    const bool pass = c.max_rel_err < tol;
    all_pass = all_pass && pass;
    std::cout << std::left << std::setw(int(name_w) + 2) << c.name
              << std::scientific << std::setprecision(3) << c.max_rel_err
              << (pass ? "  pass" : "  FAIL") << "\n";
  }
  std::cout << "worst " << std::scientific << std::setprecision(3)
            << report.worst() << " tol " << tol << " ("
            << (std::is_same_v<T, double> ? "f64" : "f32") << ", seed " << seed
            << ")\n";
  return all_pass ? 0 : 1;
}

template <typename T>
int run_train(const CommonArgs& args) {
  g2n::NetworkConfig cfg = load_config(args);
  if (!cfg.train) g2n::fail("config '", cfg.name, "' has no train section");
  const g2n::TrainConfig& tc = *cfg.train;

  g2n::Dataset train_ds, test_ds;
  load_train_eval(tc.dataset, args.data_dir, train_ds, test_ds);

  g2n::Rng split_rng(cfg.seed ^ 0x5eedULL);
  std::vector<int64_t> pool = split_rng.permutation(train_ds.count);
  if (tc.train_subset > 0 && tc.train_subset < int64_t(pool.size()))
    pool.resize(size_t(tc.train_subset));
  const size_t val_n = std::max<size_t>(1, size_t(double(pool.size()) * tc.val_fraction));
  std::vector<int64_t> val_idx(pool.end() - int64_t(val_n), pool.end());
  std::vector<int64_t> train_idx(pool.begin(), pool.end() - int64_t(val_n));

  g2n::ChannelStats stats = g2n::compute_channel_stats(train_ds, train_idx);

  g2n::Model<T> model(cfg);
  if (cfg.prune_ratio > 0.0)
    g2n::apply_masks(model, g2n::build_masks(model, cfg.prune_ratio));

  g2n::SgdConfig sgd{tc.lr, tc.momentum, tc.weight_decay};
  g2n::Trainer<T> trainer(model, sgd, tc.plateau_patience, cfg.seed);
  g2n::RunMetrics metrics =
      trainer.run(train_ds, train_idx, val_idx, stats, tc, args.out_dir);

  std::vector<int64_t> test_idx = iota_indices(test_ds.count);
  if (tc.eval_subset > 0 && tc.eval_subset < int64_t(test_idx.size()))
    test_idx.resize(size_t(tc.eval_subset));
  g2n::EvalResult test = g2n::evaluate(model, test_ds, test_idx, stats,
                                       tc.batch_size);
  std::cout << std::fixed << std::setprecision(4)
            << "epochs: " << metrics.epochs.size()
            << "  test top-1 err: " << test.top1_err
            << "  top-5 err: " << test.top5_err
            << "  mean loss: " << test.mean_loss << "\n";
  std::cout << "metrics: " << (fs::path(args.out_dir) / "metrics.csv").string()
            << "\n";
  return 0;
}

template <typename T>
int run_eval(const CommonArgs& args) {
  g2n::NetworkConfig cfg = load_config(args);
  if (!cfg.train) g2n::fail("config '", cfg.name, "' has no train section");
  const g2n::TrainConfig& tc = *cfg.train;
  g2n::Dataset train_ds, test_ds;
  load_train_eval(tc.dataset, args.data_dir, train_ds, test_ds);

  g2n::Rng split_rng(cfg.seed ^ 0x5eedULL);
  std::vector<int64_t> pool = split_rng.permutation(train_ds.count);
  if (tc.train_subset > 0 && tc.train_subset < int64_t(pool.size()))
    pool.resize(size_t(tc.train_subset));
  g2n::ChannelStats stats = g2n::compute_channel_stats(train_ds, pool);

  g2n::Model<T> model(cfg);
  if (!args.checkpoint.empty()) g2n::load_model_checkpoint(model, args.checkpoint);

  std::vector<int64_t> test_idx = iota_indices(test_ds.count);
  if (tc.eval_subset > 0 && tc.eval_subset < int64_t(test_idx.size()))
    test_idx.resize(size_t(tc.eval_subset));
  g2n::EvalResult res = g2n::evaluate(model, test_ds, test_idx, stats,
                                      tc.batch_size);
  std::cout << std::fixed << std::setprecision(6) << "top1_err " << res.top1_err
            << "\ntop5_err " << res.top5_err << "\nmean_loss " << res.mean_loss
            << "\n";
  return 0;
}

template <typename T>
int run_prune_report(const CommonArgs& args) {
  g2n::NetworkConfig cfg = load_config(args);
  g2n::Model<T> model(cfg);
  if (!args.checkpoint.empty()) {
    g2n::load_model_checkpoint(model, args.checkpoint);
  } else if (cfg.prune_ratio > 0.0) {
    g2n::apply_masks(model, g2n::build_masks(model, cfg.prune_ratio));
  }
  g2n::SparsityReport rep = g2n::sparsity_report(model);
  std::cout << rep.table();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GoogLe2Net four-branch network toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  double gradcheck_tol = 0.0;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", args.config_path,
                                "Network config JSON path");
    if (needs_config) opt->required();
    cmd->add_option("--data-dir", args.data_dir, "Dataset root directory");
    cmd->add_option("--out-dir", args.out_dir, "Artifact output directory");
    cmd->add_option("--seed", args.seed, "Seed override");
    cmd->add_option("--set", args.overrides,
                    "Config override key=value (repeatable)");
    cmd->add_option("--precision", args.precision, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
  };

  CLI::App* summary = app.add_subcommand("summary", "Per-layer parameter and MAC table");
  add_common(summary, true);
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Backward pass vs central finite differences");
  add_common(gradcheck, false);
  gradcheck->add_option("--tol", gradcheck_tol, "Override pass tolerance");
  gradcheck->get_option("--precision")->default_str("f64");
  CLI::App* train = app.add_subcommand("train", "Train per the config's protocol");
  add_common(train, true);
  train->add_option("--epochs", args.epochs, "Epoch count override");
  CLI::App* eval = app.add_subcommand("eval", "Top-1/top-5 error of a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", args.checkpoint, "Checkpoint to evaluate");
  CLI::App* prune = app.add_subcommand("prune-report", "Passage sparsity table");
  add_common(prune, true);
  prune->add_option("--checkpoint", args.checkpoint, "Checkpoint to inspect");

  if (gradcheck->count_all() == 0) args.precision = "f32";

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  // gradcheck defaults to the oracle precision unless told otherwise.
  if (gradcheck->parsed() && !gradcheck->get_option("--precision")->count())
    args.precision = "f64";

  const bool f64 = args.precision == "f64";
  try {
    if (summary->parsed())
      return f64 ? run_summary<double>(args) : run_summary<float>(args);
    if (gradcheck->parsed())
      return f64 ? run_gradcheck<double>(args, gradcheck_tol)
                 : run_gradcheck<float>(args, gradcheck_tol);
    if (train->parsed())
      return f64 ? run_train<double>(args) : run_train<float>(args);
    if (eval->parsed())
      return f64 ? run_eval<double>(args) : run_eval<float>(args);
    if (prune->parsed())
      return f64 ? run_prune_report<double>(args) : run_prune_report<float>(args);
  } catch (const g2n::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
