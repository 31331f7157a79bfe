#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"

namespace fs = std::filesystem;
using namespace gdsrec;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataset_dir, out, task, variant, attention, ratings, trust;
  std::optional<int> F, delta, D;
  std::optional<double> alpha, lr, fraction;
  std::optional<std::size_t> K, epochs, batch, patience;
  bool serial = false;
  bool clamp = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "seed for the split and for training");
  app->add_option("--dataset-dir", o.dataset_dir, "directory holding ratings.txt and trust.txt");
  app->add_option("--ratings", o.ratings, "ratings file");
  app->add_option("--trust", o.trust, "trust file");
  app->add_option("--fraction", o.fraction, "training fraction of the ratings");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--task", o.task, "rating or ranking")->check(CLI::IsMember({"rating", "ranking"}));
  app->add_option("--F", o.F, "positive threshold for the ranking label");
  app->add_option("--variant", o.variant, "base, rc, sn or rd");
  app->add_option("--attention", o.attention, "softmax, avg or max")->check(CLI::IsMember({"softmax", "avg", "max"}));
  app->add_option("--alpha", o.alpha, "weight of the average-rating baseline");
  app->add_option("--delta", o.delta, "relationship coefficient threshold");
  app->add_option("--K", o.K, "node dropout cap");
  app->add_option("--D", o.D, "embedding size");
  app->add_option("--lr", o.lr, "learning rate");
  app->add_option("--batch", o.batch, "mini-batch size");
  app->add_option("--epochs", o.epochs, "maximum number of epochs");
  app->add_option("--patience", o.patience, "early stopping patience");
  app->add_flag("--serial", o.serial, "use the single-threaded reference kernels");
  app->add_flag("--clamp", o.clamp, "clamp reported rating predictions to [1,5]");
}

fs::path find_input(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".txt", ".tsv", ".csv"})
    if (fs::exists(dir / (stem + ext))) return dir / (stem + ext);
  return dir / (stem + ".txt");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (o.dataset_dir) {
    c.ratings_path = find_input(*o.dataset_dir, "ratings").string();
    c.trust_path = find_input(*o.dataset_dir, "trust").string();
  }
  if (o.ratings) c.ratings_path = *o.ratings;
  if (o.trust) c.trust_path = *o.trust;
  if (o.fraction) c.train_fraction = *o.fraction;
  if (o.seed) c.split_seed = c.train.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.task) c.train.task = parse_task(*o.task);
  if (o.F) c.train.positive_threshold = *o.F;
  if (o.variant) {
    const auto v = VariantFlags::from_variant(*o.variant);
    c.flags.rc_off = v.rc_off;
    c.flags.sn_off = v.sn_off;
    c.flags.rd_raw = v.rd_raw;
  }
  if (o.attention) c.flags.attention = parse_attention(*o.attention);
  if (o.alpha) c.flags.alpha = *o.alpha;
  if (o.delta) c.train.delta = *o.delta;
  if (o.K) c.train.K = *o.K;
  if (o.D) c.train.dim = *o.D;
  if (o.lr) c.train.learning_rate = *o.lr;
  if (o.batch) c.train.batch_size = *o.batch;
  if (o.epochs) c.train.max_epochs = *o.epochs;
  if (o.patience) c.train.patience = *o.patience;
  if (o.serial) c.train.exec = Exec::serial;
  if (o.clamp) c.clamp_predictions = true;
  return c;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("gdsrec");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("GDSREC_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Social recommendation with decentralized rating graphs"};
  app.require_subcommand(1);
  Overrides o;
  std::string checkpoint, split = "test";

  auto* pre = app.add_subcommand("preprocess", "index, split and build the decentralized graph");
  auto* train = app.add_subcommand("train", "train with early stopping and write checkpoints");
  auto* eval = app.add_subcommand("evaluate", "rating and ranking metrics for a checkpoint");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate each sweep cell");
  for (auto* sub : {pre, train, eval, ablate}) add_common(sub, o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (default: best checkpoint in --out)");
  eval->add_option("--split", split, "test, validation or train")
      ->check(CLI::IsMember({"test", "validation", "train"}));

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = resolve(o);
    if (pre->parsed()) cli::cmd_preprocess(config, std::cout);
    if (train->parsed()) cli::cmd_train(config, std::cout);
    if (eval->parsed()) cli::cmd_evaluate(config, checkpoint, split, std::cout);
    if (ablate->parsed()) {
      const auto rows = cli::cmd_ablate(config, std::cout);
      const bool any_failed = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return !r.ok; });
      if (any_failed) {
        spdlog::error("some ablation cells failed");
        return 2;
      }
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
