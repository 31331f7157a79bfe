#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "gdsrec/graph.hpp"
#include "gdsrec/hash.hpp"
#include "gdsrec/train.hpp"

namespace gdsrec::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw std::runtime_error(fmt::format("no {} file configured", what));
  if (!fs::is_regular_file(path)) throw std::runtime_error(fmt::format("{} file not found: {}", what, path));
}

Layout prepare_out(const RunConfig& config) {
  Layout layout{config.out_dir};
  std::error_code ec;
  fs::create_directories(layout.dir, ec);
  if (ec || !fs::is_directory(layout.dir))
    throw std::runtime_error(fmt::format("cannot create output directory {}", layout.dir.string()));
  return layout;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  os << text;
  if (!os) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

struct Prepared {
  DatasetBundle bundle;
  DecentralizedGraph graph;
  std::uint64_t hash = 0;
};

Prepared build_from_inputs(const RunConfig& config, TrustTable* trust_out = nullptr) {
  require_file(config.ratings_path, "ratings");
  require_file(config.trust_path, "trust");
  auto ratings = load_ratings(config.ratings_path, config.duplicates);
  auto trust = load_trust(config.trust_path, ratings);
  Prepared p;
  p.bundle = split_dataset(ratings, trust, config.train_fraction, config.split_seed);
  p.graph = build_graph(p.bundle, config.train.delta, config.train.exec);
  p.hash = dataset_hash(p.bundle);
  if (trust_out) *trust_out = std::move(trust);
  return p;
}

std::string stats_table(const Prepared& p, const TrustTable* trust) {
  const auto& b = p.bundle;
  std::string s;
  s += fmt::format("{:<24}{:>12}\n", "users", b.num_rating_users);
  s += fmt::format("{:<24}{:>12}\n", "items", b.num_items);
  s += fmt::format("{:<24}{:>12}\n", "ratings", b.num_ratings());
  s += fmt::format("{:<24}{:>12}\n", "relations", b.num_relations());
  s += fmt::format("{:<24}{:>12}\n", "trust-only users", b.num_users - b.num_rating_users);
  if (trust) {
    s += fmt::format("{:<24}{:>12}\n", "self-loops dropped", trust->self_loops_dropped);
    s += fmt::format("{:<24}{:>12}\n", "duplicate edges dropped", trust->duplicates_dropped);
  }
  s += fmt::format("{:<24}{:>12}\n", "train", b.train.size());
  s += fmt::format("{:<24}{:>12}\n", "validation", b.validation.size());
  s += fmt::format("{:<24}{:>12}\n", "test", b.test.size());
  s += fmt::format("{:<24}{:>12.6f}\n", "global mean", b.global_mean);
  s += fmt::format("{:<24}{:>12}\n", "dataset hash", hex64(p.hash));
  return s;
}

Prepared preprocess_into(const RunConfig& config, const Layout& layout, std::ostream& out) {
  TrustTable trust;
  auto p = build_from_inputs(config, &trust);
  save_bundle(p.bundle, config.train.delta, layout.bundle());
  save_graph(p.graph, p.hash, layout.graph());
  const auto table = stats_table(p, &trust);
  write_file(layout.stats(), table);
  out << table;
  return p;
}

/// Loads artifacts when they were produced with this config's split and delta.
std::optional<Prepared> load_matching(const RunConfig& config, const Layout& layout) {
  if (!fs::exists(layout.bundle()) || !fs::exists(layout.graph())) return std::nullopt;
  int delta = -1;
  Prepared p;
  p.bundle = load_bundle(layout.bundle(), &delta);
  if (delta != config.train.delta || p.bundle.split_seed != config.split_seed ||
      p.bundle.train_fraction != config.train_fraction)
    return std::nullopt;
  p.hash = dataset_hash(p.bundle);
  p.graph = load_graph(layout.graph(), p.hash);
  return p;
}

Prepared obtain(const RunConfig& config, const Layout& layout, std::ostream& out) {
  if (auto p = load_matching(config, layout)) {
    spdlog::info("reusing artifacts in {} (dataset {})", layout.dir.string(), hex64(p->hash));
    return std::move(*p);
  }
  spdlog::info("preprocessing into {}", layout.dir.string());
  return preprocess_into(config, layout, out);
}

void warn_off_grid(const RunConfig& config) {
  for (const auto& note : config.off_grid()) spdlog::warn("{}", note);
}

json report_json(const EvalReport& r, const Checkpoint& ckpt) {
  return {{"v", 1},
          {"split", r.split},
          {"n", r.n_test},
          {"mae", r.mae},
          {"rmse", r.rmse},
          {"recall_at_5", r.recall_at_5},
          {"ndcg", r.ndcg},
          {"users_ranked", r.users_ranked},
          {"users_without_positives", r.users_without_positives},
          {"F", r.positive_threshold},
          {"clamped", r.clamped},
          {"dataset_hash", hex64(ckpt.provenance.dataset_hash)},
          {"seed", ckpt.provenance.seed},
          {"split_seed", ckpt.provenance.split_seed},
          {"epoch", ckpt.provenance.epoch},
          {"task", ckpt.provenance.task},
          {"delta", ckpt.provenance.delta},
          {"K", ckpt.provenance.K},
          {"D", ckpt.params.dim()},
          {"variant", ckpt.flags.variant_name()},
          {"attention", std::string(to_string(ckpt.flags.attention))},
          {"alpha", ckpt.flags.alpha}};
}

std::span<const RatingRecord> pick_split(const DatasetBundle& b, const std::string& split) {
  if (split == "test") return b.test;
  if (split == "validation") return b.validation;
  if (split == "train") return b.train;
  throw std::invalid_argument(fmt::format("unknown split '{}'", split));
}

}  // namespace

PreprocessResult cmd_preprocess(const RunConfig& config, std::ostream& out) {
  config.validate();
  warn_off_grid(config);
  const auto layout = prepare_out(config);
  const auto p = preprocess_into(config, layout, out);
  return {p.hash, static_cast<std::size_t>(p.bundle.num_rating_users), static_cast<std::size_t>(p.bundle.num_items),
          p.bundle.num_ratings(), p.bundle.num_relations()};
}

TrainSummary cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  warn_off_grid(config);
  const auto layout = prepare_out(config);
  const auto p = obtain(config, layout, out);
  write_file(layout.resolved_config(), serialize_config(config));

  std::ofstream metrics(layout.metrics(), std::ios::binary);
  std::ofstream timing(layout.timing(), std::ios::binary);
  if (!metrics || !timing) throw std::runtime_error(fmt::format("cannot write logs in {}", layout.dir.string()));

  Trainer trainer(p.bundle, p.graph, config.train, config.flags);
  const auto result = trainer.run([&](const EpochMetrics& m, const Trainer& t, bool improved) {
    json line = {{"v", 1},
                 {"epoch", m.epoch},
                 {"train_loss", m.train_loss},
                 {"val_mae", m.val_mae},
                 {"val_rmse", m.val_rmse},
                 {"val_objective", m.val_objective}};
    if (config.train.task == Task::ranking) {
      line["val_logloss"] = m.val_logloss;
      line["val_mean_probability"] = m.val_mean_probability;
    }
    metrics << line.dump() << '\n' << std::flush;
    timing << json{{"v", 1}, {"epoch", m.epoch}, {"wall_time", m.wall_seconds}}.dump() << '\n' << std::flush;
    const auto ckpt = t.checkpoint(p.hash);
    save_checkpoint(ckpt, layout.last_checkpoint());
    if (improved) save_checkpoint(ckpt, layout.best_checkpoint());
    spdlog::info("epoch {:>3}  train {:.6f}  val MAE {:.6f}  RMSE {:.6f}{}", m.epoch, m.train_loss, m.val_mae,
                 m.val_rmse, improved ? "  *" : "");
  });
  out << fmt::format("trained {} epochs; best epoch {}{}\n", result.history.size(), result.best_epoch,
                     result.stopped_early ? " (early stop)" : "");
  out << fmt::format("best checkpoint {}\n", layout.best_checkpoint().string());
  return {result.history.size(), result.best_epoch, result.stopped_early};
}

EvalReport cmd_evaluate(const RunConfig& config, const fs::path& checkpoint, const std::string& split,
                        std::ostream& out) {
  const auto layout = prepare_out(config);
  const fs::path ckpt_path = checkpoint.empty() ? layout.best_checkpoint() : checkpoint;
  if (!fs::exists(ckpt_path)) throw std::runtime_error(fmt::format("checkpoint not found: {}", ckpt_path.string()));
  if (!fs::exists(layout.bundle())) throw std::runtime_error(fmt::format("bundle not found: {}", layout.bundle().string()));
  const auto ckpt = load_checkpoint(ckpt_path);
  int delta = -1;
  const auto bundle = load_bundle(layout.bundle(), &delta);
  const auto hash = dataset_hash(bundle);
  if (hash != ckpt.provenance.dataset_hash)
    throw std::runtime_error(fmt::format("checkpoint dataset hash {} does not match artifacts {} in {}",
                                         hex64(ckpt.provenance.dataset_hash), hex64(hash), layout.dir.string()));
  const auto graph = load_graph(layout.graph(), hash);
  if (graph.delta != ckpt.provenance.delta)
    throw std::runtime_error(fmt::format("checkpoint was trained with delta {} but the graph uses {}",
                                         ckpt.provenance.delta, graph.delta));

  EvalOptions options;
  options.positive_threshold = ckpt.provenance.positive_threshold;
  options.clamp = config.clamp_predictions;
  options.exec = config.train.exec;
  auto report = evaluate(ckpt.params, graph, bundle, ckpt.flags, pick_split(bundle, split), options);
  report.split = split;
  write_file(layout.report_text(), report.to_text());
  write_file(layout.report_json(), report_json(report, ckpt).dump(2) + "\n");
  out << report.to_text();
  return report;
}

std::vector<std::pair<std::string, std::string>> ablation_cells(const SweepSpec& sweep) {
  std::vector<std::pair<std::string, std::string>> cells;
  if (!sweep.variants.empty()) {
    if (std::find(sweep.variants.begin(), sweep.variants.end(), "base") == sweep.variants.end())
      cells.emplace_back("variant", "base");
    for (const auto& v : sweep.variants) cells.emplace_back("variant", v);
  }
  for (const auto& a : sweep.attention) cells.emplace_back("attention", a);
  for (double a : sweep.alpha) cells.emplace_back("alpha", fmt::format("{:g}", a));
  for (int d : sweep.delta) cells.emplace_back("delta", std::to_string(d));
  for (auto k : sweep.K) cells.emplace_back("K", std::to_string(k));
  return cells;
}

namespace {

RunConfig cell_config(const RunConfig& base, const std::string& axis, const std::string& value) {
  RunConfig c = base;
  if (axis == "variant") {
    const auto v = VariantFlags::from_variant(value);
    c.flags.rc_off = v.rc_off;
    c.flags.sn_off = v.sn_off;
    c.flags.rd_raw = v.rd_raw;
  } else if (axis == "attention") {
    c.flags.attention = parse_attention(value);
  } else if (axis == "alpha") {
    c.flags.alpha = std::stod(value);
  } else if (axis == "delta") {
    c.train.delta = std::stoi(value);
  } else if (axis == "K") {
    c.train.K = std::stoul(value);
  }
  return c;
}

std::string ablation_table(const std::vector<AblationRow>& rows, char sep, bool aligned) {
  std::string s;
  auto line = [&](const std::vector<std::string>& cols) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (k) s += sep;
      s += aligned ? fmt::format("{:<10}", cols[k]) : cols[k];
    }
    s += '\n';
  };
  line({"axis", "value", "MAE", "RMSE", "Recall@5", "NDCG", "best", "status"});
  for (const auto& r : rows) {
    if (r.ok)
      line({r.axis, r.value, fmt::format("{:.4f}", r.report.mae), fmt::format("{:.4f}", r.report.rmse),
            fmt::format("{:.4f}", r.report.recall_at_5), fmt::format("{:.4f}", r.report.ndcg),
            std::to_string(r.best_epoch), "ok"});
    else
      line({r.axis, r.value, "-", "-", "-", "-", "-", "failed: " + r.error});
  }
  return s;
}

}  // namespace

std::vector<AblationRow> cmd_ablate(const RunConfig& config, std::ostream& out) {
  config.validate();
  if (config.sweep.empty()) throw std::invalid_argument("ablate needs a non-empty sweep");
  warn_off_grid(config);
  const auto layout = prepare_out(config);
  TrustTable trust;
  const auto p = build_from_inputs(config, &trust);
  out << stats_table(p, &trust);

  const auto cells = ablation_cells(config.sweep);
  std::vector<RunConfig> configs;
  std::map<int, DecentralizedGraph> graphs;
  graphs.emplace(config.train.delta, p.graph);
  for (const auto& [axis, value] : cells) {
    configs.push_back(cell_config(config, axis, value));
    const int d = configs.back().train.delta;
    if (!graphs.count(d)) graphs.emplace(d, build_graph(p.bundle, d, config.train.exec));
  }

  auto run_cell = [&](std::size_t k) {
    AblationRow row;
    row.axis = cells[k].first;
    row.value = cells[k].second;
    try {
      const auto& c = configs[k];
      c.validate();
      Trainer trainer(p.bundle, graphs.at(c.train.delta), c.train, c.flags);
      const auto result = trainer.run();
      EvalOptions options;
      options.positive_threshold = c.train.positive_threshold;
      options.clamp = c.clamp_predictions;
      options.exec = c.train.exec;
      row.report = evaluate(trainer.params(), graphs.at(c.train.delta), p.bundle, c.flags, p.bundle.test, options);
      row.best_epoch = result.best_epoch;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    spdlog::info("cell {}={} {}", row.axis, row.value, row.ok ? "done" : "failed: " + row.error);
    return row;
  };

  std::vector<AblationRow> rows(cells.size());
  if (config.sweep.parallel_cells) {
    std::vector<std::future<AblationRow>> pending;
    for (std::size_t k = 0; k < cells.size(); ++k) pending.push_back(std::async(std::launch::async, run_cell, k));
    for (std::size_t k = 0; k < cells.size(); ++k) rows[k] = pending[k].get();
  } else {
    for (std::size_t k = 0; k < cells.size(); ++k) rows[k] = run_cell(k);
  }

  write_file(layout.ablation(), ablation_table(rows, '\t', false));
  out << ablation_table(rows, ' ', true);
  return rows;
}

}  // namespace gdsrec::cli
