#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "gdsrec/config.hpp"
#include "gdsrec/eval.hpp"

namespace gdsrec::cli {

/// Artifact names inside the output directory.
struct Layout {
  std::filesystem::path dir;

  std::filesystem::path bundle() const { return dir / "bundle.gds"; }
  std::filesystem::path graph() const { return dir / "graph.gds"; }
  std::filesystem::path stats() const { return dir / "stats.txt"; }
  std::filesystem::path metrics() const { return dir / "metrics.jsonl"; }
  std::filesystem::path timing() const { return dir / "timing.jsonl"; }
  std::filesystem::path last_checkpoint() const { return dir / "checkpoint_last.ckpt"; }
  std::filesystem::path best_checkpoint() const { return dir / "checkpoint_best.ckpt"; }
  std::filesystem::path resolved_config() const { return dir / "config.json"; }
  std::filesystem::path report_text() const { return dir / "report.txt"; }
  std::filesystem::path report_json() const { return dir / "report.json"; }
  std::filesystem::path ablation() const { return dir / "ablation.tsv"; }
};

struct PreprocessResult {
  std::uint64_t dataset_hash = 0;
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t ratings = 0;
  std::size_t relations = 0;
};

PreprocessResult cmd_preprocess(const RunConfig& config, std::ostream& out);

struct TrainSummary {
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Reuses bundle/graph artifacts when they match the config, otherwise
/// preprocesses first.
TrainSummary cmd_train(const RunConfig& config, std::ostream& out);

EvalReport cmd_evaluate(const RunConfig& config, const std::filesystem::path& checkpoint, const std::string& split,
                        std::ostream& out);

struct AblationRow {
  std::string axis;
  std::string value;
  bool ok = false;
  std::string error;
  EvalReport report;
  std::size_t best_epoch = 0;
};

/// One factor at a time around the base config. Failed cells are recorded and
/// the sweep continues.
std::vector<AblationRow> cmd_ablate(const RunConfig& config, std::ostream& out);

/// Rows `ablate` would run, in order, as (axis, value) pairs.
std::vector<std::pair<std::string, std::string>> ablation_cells(const SweepSpec& sweep);

}  // namespace gdsrec::cli
