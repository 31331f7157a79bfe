#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gdsrec/data.hpp"
#include "gdsrec/model.hpp"
#include "gdsrec/train.hpp"

namespace gdsrec {

/// Grid axes for `ablate`. Each axis is swept on its own around the base
/// configuration; an empty axis is skipped.
struct SweepSpec {
  std::vector<std::string> variants;  ///< subset of base, rc, sn, rd
  std::vector<std::string> attention; ///< subset of softmax, avg, max
  std::vector<double> alpha;
  std::vector<int> delta;
  std::vector<std::size_t> K;
  bool parallel_cells = false;

  bool empty() const noexcept {
    return variants.empty() && attention.empty() && alpha.empty() && delta.empty() && K.empty();
  }
  friend bool operator==(const SweepSpec&, const SweepSpec&) = default;
};

struct RunConfig {
  std::string ratings_path;
  std::string trust_path;
  DuplicatePolicy duplicates = DuplicatePolicy::reject;
  double train_fraction = 0.6;
  std::uint64_t split_seed = 1;
  TrainConfig train;
  VariantFlags flags;
  std::string out_dir = "out";
  bool clamp_predictions = false;
  SweepSpec sweep;

  /// Throws std::invalid_argument on inconsistent values.
  void validate() const;
  /// Notes for values outside the usual tuning grids.
  std::vector<std::string> off_grid() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// JSON with sections data, train, model, output and sweep. Missing keys keep
/// their defaults; unknown keys are an error.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& config);

}  // namespace gdsrec
