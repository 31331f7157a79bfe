#pragma once

#include <cstdint>
#include <filesystem>

#include "gdsrec/data.hpp"

namespace gdsrec {

/// Bias-model generator: rating = clip(round(mu + b_u + b_v + noise), 1, 5)
/// over a random subset of cells, plus random directed trust edges.
struct SyntheticSpec {
  Index users = 60;
  Index items = 80;
  double density = 0.5;
  double mu = 3.5;
  double user_bias_sd = 0.7;
  double item_bias_sd = 0.7;
  double noise_sd = 0.15;
  double trust_probability = 0.05;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  RatingTable ratings;
  TrustTable trust;
};

/// Every user and item gets at least one rating.
SyntheticData make_synthetic(const SyntheticSpec& spec);

/// Writes `ratings.txt` and `trust.txt` (tab separated) into `dir`.
void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

}  // namespace gdsrec
