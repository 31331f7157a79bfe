#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gdsrec/data.hpp"
#include "gdsrec/exec.hpp"
#include "gdsrec/model.hpp"

namespace gdsrec {

struct RatingErrors {
  double mae = 0.0;
  double rmse = 0.0;
};

/// Throws std::invalid_argument on empty or mismatched inputs.
RatingErrors mae_rmse(std::span<const double> predictions, std::span<const double> truths);

/// 1 iff rating >= F.
std::vector<int> label_items(std::span<const int> ratings, int positive_threshold);

/// Items ordered by descending score; ties by ascending item index.
std::vector<Index> rank_user(std::span<const Index> items, std::span<const double> scores);

inline constexpr std::size_t kRecallCutoff = 5;

struct RankingMetrics {
  double recall_at_5 = 0.0;
  double ndcg = 0.0;
  std::size_t users_ranked = 0;
  std::size_t users_without_positives = 0;
};

double recall_at(std::span<const int> ranked_labels, std::size_t cutoff = kRecallCutoff);
/// DCG/IDCG over the full list with gain 2^y - 1 and discount log2(pos + 1).
double ndcg(std::span<const int> ranked_labels);

/// Macro-averaged over lists with at least one positive; the rest are counted
/// in `users_without_positives`.
RankingMetrics recall_ndcg(std::span<const std::vector<int>> ranked_label_lists);

struct EvalReport {
  double mae = 0.0;
  double rmse = 0.0;
  double recall_at_5 = 0.0;
  double ndcg = 0.0;
  std::size_t n_test = 0;
  std::size_t users_ranked = 0;
  std::size_t users_without_positives = 0;
  int positive_threshold = 4;
  std::string split = "test";
  bool clamped = false;

  std::string to_text() const;
};

struct EvalOptions {
  int positive_threshold = 4;
  /// Clamp reported rating predictions to [1,5].
  bool clamp = false;
  Exec exec = Exec::parallel;
};

/// Rating and ranking metrics over `split` using full neighborhoods.
EvalReport evaluate(const ModelParams& params, const DecentralizedGraph& graph, const DatasetBundle& bundle,
                    const VariantFlags& flags, std::span<const RatingRecord> split, const EvalOptions& options);

}  // namespace gdsrec
