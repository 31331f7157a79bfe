#include "gdsrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace gdsrec {

RatingErrors mae_rmse(std::span<const double> predictions, std::span<const double> truths) {
  if (predictions.empty()) throw std::invalid_argument("mae_rmse: empty input");
  if (predictions.size() != truths.size()) throw std::invalid_argument("mae_rmse: length mismatch");
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    const double e = predictions[k] - truths[k];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const auto n = static_cast<double>(predictions.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

std::vector<int> label_items(std::span<const int> ratings, int positive_threshold) {
  std::vector<int> labels(ratings.size());
  std::transform(ratings.begin(), ratings.end(), labels.begin(),
                 [&](int r) { return r >= positive_threshold ? 1 : 0; });
  return labels;
}

std::vector<Index> rank_user(std::span<const Index> items, std::span<const double> scores) {
  if (items.size() != scores.size()) throw std::invalid_argument("rank_user: length mismatch");
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  std::vector<Index> ranked(items.size());
  std::transform(order.begin(), order.end(), ranked.begin(), [&](std::size_t k) { return items[k]; });
  return ranked;
}

double recall_at(std::span<const int> labels, std::size_t cutoff) {
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0) return 0.0;
  const auto top = std::min(cutoff, labels.size());
  const auto hits = std::count(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(top), 1);
  return static_cast<double>(hits) / static_cast<double>(positives);
}

namespace {
double dcg(std::span<const int> labels) {
  double s = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k)
    s += (std::exp2(labels[k]) - 1.0) / std::log2(static_cast<double>(k) + 2.0);
  return s;
}
}  // namespace

double ndcg(std::span<const int> labels) {
  std::vector<int> ideal(labels.begin(), labels.end());
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double best = dcg(ideal);
  return best > 0.0 ? dcg(labels) / best : 0.0;
}

RankingMetrics recall_ndcg(std::span<const std::vector<int>> lists) {
  RankingMetrics m;
  for (const auto& labels : lists) {
    if (std::find(labels.begin(), labels.end(), 1) == labels.end()) {
      ++m.users_without_positives;
      continue;
    }
    m.recall_at_5 += recall_at(labels);
    m.ndcg += ndcg(labels);
    ++m.users_ranked;
  }
  if (m.users_ranked > 0) {
    m.recall_at_5 /= static_cast<double>(m.users_ranked);
    m.ndcg /= static_cast<double>(m.users_ranked);
  }
  return m;
}

std::string EvalReport::to_text() const {
  return fmt::format(
      "split            {}\n"
      "ratings          {}\n"
      "MAE              {:.6f}\n"
      "RMSE             {:.6f}\n"
      "Recall@5         {:.6f}\n"
      "NDCG             {:.6f}\n"
      "ranked users     {}\n"
      "users w/o pos.   {}\n"
      "F                {}\n"
      "conventions      gain 2^y-1, discount log2(pos+1), full observed list, macro average{}\n",
      split, n_test, mae, rmse, recall_at_5, ndcg, users_ranked, users_without_positives, positive_threshold,
      clamped ? ", predictions clamped to [1,5]" : "");
}

EvalReport evaluate(const ModelParams& params, const DecentralizedGraph& graph, const DatasetBundle& bundle,
                    const VariantFlags& flags, std::span<const RatingRecord> split, const EvalOptions& options) {
  const auto sample = EpochSample::full(graph);
  const PredictContext ctx{params, graph, bundle, flags, sample};
  const OffsetCache cache(ctx, options.exec);

  const auto n = static_cast<std::int64_t>(split.size());
  std::vector<double> pred(split.size());
  std::vector<double> truth(split.size());
  auto one = [&](std::int64_t k) {
    const auto& r = split[static_cast<std::size_t>(k)];
    pred[static_cast<std::size_t>(k)] = cache.predict(r.user, r.item);
    truth[static_cast<std::size_t>(k)] = r.rating;
  };
  if (options.exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < n; ++k) one(k);
  } else {
    for (std::int64_t k = 0; k < n; ++k) one(k);
  }

  EvalReport report;
  report.n_test = split.size();
  report.positive_threshold = options.positive_threshold;
  report.clamped = options.clamp;
  if (split.empty()) return report;

  std::vector<double> reported = pred;
  if (options.clamp)
    for (auto& v : reported) v = std::clamp(v, 1.0, 5.0);
  const auto errors = mae_rmse(reported, truth);
  report.mae = errors.mae;
  report.rmse = errors.rmse;

  // per-user lists over the observed split items only
  std::map<Index, std::vector<std::size_t>> by_user;
  for (std::size_t k = 0; k < split.size(); ++k) by_user[split[k].user].push_back(k);
  std::vector<std::vector<int>> lists;
  lists.reserve(by_user.size());
  for (const auto& [user, rows] : by_user) {
    std::vector<Index> items(rows.size());
    std::vector<double> scores(rows.size());
    std::map<Index, int> rating_of;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      items[k] = split[rows[k]].item;
      scores[k] = sigmoid(pred[rows[k]]);
      rating_of[items[k]] = split[rows[k]].rating;
    }
    std::vector<int> ranked_ratings;
    for (Index item : rank_user(items, scores)) ranked_ratings.push_back(rating_of[item]);
    lists.push_back(label_items(ranked_ratings, options.positive_threshold));
  }
  const auto ranking = recall_ndcg(lists);
  report.recall_at_5 = ranking.recall_at_5;
  report.ndcg = ranking.ndcg;
  report.users_ranked = ranking.users_ranked;
  report.users_without_positives = ranking.users_without_positives;
  return report;
}

}  // namespace gdsrec
