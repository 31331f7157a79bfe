#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gdsrec/train.hpp"

namespace gdsrec::testing {

struct GroupCheck {
  std::string name;
  double max_abs_diff = 0.0;
  double scale = 0.0;
  double rel_error = 0.0;
};

/// Relative error below this scale is measured against the floor instead, so
/// groups whose true gradient is zero are judged on absolute error.
inline constexpr double kGradScaleFloor = 1e-6;

/// Compares the engine's gradient with central differences of the forward-only
/// batch loss, one group at a time.
inline std::vector<GroupCheck> check_gradients(ModelParams& params, const DecentralizedGraph& graph,
                                               const DatasetBundle& bundle, const VariantFlags& flags,
                                               const EpochSample& sample, std::span<const RatingRecord> batch,
                                               Task task, int threshold, Exec exec, double step = 1e-5) {
  const ModelContext ctx{params, graph, bundle, flags, sample};
  auto grads = ParamBuffer::zeros(params.layout());
  GradientEngine engine(params.layout(), 4);
  engine.compute(ctx, batch, task, threshold, grads, exec);

  std::vector<GroupCheck> out;
  const auto& layout = params.layout();
  for (std::size_t gi = 0; gi < kNumGroups; ++gi) {
    const auto g = static_cast<Group>(gi);
    auto theta = params.values().group(layout, g);
    const auto analytic = std::as_const(grads).group(layout, g);
    GroupCheck c{std::string(layout[g].name)};
    double max_a = 0.0, max_n = 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double saved = theta[k];
      theta[k] = saved + step;
      const double up = batch_loss(ctx, batch, task, threshold);
      theta[k] = saved - step;
      const double down = batch_loss(ctx, batch, task, threshold);
      theta[k] = saved;
      const double numeric = (up - down) / (2.0 * step);
      c.max_abs_diff = std::max(c.max_abs_diff, std::abs(numeric - analytic[k]));
      max_a = std::max(max_a, std::abs(analytic[k]));
      max_n = std::max(max_n, std::abs(numeric));
    }
    c.scale = std::max(max_a, max_n);
    c.rel_error = c.max_abs_diff / std::max(c.scale, kGradScaleFloor);
    out.push_back(c);
  }
  return out;
}

inline double worst(const std::vector<GroupCheck>& checks) {
  double w = 0.0;
  for (const auto& c : checks) w = std::max(w, c.rel_error);
  return w;
}

/// N=4 users, M=5 items, with item and social degrees above K=3.
inline std::pair<RatingTable, TrustTable> gradient_fixture() {
  RatingTable t;
  const int ratings[4][5] = {{5, 3, 4, 1, 2}, {4, 0, 5, 2, 3}, {1, 2, 0, 5, 4}, {3, 4, 2, 0, 5}};
  for (int u = 0; u < 4; ++u) t.users.intern("u" + std::to_string(u));
  for (int v = 0; v < 5; ++v) t.items.intern("i" + std::to_string(v));
  for (int u = 0; u < 4; ++u)
    for (int v = 0; v < 5; ++v)
      if (ratings[u][v] > 0) t.records.push_back({u, v, ratings[u][v]});
  TrustTable trust;
  for (auto [a, b] : {std::pair{0, 1}, {0, 2}, {0, 3}, {1, 0}, {1, 2}, {2, 3}, {3, 0}, {3, 1}, {3, 2}})
    trust.edges.push_back({a, b, false});
  return {t, trust};
}

}  // namespace gdsrec::testing
