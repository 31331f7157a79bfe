// One PASS/FAIL line per acceptance criterion; exit status is non-zero when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "fixtures.hpp"
#include "gdsrec/eval.hpp"
#include "gdsrec/hash.hpp"
#include "gdsrec/synthetic.hpp"
#include "gdsrec/train.hpp"
#include "gradcheck.hpp"

using namespace gdsrec;
using namespace gdsrec::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1. graph construction against a brute-force recomputation

Outcome oracle_equivalence() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 20);
  std::uniform_real_distribution<double> density(0.1, 0.9);
  std::size_t checked_t = 0, checked_levels = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto [t, trust] = random_tables(rng, dim(rng), dim(rng), density(rng), density(rng) * 0.5);
    const auto b = split_dataset(t, trust, trial % 2 ? 0.6 : 0.8, static_cast<std::uint64_t>(trial));

    // straight-line statistics from the raw train triples
    std::map<Index, std::pair<double, int>> us, is;
    std::map<std::pair<Index, Index>, int> r;
    double gsum = 0.0;
    for (const auto& x : b.train) {
      us[x.user].first += x.rating, ++us[x.user].second;
      is[x.item].first += x.rating, ++is[x.item].second;
      r[{x.user, x.item}] = x.rating;
      gsum += x.rating;
    }
    const double gm = gsum / static_cast<double>(b.train.size());
    auto eu = [&](Index u) { return us.count(u) ? us[u].first / us[u].second : gm; };
    auto ev = [&](Index v) { return is.count(v) ? is[v].first / is[v].second : gm; };
    std::map<Index, std::set<Index>> friends;
    for (const auto& e : trust.edges)
      if (e.src != e.dst) friends[e.src].insert(e.dst);

    for (int delta = 0; delta <= 3; ++delta) {
      const auto g = build_graph(b, delta);
      for (Index u = 0; u < b.num_users; ++u) {
        std::vector<std::tuple<Index, int>> want;
        for (const auto& [key, rating] : r)
          if (key.first == u) want.emplace_back(key.second, static_cast<int>(std::ceil(std::abs(rating - ev(key.second)))));
        const auto& row = g.user_view[u];
        if (row.size() != want.size()) return {false, fmt::format("user_view size, user {}", u)};
        for (std::size_t k = 0; k < row.size(); ++k, ++checked_levels)
          if (row[k].item != std::get<0>(want[k]) || row[k].level != std::get<1>(want[k]))
            return {false, fmt::format("user level mismatch, user {}", u)};

        const auto& social = g.social_view[u];
        const auto& fs = friends[u];
        if (social.size() != fs.size()) return {false, fmt::format("social size, user {}", u)};
        std::vector<int> T;
        for (Index k : fs) {
          int t_uk = 1;
          for (const auto& [key, rating] : r)
            if (key.first == u) {
              const auto other = r.find({k, key.second});
              if (other != r.end() && std::abs(rating - other->second) <= delta) ++t_uk;
            }
          T.push_back(t_uk);
        }
        const double total = std::accumulate(T.begin(), T.end(), 0.0);
        std::size_t k = 0;
        for (Index f : fs) {
          if (social[k].user != f || social[k].coefficient != T[k])
            return {false, fmt::format("T mismatch, user {} delta {}", u, delta)};
          if (std::abs(social[k].weight - T[k] / total) > 1e-12)
            return {false, fmt::format("lambda mismatch, user {}", u)};
          ++k;
          ++checked_t;
        }
      }
      for (Index v = 0; v < b.num_items; ++v) {
        std::vector<std::pair<Index, int>> want;
        for (const auto& [key, rating] : r)
          if (key.second == v) want.emplace_back(key.first, static_cast<int>(std::ceil(std::abs(rating - eu(key.first)))));
        std::sort(want.begin(), want.end());
        const auto& row = g.item_view[v];
        if (row.size() != want.size()) return {false, fmt::format("item_view size, item {}", v)};
        for (std::size_t k = 0; k < row.size(); ++k, ++checked_levels)
          if (row[k].user != want[k].first || row[k].level != want[k].second)
            return {false, fmt::format("item level mismatch, item {}", v)};
      }
    }
  }
  return {true, fmt::format("{} coefficients, {} levels", checked_t, checked_levels)};
}

// ---------------------------------------------------------------------------
// 2. finite-difference gradients

Outcome gradient_correctness() {
  auto [t, trust] = gradient_fixture();
  const auto b = split_dataset(t, trust, 0.8, 3);
  const auto g = build_graph(b, 1);
  auto p = ModelParams::initialized({b.num_users, b.num_items, 6}, 3);
  const auto sample = EpochSample::draw(g, 3, 3, 0, Exec::serial);
  double worst_all = 0.0;
  for (auto task : {Task::rating, Task::ranking}) {
    const auto checks = check_gradients(p, g, b, VariantFlags{}, sample, b.train, task, 4, Exec::parallel);
    for (const auto& c : checks)
      if (!(c.rel_error < 1e-4))
        return {false, fmt::format("{} {} rel error {:.3g}", to_string(task), c.name, c.rel_error)};
    worst_all = std::max(worst_all, worst(checks));
  }
  return {true, fmt::format("worst group relative error {:.2e} over {} groups x 2 losses", worst_all, kNumGroups)};
}

// ---------------------------------------------------------------------------
// 3. zero head reduces to the average baseline

Outcome prediction_decomposition() {
  auto t = table_from({{"a", "x", 5}, {"a", "y", 3}, {"b", "x", 4}, {"b", "z", 1}, {"c", "y", 2}, {"c", "z", 5},
                       {"d", "x", 3}, {"d", "w", 4}, {"e", "w", 2}, {"e", "y", 4}, {"a", "w", 1}, {"c", "x", 4}});
  auto trust = trust_from({{"a", "b"}, {"b", "c"}, {"c", "a"}, {"d", "a"}, {"e", "d"}}, t);
  const auto b = split_dataset(t, trust, 0.6, 5);
  const auto g = build_graph(b, 1);
  auto p = ModelParams::initialized({b.num_users, b.num_items, 8}, 5);
  p.zero_prediction_head();
  const auto full = EpochSample::full(g);
  VariantFlags flags;
  std::size_t n = 0;
  for (const auto* split : {&b.train, &b.validation, &b.test})
    for (const auto& r : *split) {
      flags.alpha = 1.0;
      const PredictContext one{p, g, b, flags, full};
      const double expect = 0.5 * (b.user_avg[r.user] + b.item_avg[r.item]);
      if (predict(one, r.user, r.item) != expect) return {false, "alpha=1 mismatch"};
      flags.alpha = 0.0;
      const PredictContext zero{p, g, b, flags, full};
      if (predict(zero, r.user, r.item) != 0.0) return {false, "alpha=0 is not zero"};
      ++n;
    }
  return {true, fmt::format("{} pairs exact", n)};
}

// ---------------------------------------------------------------------------
// 4. rc variant coincides when every coefficient is equal

Outcome variant_equivalence() {
  // disjoint item sets: every social pair has T = 1
  RatingTable t;
  for (int u = 0; u < 6; ++u)
    for (int v = 0; v < 4; ++v) {
      const Index uid = t.users.intern("u" + std::to_string(u));
      const Index vid = t.items.intern("i" + std::to_string(u * 4 + v));
      t.records.push_back({uid, vid, 1 + (u + v) % 5});
    }
  TrustTable trust;
  for (int a = 0; a < 6; ++a)
    for (int c = 0; c < 6; ++c)
      if (a != c && (a + c) % 3 != 0) trust.edges.push_back({a, c, false});
  const auto b = split_dataset(t, trust, 0.6, 9);
  const auto g = build_graph(b, 1);
  for (const auto& row : g.social_view)
    for (const auto& e : row)
      if (e.coefficient != 1) return {false, "fixture coefficients differ"};

  TrainConfig cfg;
  cfg.dim = 8;
  cfg.K = 3;
  cfg.batch_size = 8;
  cfg.max_epochs = 2;
  cfg.seed = 4;
  Trainer base(b, g, cfg, VariantFlags{});
  Trainer rc(b, g, cfg, VariantFlags::from_variant("rc"));
  for (int e = 0; e < 2; ++e) {
    base.train_epoch();
    rc.train_epoch();
  }
  if (!(base.params() == rc.params())) return {false, "trained parameters differ"};
  const auto full = EpochSample::full(g);
  const auto rc_flags = VariantFlags::from_variant("rc");
  const PredictContext a{base.params(), g, b, VariantFlags{}, full};
  const PredictContext c{base.params(), g, b, rc_flags, full};
  std::size_t n = 0;
  for (Index u = 0; u < b.num_users; ++u)
    for (Index v = 0; v < b.num_items; ++v, ++n)
      if (predict(a, u, v) != predict(c, u, v)) return {false, fmt::format("prediction differs at ({},{})", u, v)};
  return {true, fmt::format("{} predictions identical after 2 training epochs", n)};
}

// ---------------------------------------------------------------------------
// 5. attention weight properties

Outcome attention_properties() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> size(1, 40);
  std::normal_distribution<double> gauss(0.0, 3.0);
  const auto p = ModelParams::initialized({4, 4, 6}, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = size(rng);
    std::vector<double> scores(n), shifted(n);
    Vec ctx(6);
    for (auto& c : ctx) c = gauss(rng);
    const double shift = gauss(rng) * 10.0;
    for (int k = 0; k < n; ++k) {
      if (trial % 2) {
        Vec x(6);
        for (auto& c : x) c = gauss(rng);
        scores[k] = attention_score(p, trial % 4 == 1, x, ctx);
      } else {
        scores[k] = gauss(rng);
      }
      shifted[k] = scores[k] + shift;
    }
    const auto w = attention_weights(scores, AttentionMode::softmax);
    const auto ws = attention_weights(shifted, AttentionMode::softmax);
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9) return {false, fmt::format("softmax sum {}", sum)};
    for (int k = 0; k < n; ++k) {
      if (!(w[k] > 0.0)) return {false, "non-positive softmax weight"};
      if (std::abs(w[k] - ws[k]) > 1e-12) return {false, "softmax not shift invariant"};
    }
    const auto avg = attention_weights(scores, AttentionMode::uniform_avg);
    for (double a : avg)
      if (a != 1.0 / n) return {false, "avg weight is not 1/n"};
    const auto mx = attention_weights(scores, AttentionMode::max);
    const double top = *std::max_element(w.begin(), w.end());
    for (double m : mx)
      if (m != top) return {false, "max weight differs from the common maximum"};
  }
  return {true, "1000 neighborhoods"};
}

// ---------------------------------------------------------------------------
// 6. node dropout cap and protection

Outcome node_dropout() {
  // user u rates 1 + (u * 7) % 60 items; after the 80% split degrees span about 1..50
  RatingTable t;
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> rating(1, 5);
  const int users = 60, items = 70;
  for (int v = 0; v < items; ++v) t.items.intern("i" + std::to_string(v));
  for (int u = 0; u < users; ++u) {
    const Index uid = t.users.intern("u" + std::to_string(u));
    const int degree = 1 + (u * 7) % 60;
    for (int k = 0; k < degree; ++k) t.records.push_back({uid, (u + k) % items, rating(rng)});
  }
  TrustTable trust;
  for (int u = 0; u < users; ++u)
    for (int k = 1; k <= 1 + (u * 3) % 12; ++k) trust.edges.push_back({u, (u + k) % users, false});
  const auto b = split_dataset(t, trust, 0.8, 2);
  const auto g = build_graph(b, 1);
  std::size_t max_degree = 0;
  for (const auto& row : g.user_view) max_degree = std::max(max_degree, row.size());
  for (const auto& row : g.item_view) max_degree = std::max(max_degree, row.size());
  if (max_degree > 50) return {false, fmt::format("fixture degree {} above 50", max_degree)};

  TrainConfig cfg;
  cfg.dim = 8;
  cfg.K = 5;
  cfg.batch_size = 64;
  for (auto exec : {Exec::parallel, Exec::serial}) {
    cfg.exec = exec;
    Trainer trainer(b, g, cfg, VariantFlags{});
    AggregationProbe probe;
    probe.cap = 5;
    trainer.train_epoch(&probe);
    if (probe.aggregations == 0) return {false, "no aggregation recorded"};
    if (probe.over_cap != 0) return {false, fmt::format("{} aggregations above K", probe.over_cap.load())};
    if (probe.protection_violations != 0) return {false, "a low-degree node lost neighbors"};
    if (probe.max_consumed != 5) return {false, "the cap was never reached"};
  }
  return {true, fmt::format("max degree {}, every aggregation <= 5, low-degree nodes intact", max_degree)};
}

// ---------------------------------------------------------------------------
// 7. early stopping on a scripted sequence

Outcome early_stopping() {
  const std::vector<double> script = {2.0, 1.8, 1.5, 1.6, 1.4, 1.41, 1.42, 1.43, 1.44, 1.45,
                                      1.46, 1.47, 1.48, 1.49, 1.50, 1.51, 1.52};
  // best is epoch index 4 (1.4); ten increases follow, the tenth at index 14
  EarlyStopping stopper(10);
  ModelParams p({1, 1, 2});
  std::size_t stopped_at = 0;
  for (std::size_t e = 0; e < script.size(); ++e) {
    p.values().dense[0] = static_cast<double>(e);
    if (stopper.observe(script[e], p)) {
      stopped_at = e;
      break;
    }
  }
  if (stopped_at != 14) return {false, fmt::format("stopped at index {}", stopped_at)};
  if (stopper.best_index() != 4) return {false, "wrong best epoch"};
  if (stopper.best_params().values().dense[0] != 4.0) return {false, "restored parameters are not the best epoch's"};
  return {true, "stop after the 10th increase, epoch-5 parameters restored"};
}

// ---------------------------------------------------------------------------
// 8. learning on synthetic bias-model data

Outcome synthetic_learning() {
  SyntheticSpec spec;  // 60 users x 80 items
  spec.seed = 1;
  const auto data = make_synthetic(spec);
  const auto b = split_dataset(data.ratings, data.trust, 0.6, 7);
  const auto g = build_graph(b, 1);
  double global_mae = 0.0;
  for (const auto& r : b.test) global_mae += std::abs(r.rating - b.global_mean);
  global_mae /= static_cast<double>(b.test.size());

  TrainConfig cfg;
  cfg.dim = 32;
  cfg.learning_rate = 5e-4;
  cfg.max_epochs = 50;
  cfg.batch_size = 64;
  cfg.seed = 1;
  Trainer trainer(b, g, cfg, VariantFlags{});
  const auto result = trainer.run();
  const auto report = evaluate(trainer.params(), g, b, VariantFlags{}, b.test, {});
  const double gain = 1.0 - report.mae / global_mae;
  return {gain >= 0.10, fmt::format("test MAE {:.4f} vs global mean {:.4f} ({:.1f}% lower), {} epochs", report.mae,
                                    global_mae, 100.0 * gain, result.history.size())};
}

// ---------------------------------------------------------------------------
// 9. metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0.0, 2.0);
  std::uniform_int_distribution<int> len(1, 50);
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> a(len(rng)), b(a.size());
    for (auto& x : a) x = gauss(rng);
    for (auto& x : b) x = gauss(rng);
    const auto e = mae_rmse(a, b);
    if (e.mae > e.rmse) return {false, "mae > rmse"};
  }
  const std::vector<int> pattern = {0, 1, 0};
  if (std::abs(ndcg(pattern) - 1.0 / std::log2(3.0)) > 1e-12) return {false, "ndcg(0,1,0)"};

  std::bernoulli_distribution coin(0.4);
  for (int k = 0; k < 500; ++k) {
    const int n = len(rng) % 12 + 1;
    std::vector<Index> items(n);
    std::vector<double> scores(n), sig(n), affine(n);
    std::vector<int> labels(n);
    std::map<Index, int> label_of;
    for (int i = 0; i < n; ++i) {
      items[i] = i;
      scores[i] = std::round(gauss(rng) * 2.0) / 2.0;  // some ties
      sig[i] = sigmoid(scores[i]);
      affine[i] = 3.0 * scores[i] - 7.0;
      label_of[i] = coin(rng);
    }
    auto labelled = [&](const std::vector<double>& s) {
      std::vector<int> out;
      for (Index it : rank_user(items, s)) out.push_back(label_of[it]);
      return out;
    };
    const auto base = labelled(scores);
    for (const auto* other : {&sig, &affine}) {
      const auto l = labelled(*other);
      if (recall_at(l) != recall_at(base) || ndcg(l) != ndcg(base)) return {false, "not invariant under transform"};
    }
  }
  return {true, "1000 random vectors, ndcg(0,1,0)=1/log2(3), 500 monotone transforms"};
}

// ---------------------------------------------------------------------------
// 10. end-to-end determinism through the command line tool

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t file_hash(const std::filesystem::path& p) {
  Fnv1a h;
  h.add(slurp(p));
  return h.value();
}

Outcome determinism(const std::string& cli) {
  TempDir dir("accept");
  SyntheticSpec spec;
  spec.seed = 10;
  write_synthetic(make_synthetic(spec), dir.path() / "data");
  std::vector<std::filesystem::path> outs;
  for (int run = 0; run < 2; ++run) {
    const auto out = dir.path() / ("run" + std::to_string(run));
    const auto common = fmt::format("--dataset-dir {} --out {} --seed 5", (dir.path() / "data").string(), out.string());
    for (const auto& cmd : {fmt::format("{} preprocess {}", cli, common),
                            fmt::format("{} train {} --D 16 --epochs 5", cli, common),
                            fmt::format("{} evaluate {}", cli, common)}) {
      if (std::system((cmd + " > /dev/null 2>&1").c_str()) != 0) return {false, "command failed: " + cmd};
    }
    outs.push_back(out);
  }
  const auto log = slurp(outs[0] / "metrics.jsonl");
  if (std::count(log.begin(), log.end(), '\n') != 5) return {false, "metrics log does not have 5 lines"};
  for (const char* name : {"metrics.jsonl", "report.json", "bundle.gds", "graph.gds"})
    if (slurp(outs[0] / name) != slurp(outs[1] / name)) return {false, fmt::format("{} differs", name)};
  for (const char* name : {"checkpoint_best.ckpt", "checkpoint_last.ckpt"})
    if (file_hash(outs[0] / name) != file_hash(outs[1] / name)) return {false, fmt::format("{} hash differs", name)};
  return {true, fmt::format("logs identical, checkpoint hash {}", hex64(file_hash(outs[0] / "checkpoint_best.ckpt")))};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const std::string cli = argc > 1 ? argv[1] : "gdsrec";
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "graph oracle equivalence", 10, oracle_equivalence},
      {2, "gradient correctness", 30, gradient_correctness},
      {3, "prediction decomposition", 1, prediction_decomposition},
      {4, "variant equivalence", 1, variant_equivalence},
      {5, "attention properties", 5, attention_properties},
      {6, "node dropout", 10, node_dropout},
      {7, "early stopping", 1, early_stopping},
      {8, "synthetic learning power", 300, synthetic_learning},
      {9, "metric oracles", 5, metric_oracles},
      {10, "determinism", 120, [&] { return determinism(cli); }},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::cout << fmt::format("{} [{:>2}] {:<26} {:>7.2f}s (limit {:g}s)  {}{}\n", pass ? "PASS" : "FAIL", c.id, c.name,
                             secs, c.budget_seconds, o.detail, in_time ? "" : "  (over time budget)")
              << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
