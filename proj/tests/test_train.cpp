#include <doctest.h>

#include <cmath>
#include <numeric>

#include <omp.h>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "gdsrec/synthetic.hpp"
#include "gdsrec/train.hpp"

using namespace gdsrec;
using namespace gdsrec::testing;

namespace {

struct Tiny {
  DatasetBundle bundle;
  DecentralizedGraph graph;
  ModelParams params;
  EpochSample sample;

  explicit Tiny(int delta = 1, std::uint64_t seed = 3) {
    auto [t, trust] = gradient_fixture();
    bundle = split_dataset(t, trust, 0.8, seed);
    graph = build_graph(bundle, delta);
    params = ModelParams::initialized({bundle.num_users, bundle.num_items, 6}, seed);
    sample = EpochSample::draw(graph, 3, seed, 0, Exec::serial);
  }
};

void require_gradients(Tiny& f, const VariantFlags& flags, Task task, Exec exec) {
  const auto checks =
      check_gradients(f.params, f.graph, f.bundle, flags, f.sample, f.bundle.train, task, 3, exec);
  for (const auto& c : checks) {
    CAPTURE(c.name);
    CAPTURE(c.max_abs_diff);
    CAPTURE(c.scale);
    CHECK(c.rel_error < 1e-4);
  }
}

}  // namespace

TEST_CASE("rating and ranking gradients match central differences") {
  Tiny f;
  for (auto task : {Task::rating, Task::ranking})
    for (auto exec : {Exec::serial, Exec::parallel}) {
      CAPTURE(to_string(task));
      require_gradients(f, VariantFlags{}, task, exec);
    }
}

TEST_CASE("gradients hold for every variant and attention mode") {
  Tiny f;
  for (const char* v : {"rc", "sn", "rd"}) {
    CAPTURE(v);
    require_gradients(f, VariantFlags::from_variant(v), Task::rating, Exec::parallel);
  }
  for (auto mode : {AttentionMode::uniform_avg, AttentionMode::max}) {
    VariantFlags flags;
    flags.attention = mode;
    CAPTURE(to_string(mode));
    require_gradients(f, flags, Task::ranking, Exec::parallel);
  }
  VariantFlags scaled;
  scaled.alpha = 0.4;
  require_gradients(f, scaled, Task::rating, Exec::serial);
}

TEST_CASE("serial and parallel gradients agree") {
  Tiny f;
  const ModelContext ctx{f.params, f.graph, f.bundle, VariantFlags{}, f.sample};
  auto a = ParamBuffer::zeros(f.params.layout());
  auto b = ParamBuffer::zeros(f.params.layout());
  GradientEngine serial(f.params.layout(), 1), parallel(f.params.layout(), 5);
  const double la = serial.compute(ctx, f.bundle.train, Task::rating, 4, a, Exec::serial);
  const double lb = parallel.compute(ctx, f.bundle.train, Task::rating, 4, b, Exec::parallel);
  CHECK(la == doctest::Approx(lb).epsilon(1e-14));
  for (std::size_t k = 0; k < a.tables.size(); ++k) CHECK(a.tables[k] == doctest::Approx(b.tables[k]).epsilon(1e-10));
  for (std::size_t k = 0; k < a.dense.size(); ++k) CHECK(a.dense[k] == doctest::Approx(b.dense[k]).epsilon(1e-10));
}

TEST_CASE("parallel gradients do not depend on the thread count") {
  Tiny f;
  const ModelContext ctx{f.params, f.graph, f.bundle, VariantFlags{}, f.sample};
  auto a = ParamBuffer::zeros(f.params.layout());
  auto b = ParamBuffer::zeros(f.params.layout());
  GradientEngine engine(f.params.layout(), 7);
  engine.compute(ctx, f.bundle.train, Task::rating, 4, a, Exec::parallel);
  const int before = omp_get_max_threads();
  omp_set_num_threads(3);
  engine.compute(ctx, f.bundle.train, Task::rating, 4, b, Exec::parallel);
  omp_set_num_threads(before);
  CHECK(a == b);
}

TEST_CASE("squared error examples") {
  CHECK(squared_error(5.0, 3).loss == 2.0);
  CHECK(squared_error(3.0, 3).loss == 0.0);
  CHECK(squared_error(3.0, 3).d_prediction == 0.0);
}

TEST_CASE("logistic loss at indifference and in the limit") {
  CHECK(logistic_loss(0.0, 1).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(logistic_loss(0.0, 0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(logistic_loss(40.0, 1).loss < 1e-15);
  CHECK(std::isfinite(logistic_loss(-800.0, 1).loss));
  CHECK(logistic_loss(-800.0, 1).loss == doctest::Approx(800.0));
  CHECK(ranking_label(3, 3) == 1);
  CHECK(ranking_label(2, 3) == 0);
}

TEST_CASE("perfect predictions give zero loss and zero gradients") {
  // Zeroed head and alpha chosen so that (alpha/2)(E_u+E_v) hits every rating.
  auto t = table_from({{"a", "x", 4}, {"a", "y", 4}, {"b", "x", 4}, {"b", "y", 4}, {"c", "x", 4}});
  TrustTable trust;
  auto bundle = split_dataset(t, trust, 0.8, 1);
  auto graph = build_graph(bundle, 1);
  auto params = ModelParams::initialized({bundle.num_users, bundle.num_items, 6}, 1);
  params.zero_prediction_head();
  const auto sample = EpochSample::full(graph);
  const ModelContext ctx{params, graph, bundle, VariantFlags{}, sample};
  auto grads = ParamBuffer::zeros(params.layout());
  GradientEngine engine(params.layout(), 2);
  CHECK(engine.compute(ctx, bundle.train, Task::rating, 4, grads, Exec::parallel) == 0.0);
  CHECK(std::all_of(grads.tables.begin(), grads.tables.end(), [](double g) { return g == 0.0; }));
  CHECK(std::all_of(grads.dense.begin(), grads.dense.end(), [](double g) { return g == 0.0; }));
}

TEST_CASE("single-sample rating loss is half the squared error") {
  auto t = table_from({{"a", "x", 1}, {"b", "x", 5}, {"a", "y", 3}, {"b", "y", 3}, {"c", "y", 3}});
  TrustTable trust;
  auto bundle = split_dataset(t, trust, 0.8, 1);
  auto graph = build_graph(bundle, 1);
  auto params = ModelParams::initialized({bundle.num_users, bundle.num_items, 6}, 1);
  const auto sample = EpochSample::full(graph);
  const ModelContext ctx{params, graph, bundle, VariantFlags{}, sample};
  const double pred = predict(ctx.predict_context(), 0, 0);
  const RatingRecord rec{0, 0, 2};
  auto grads = ParamBuffer::zeros(params.layout());
  CHECK(rating_loss(ctx, std::span(&rec, 1), grads, Exec::serial) == doctest::Approx(0.5 * (pred - 2) * (pred - 2)));
  CHECK(squared_error(5.0, 3).loss == 2.0);
}

TEST_CASE("rmsprop closed form and fixed point") {
  ModelParams p({2, 2, 2});
  auto& v = p.values();
  std::iota(v.dense.begin(), v.dense.end(), 0.0);
  const auto start = p;
  auto grads = ParamBuffer::zeros(p.layout());
  RmsProp opt(p.layout(), 0.99, 1e-8);

  opt.step(p, grads, 0.1);
  CHECK(p == start);

  for (auto& g : grads.dense) g = 0.5;
  opt.step(p, grads, 1e-3);
  const double expected = -1e-3 * 0.5 / (std::sqrt(0.01 * 0.25) + 1e-8);
  for (std::size_t k = 0; k < v.dense.size(); ++k)
    CHECK(v.dense[k] == doctest::Approx(start.values().dense[k] + expected).epsilon(1e-15));
  for (double a : opt.accumulators().dense) CHECK(a == doctest::Approx(0.01 * 0.25));

  grads.set_zero();
  const double acc_before = opt.accumulators().dense[0];
  const auto held = p;
  opt.step(p, grads, 1e-3);
  CHECK(p == held);
  CHECK(opt.accumulators().dense[0] == doctest::Approx(0.99 * acc_before));
}

TEST_CASE("rmsprop steady-state step is bounded by the learning rate for any gradient scale") {
  for (double c : {1e-3, 1.0, 1e3}) {
    ModelParams p({1, 1, 2});
    auto grads = ParamBuffer::zeros(p.layout());
    for (auto& g : grads.dense) g = c;
    RmsProp opt(p.layout());
    const double lr = 1e-3;
    for (int k = 0; k < 2000; ++k) opt.step(p, grads, lr, Exec::serial);
    const double before = p.values().dense[0];
    opt.step(p, grads, lr, Exec::serial);
    const double step = std::abs(p.values().dense[0] - before);
    CAPTURE(c);
    CHECK(step <= lr * (1.0 + 1e-9));
    CHECK(step == doctest::Approx(lr).epsilon(0.01));
  }
}

TEST_CASE("rmsprop rejects non-finite updates and shape mismatches") {
  ModelParams p({1, 1, 2});
  auto grads = ParamBuffer::zeros(p.layout());
  grads.dense[0] = std::numeric_limits<double>::quiet_NaN();
  RmsProp opt(p.layout());
  CHECK_THROWS_AS(opt.step(p, grads, 1e-3), std::runtime_error);
  ParamBuffer wrong;
  CHECK_THROWS_AS(opt.step(p, wrong, 1e-3), std::invalid_argument);
}

TEST_CASE("early stopping rule") {
  std::vector<double> decreasing;
  for (int k = 0; k < 40; ++k) decreasing.push_back(10.0 - 0.1 * k);
  for (std::size_t n = 1; n <= decreasing.size(); ++n) CHECK_FALSE(should_stop(std::span(decreasing).first(n)));

  std::vector<double> h = {5.0, 4.0, 3.0};
  for (int k = 1; k <= 10; ++k) {
    h.push_back(3.0 + 0.1 * k);
    CHECK(should_stop(h) == (k == 10));
  }
  CHECK(best_epoch(h) == 2);

  std::vector<double> zigzag;
  for (int k = 0; k < 50; ++k) zigzag.push_back(k % 2 ? 2.0 : 1.0);
  for (std::size_t n = 1; n <= zigzag.size(); ++n) CHECK_FALSE(should_stop(std::span(zigzag).first(n)));

  std::vector<double> flat(30, 1.0);
  CHECK_FALSE(should_stop(flat));
  CHECK(best_epoch(flat) == 0);
  CHECK(should_stop(std::vector<double>{1.0, 2.0, 3.0}, 2));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.off_grid().empty());
  c.dim = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.K = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.dim = 6;
  c.learning_rate = 0.01;
  CHECK(c.off_grid().size() == 2);
  CHECK(parse_task("ranking") == Task::ranking);
  CHECK_THROWS(parse_task("regression"));
}

namespace {

struct Small {
  DatasetBundle bundle;
  DecentralizedGraph graph;
  Small() {
    std::mt19937_64 rng(11);
    auto [t, trust] = random_tables(rng, 12, 15, 0.4, 0.2);
    bundle = split_dataset(t, trust, 0.6, 5);
    graph = build_graph(bundle, 1);
  }
};

TrainConfig small_config() {
  TrainConfig c;
  c.dim = 8;
  c.K = 4;
  c.batch_size = 16;
  c.max_epochs = 3;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("training is a pure function of data, config and seed") {
  Small s;
  Trainer a(s.bundle, s.graph, small_config(), VariantFlags{});
  Trainer b(s.bundle, s.graph, small_config(), VariantFlags{});
  for (int e = 0; e < 3; ++e) {
    const auto ma = a.train_epoch();
    const auto mb = b.train_epoch();
    CHECK(ma.train_loss == mb.train_loss);
    CHECK(ma.val_objective == mb.val_objective);
  }
  CHECK(a.params() == b.params());
  CHECK(a.rng_state() == b.rng_state());
}

TEST_CASE("zero learning rate leaves every epoch's validation metrics unchanged") {
  Small s;
  auto c = small_config();
  c.learning_rate = 0.0;
  Trainer t(s.bundle, s.graph, c, VariantFlags{});
  const auto first = t.train_epoch();
  const auto init = t.params();
  for (int e = 0; e < 2; ++e) {
    const auto m = t.train_epoch();
    CHECK(m.val_mae == first.val_mae);
    CHECK(m.val_rmse == first.val_rmse);
  }
  CHECK(t.params() == init);
}

TEST_CASE("serial and parallel training produce the same trajectory") {
  Small s;
  auto c = small_config();
  c.exec = Exec::serial;
  Trainer a(s.bundle, s.graph, c, VariantFlags{});
  c.exec = Exec::parallel;
  Trainer b(s.bundle, s.graph, c, VariantFlags{});
  for (int e = 0; e < 2; ++e) {
    const auto ma = a.train_epoch();
    const auto mb = b.train_epoch();
    CHECK(ma.train_loss == doctest::Approx(mb.train_loss).epsilon(1e-9));
    CHECK(ma.val_mae == doctest::Approx(mb.val_mae).epsilon(1e-9));
  }
}

TEST_CASE("run restores the best parameters and reports the best epoch") {
  Small s;
  auto c = small_config();
  c.max_epochs = 4;
  Trainer t(s.bundle, s.graph, c, VariantFlags{});
  std::vector<ModelParams> snapshots;
  const auto result = t.run([&](const EpochMetrics&, const Trainer& tr, bool) { snapshots.push_back(tr.params()); });
  REQUIRE(result.history.size() == 4);
  std::vector<double> obj;
  for (const auto& m : result.history) obj.push_back(m.val_objective);
  CHECK(result.best_epoch == best_epoch(obj) + 1);
  CHECK(t.params() == snapshots[result.best_epoch - 1]);
}

TEST_CASE("ranking task trains without non-finite values") {
  Small s;
  auto c = small_config();
  c.task = Task::ranking;
  c.positive_threshold = 3;
  Trainer t(s.bundle, s.graph, c, VariantFlags{});
  const auto m = t.train_epoch();
  CHECK(std::isfinite(m.train_loss));
  CHECK(std::isfinite(m.val_logloss));
  CHECK(m.val_objective == m.val_logloss);
  CHECK(t.params().values().all_finite());
}

TEST_CASE("no parameter becomes non-finite over 100 epochs") {
  Small s;
  auto c = small_config();
  c.max_epochs = 100;
  c.patience = 1000;
  c.learning_rate = 5e-4;
  Trainer t(s.bundle, s.graph, c, VariantFlags{});
  for (int e = 0; e < 100; ++e) {
    const auto m = t.train_epoch();
    REQUIRE(std::isfinite(m.train_loss));
  }
  CHECK(t.params().values().all_finite());
}

TEST_CASE("train loss decreases over the first epochs on learnable data") {
  SyntheticSpec spec;
  spec.users = 30;
  spec.items = 40;
  spec.seed = 4;
  auto data = make_synthetic(spec);
  const auto bundle = split_dataset(data.ratings, data.trust, 0.6, 4);
  const auto graph = build_graph(bundle, 1);
  auto c = small_config();
  c.dim = 16;
  c.learning_rate = 5e-4;
  c.K = 4;
  c.batch_size = 16;
  Trainer t(bundle, graph, c, VariantFlags{});
  double prev = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 5; ++e) {
    const auto m = t.train_epoch();
    CHECK(m.train_loss < prev);
    prev = m.train_loss;
  }
}
