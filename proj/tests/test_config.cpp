#include <doctest.h>

#include "gdsrec/config.hpp"

using namespace gdsrec;

TEST_CASE("config round trip") {
  RunConfig c;
  c.ratings_path = "data/ratings.txt";
  c.trust_path = "data/trust.txt";
  c.duplicates = DuplicatePolicy::last_wins;
  c.train_fraction = 0.8;
  c.split_seed = 77;
  c.train.dim = 32;
  c.train.K = 5;
  c.train.delta = 2;
  c.train.learning_rate = 1e-4;
  c.train.task = Task::ranking;
  c.train.positive_threshold = 3;
  c.train.exec = Exec::serial;
  c.flags = VariantFlags::from_variant("rc+rd");
  c.flags.attention = AttentionMode::max;
  c.flags.alpha = 0.2;
  c.out_dir = "runs/a";
  c.clamp_predictions = true;
  c.sweep.alpha = {0, 0.2, 0.4};
  c.sweep.delta = {0, 1, 2, 3};
  c.sweep.variants = {"rc", "sn", "rd"};
  c.sweep.parallel_cells = true;

  const auto text = serialize_config(c);
  const auto back = parse_config(text);
  CHECK(back == c);
  CHECK(serialize_config(back) == text);
  CHECK(parse_config(serialize_config(RunConfig{})) == RunConfig{});
}

TEST_CASE("partial config keeps defaults") {
  const auto c = parse_config(R"({"train": {"D": 16}, "model": {"variant": "sn"}})");
  CHECK(c.train.dim == 16);
  CHECK(c.train.K == TrainConfig{}.K);
  CHECK(c.flags.sn_off);
  CHECK(c.train_fraction == 0.6);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_config("{"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(R"({"trian": {}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(R"({"train": {"dim": 4}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(R"({"train": {"D": "big"}})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(R"({"model": {"attention": "min"}})"), std::invalid_argument);
  RunConfig c;
  c.train_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.sweep.variants = {"zz"};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("off-grid values are reported, not rejected") {
  RunConfig c;
  c.train.dim = 6;
  c.sweep.delta = {5};
  CHECK_NOTHROW(c.validate());
  CHECK(c.off_grid().size() == 2);
}
