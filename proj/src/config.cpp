#include "gdsrec/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

namespace gdsrec {

using nlohmann::json;

namespace {

const std::set<std::string> kSections = {"data", "train", "model", "output", "sweep"};

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw std::invalid_argument(fmt::format("config: '{}' must be an object", where));
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key)) throw std::invalid_argument(fmt::format("config: unknown key '{}{}'", where, key));
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must lie in (0,1)");
  if (!std::isfinite(flags.alpha)) throw std::invalid_argument("alpha must be finite");
  for (const auto& v : sweep.variants) (void)VariantFlags::from_variant(v);
  for (const auto& a : sweep.attention) (void)parse_attention(a);
  for (int d : sweep.delta)
    if (d < 0) throw std::invalid_argument("sweep delta must be non-negative");
  for (auto k : sweep.K)
    if (k < 1) throw std::invalid_argument("sweep K must be at least 1");
  if (out_dir.empty()) throw std::invalid_argument("output directory must be set");
}

std::vector<std::string> RunConfig::off_grid() const {
  auto notes = train.off_grid();
  if (train_fraction != 0.6 && train_fraction != 0.8)
    notes.push_back(fmt::format("train_fraction {} is outside {{0.6,0.8}}", train_fraction));
  for (int d : sweep.delta)
    if (d > 3) notes.push_back(fmt::format("sweep delta {} is outside {{0,1,2,3}}", d));
  for (double a : sweep.alpha)
    if (a < 0.0 || a > 1.6) notes.push_back(fmt::format("sweep alpha {} is outside [0,1.6]", a));
  return notes;
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(fmt::format("config: {}", e.what()));
  }
  reject_unknown(root, kSections, "");
  RunConfig c;
  try {
    if (root.contains("data")) {
      const auto& d = root["data"];
      reject_unknown(d, {"ratings", "trust", "duplicates", "train_fraction", "split_seed"}, "data.");
      read(d, "ratings", c.ratings_path);
      read(d, "trust", c.trust_path);
      read(d, "train_fraction", c.train_fraction);
      read(d, "split_seed", c.split_seed);
      if (d.contains("duplicates")) {
        const auto p = d["duplicates"].get<std::string>();
        if (p == "reject") c.duplicates = DuplicatePolicy::reject;
        else if (p == "last_wins") c.duplicates = DuplicatePolicy::last_wins;
        else throw std::invalid_argument(fmt::format("config: unknown duplicate policy '{}'", p));
      }
    }
    if (root.contains("train")) {
      const auto& t = root["train"];
      reject_unknown(t,
                     {"D", "K", "delta", "learning_rate", "batch_size", "task", "F", "patience", "max_epochs", "seed",
                      "rmsprop_decay", "rmsprop_epsilon", "reduction_chunks", "parallel"},
                     "train.");
      read(t, "D", c.train.dim);
      read(t, "K", c.train.K);
      read(t, "delta", c.train.delta);
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "batch_size", c.train.batch_size);
      if (t.contains("task")) c.train.task = parse_task(t["task"].get<std::string>());
      read(t, "F", c.train.positive_threshold);
      read(t, "patience", c.train.patience);
      read(t, "max_epochs", c.train.max_epochs);
      read(t, "seed", c.train.seed);
      read(t, "rmsprop_decay", c.train.rmsprop_decay);
      read(t, "rmsprop_epsilon", c.train.rmsprop_epsilon);
      read(t, "reduction_chunks", c.train.reduction_chunks);
      if (t.contains("parallel")) c.train.exec = t["parallel"].get<bool>() ? Exec::parallel : Exec::serial;
    }
    if (root.contains("model")) {
      const auto& m = root["model"];
      reject_unknown(m, {"variant", "attention", "alpha"}, "model.");
      if (m.contains("variant")) {
        const auto keep = c.flags;
        c.flags = VariantFlags::from_variant(m["variant"].get<std::string>());
        c.flags.attention = keep.attention;
        c.flags.alpha = keep.alpha;
      }
      if (m.contains("attention")) c.flags.attention = parse_attention(m["attention"].get<std::string>());
      read(m, "alpha", c.flags.alpha);
    }
    if (root.contains("output")) {
      const auto& o = root["output"];
      reject_unknown(o, {"dir", "clamp_predictions"}, "output.");
      read(o, "dir", c.out_dir);
      read(o, "clamp_predictions", c.clamp_predictions);
    }
    if (root.contains("sweep")) {
      const auto& s = root["sweep"];
      reject_unknown(s, {"variants", "attention", "alpha", "delta", "K", "parallel_cells"}, "sweep.");
      read(s, "variants", c.sweep.variants);
      read(s, "attention", c.sweep.attention);
      read(s, "alpha", c.sweep.alpha);
      read(s, "delta", c.sweep.delta);
      read(s, "K", c.sweep.K);
      read(s, "parallel_cells", c.sweep.parallel_cells);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(fmt::format("config: {}", e.what()));
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open config file {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& c) {
  json root;
  root["data"] = {{"ratings", c.ratings_path},
                  {"trust", c.trust_path},
                  {"duplicates", c.duplicates == DuplicatePolicy::reject ? "reject" : "last_wins"},
                  {"train_fraction", c.train_fraction},
                  {"split_seed", c.split_seed}};
  root["train"] = {{"D", c.train.dim},
                   {"K", c.train.K},
                   {"delta", c.train.delta},
                   {"learning_rate", c.train.learning_rate},
                   {"batch_size", c.train.batch_size},
                   {"task", std::string(to_string(c.train.task))},
                   {"F", c.train.positive_threshold},
                   {"patience", c.train.patience},
                   {"max_epochs", c.train.max_epochs},
                   {"seed", c.train.seed},
                   {"rmsprop_decay", c.train.rmsprop_decay},
                   {"rmsprop_epsilon", c.train.rmsprop_epsilon},
                   {"reduction_chunks", c.train.reduction_chunks},
                   {"parallel", c.train.exec == Exec::parallel}};
  root["model"] = {{"variant", c.flags.variant_name()},
                   {"attention", std::string(to_string(c.flags.attention))},
                   {"alpha", c.flags.alpha}};
  root["output"] = {{"dir", c.out_dir}, {"clamp_predictions", c.clamp_predictions}};
  root["sweep"] = {{"variants", c.sweep.variants}, {"attention", c.sweep.attention}, {"alpha", c.sweep.alpha},
                   {"delta", c.sweep.delta},       {"K", c.sweep.K},                 {"parallel_cells", c.sweep.parallel_cells}};
  return root.dump(2) + "\n";
}

}  // namespace gdsrec
