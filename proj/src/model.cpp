#include "gdsrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "gdsrec/hash.hpp"
#include "gdsrec/kernels.hpp"

namespace gdsrec {

std::string_view to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::softmax: return "softmax";
    case AttentionMode::uniform_avg: return "avg";
    case AttentionMode::max: return "max";
  }
  return "softmax";
}

AttentionMode parse_attention(std::string_view name) {
  if (name == "softmax") return AttentionMode::softmax;
  if (name == "avg" || name == "uniform_avg") return AttentionMode::uniform_avg;
  if (name == "max") return AttentionMode::max;
  throw std::invalid_argument(fmt::format("unknown attention mode '{}'", name));
}

VariantFlags VariantFlags::from_variant(std::string_view name) {
  VariantFlags f;
  if (name == "base") return f;
  // '+'-joined combinations such as "rc+sn" are accepted
  std::size_t start = 0;
  while (start <= name.size()) {
    const auto end = std::min(name.find('+', start), name.size());
    const auto part = name.substr(start, end - start);
    if (part == "rc") f.rc_off = true;
    else if (part == "sn") f.sn_off = true;
    else if (part == "rd") f.rd_raw = true;
    else throw std::invalid_argument(fmt::format("unknown variant '{}'", name));
    start = end + 1;
  }
  return f;
}

std::string VariantFlags::variant_name() const {
  std::string name;
  auto add = [&](const char* s) { name += name.empty() ? s : std::string("+") + s; };
  if (rc_off) add("rc");
  if (sn_off) add("sn");
  if (rd_raw) add("rd");
  return name.empty() ? "base" : name;
}

namespace {

constexpr std::array<std::string_view, kNumGroups> kGroupNames = {
    "user_embed",  "item_embed",  "diff_embed",  "enc_user.W1", "enc_user.b1", "enc_user.W2",
    "enc_user.b2", "enc_item.W1", "enc_item.b1", "enc_item.W2", "enc_item.b2", "att_user.W1",
    "att_user.b1", "att_user.w2", "att_user.b2", "att_item.W1", "att_item.b1", "att_item.w2",
    "att_item.b2", "agg_user.W",  "agg_user.b",  "agg_item.W",  "agg_item.b",  "head.W1",
    "head.b1",     "head.W2",     "head.b2",     "head.w"};

}  // namespace

ParamLayout::ParamLayout(ModelShape shape) : shape_(shape) {
  if (shape.dim <= 0) throw std::invalid_argument("embedding size must be positive");
  const std::size_t d = static_cast<std::size_t>(shape.dim);
  auto set = [&](Group g, bool table, std::size_t rows, std::size_t cols) {
    auto& info = groups_[static_cast<std::size_t>(g)];
    info = {kGroupNames[static_cast<std::size_t>(g)], table, rows, cols, 0};
    auto& cursor = table ? table_size_ : dense_size_;
    info.offset = cursor;
    cursor += rows * cols;
  };
  set(Group::user_embed, true, static_cast<std::size_t>(shape.num_users), d);
  set(Group::item_embed, true, static_cast<std::size_t>(shape.num_items), d);
  set(Group::diff_embed, true, kNumLevels, d);
  for (auto [w1, b1, w2, b2] : {std::array{Group::enc_user_w1, Group::enc_user_b1, Group::enc_user_w2, Group::enc_user_b2},
                                std::array{Group::enc_item_w1, Group::enc_item_b1, Group::enc_item_w2, Group::enc_item_b2}}) {
    set(w1, false, d, 2 * d);
    set(b1, false, d, 1);
    set(w2, false, d, d);
    set(b2, false, d, 1);
  }
  for (auto [w1, b1, w2, b2] : {std::array{Group::att_user_w1, Group::att_user_b1, Group::att_user_w2, Group::att_user_b2},
                                std::array{Group::att_item_w1, Group::att_item_b1, Group::att_item_w2, Group::att_item_b2}}) {
    set(w1, false, d, 2 * d);
    set(b1, false, d, 1);
    set(w2, false, d, 1);
    set(b2, false, 1, 1);
  }
  set(Group::agg_user_w, false, d, d);
  set(Group::agg_user_b, false, d, 1);
  set(Group::agg_item_w, false, d, d);
  set(Group::agg_item_b, false, d, 1);
  set(Group::head_w1, false, d, 2 * d);
  set(Group::head_b1, false, d, 1);
  set(Group::head_w2, false, d, d);
  set(Group::head_b2, false, d, 1);
  set(Group::head_w, false, d, 1);
}

ParamBuffer ParamBuffer::zeros(const ParamLayout& layout) {
  return {std::vector<double>(layout.table_size(), 0.0), std::vector<double>(layout.dense_size(), 0.0)};
}

void ParamBuffer::set_zero() {
  std::fill(tables.begin(), tables.end(), 0.0);
  std::fill(dense.begin(), dense.end(), 0.0);
}

std::span<double> ParamBuffer::group(const ParamLayout& layout, Group g) {
  const auto& info = layout[g];
  auto& store = info.table ? tables : dense;
  return {store.data() + info.offset, info.size()};
}

std::span<const double> ParamBuffer::group(const ParamLayout& layout, Group g) const {
  const auto& info = layout[g];
  const auto& store = info.table ? tables : dense;
  return {store.data() + info.offset, info.size()};
}

bool ParamBuffer::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(tables.begin(), tables.end(), finite) && std::all_of(dense.begin(), dense.end(), finite);
}

ModelParams::ModelParams(ModelShape shape) : layout_(shape), values_(ParamBuffer::zeros(layout_)) {}

ModelParams ModelParams::initialized(ModelShape shape, std::uint64_t seed) {
  ModelParams p(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (const auto& info : p.layout_.groups()) {
    auto span = p.values_.group(p.layout_, static_cast<Group>(&info - p.layout_.groups().data()));
    for (auto& v : span) v = dist(rng);
  }
  return p;
}

ConstMatMap ModelParams::mat(Group g) const {
  const auto& info = layout_[g];
  return {values_.group(layout_, g).data(), static_cast<Eigen::Index>(info.rows), static_cast<Eigen::Index>(info.cols)};
}

MatMap ModelParams::mat(Group g) {
  const auto& info = layout_[g];
  return {values_.group(layout_, g).data(), static_cast<Eigen::Index>(info.rows), static_cast<Eigen::Index>(info.cols)};
}

ConstVecMap ModelParams::vec(Group g) const {
  auto s = values_.group(layout_, g);
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

VecMap ModelParams::vec(Group g) {
  auto s = values_.group(layout_, g);
  return {s.data(), static_cast<Eigen::Index>(s.size())};
}

ConstVecMap ModelParams::row(Group table, Index r) const {
  const auto& info = layout_[table];
  if (r < 0 || static_cast<std::size_t>(r) >= info.rows)
    throw std::out_of_range(fmt::format("{} row {} out of range", info.name, r));
  return {values_.tables.data() + info.offset + static_cast<std::size_t>(r) * info.cols,
          static_cast<Eigen::Index>(info.cols)};
}

void ModelParams::zero_prediction_head() {
  for (auto g : {Group::head_w1, Group::head_b1, Group::head_w2, Group::head_b2, Group::head_w})
    vec(g).setZero();
}

// ---------------------------------------------------------------------------

namespace {

Vec encode(const ModelParams& p, Group embed, Index entity, int diff_row, Group w1, Group b1, Group w2,
           Group b2) {
  const auto d = p.dim();
  Vec in(2 * d);
  in.head(d) = p.row(embed, entity);
  in.tail(d) = p.row(Group::diff_embed, diff_row);
  const Vec hidden = (p.mat(w1) * in + p.vec(b1)).cwiseMax(0.0);
  return p.mat(w2) * hidden + p.vec(b2);
}

}  // namespace

Vec encode_user_interaction(const ModelParams& p, Index item, int diff_row) {
  return encode(p, Group::item_embed, item, diff_row, Group::enc_user_w1, Group::enc_user_b1, Group::enc_user_w2,
                Group::enc_user_b2);
}

Vec encode_item_interaction(const ModelParams& p, Index user, int diff_row) {
  return encode(p, Group::user_embed, user, diff_row, Group::enc_item_w1, Group::enc_item_b1, Group::enc_item_w2,
                Group::enc_item_b2);
}

std::vector<double> attention_weights(std::span<const double> scores, AttentionMode mode) {
  if (scores.empty()) throw std::invalid_argument("attention over an empty neighborhood");
  const auto n = scores.size();
  std::vector<double> w(n);
  if (mode == AttentionMode::uniform_avg) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(n));
    return w;
  }
  const double top = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) total += (w[k] = std::exp(scores[k] - top));
  for (auto& v : w) v /= total;
  if (mode == AttentionMode::max) std::fill(w.begin(), w.end(), *std::max_element(w.begin(), w.end()));
  return w;
}

double attention_score(const ModelParams& p, bool user_side, const Vec& interaction, const Vec& context) {
  const auto d = p.dim();
  const Group w1 = user_side ? Group::att_user_w1 : Group::att_item_w1;
  const Group b1 = user_side ? Group::att_user_b1 : Group::att_item_b1;
  const Group w2 = user_side ? Group::att_user_w2 : Group::att_item_w2;
  const Group b2 = user_side ? Group::att_user_b2 : Group::att_item_b2;
  Vec in(2 * d);
  in << interaction, context;
  const Vec hidden = (p.mat(w1) * in + p.vec(b1)).cwiseMax(0.0);
  return p.vec(w2).dot(hidden) + p.vec(b2)(0);
}

Vec user_offset(const ModelParams& p, const DecentralizedGraph& g, const VariantFlags& flags,
                const EpochSample& sample, Index user) {
  return kernels::offset_forward(p, g, flags, sample, kernels::Side::user, user, nullptr);
}

Vec item_offset(const ModelParams& p, const DecentralizedGraph& g, const VariantFlags& flags,
                const EpochSample& sample, Index item) {
  return kernels::offset_forward(p, g, flags, sample, kernels::Side::item, item, nullptr);
}

double preference_rating(const ModelParams& p, const Vec& h_user, const Vec& h_item) {
  return kernels::head_forward(p, h_user, h_item, nullptr);
}

std::vector<double> kept_social_weights(const DecentralizedGraph& g, Index user, std::span<const std::uint32_t> kept,
                                        bool rc_off) {
  const auto& row = g.social_view.at(static_cast<std::size_t>(user));
  if (rc_off) return std::vector<double>(kept.size(), 1.0 / static_cast<double>(kept.size()));
  std::vector<int> t(kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) t[k] = row[kept[k]].coefficient;
  return social_weights(t);
}

namespace {

template <class UserOffset>
double combine_social(const PredictContext& ctx, Index user, const Vec& h_item, double own, UserOffset&& offset_of) {
  const auto kept = ctx.sample.user_social(user);
  if (ctx.flags.sn_off || kept.empty()) return own;
  const auto weights = kept_social_weights(ctx.graph, user, kept, ctx.flags.rc_off);
  const auto& row = ctx.graph.social_view[static_cast<std::size_t>(user)];
  double social = 0.0;
  for (std::size_t k = 0; k < kept.size(); ++k)
    social += weights[k] * preference_rating(ctx.params, offset_of(row[kept[k]].user), h_item);
  return 0.5 * (own + social);
}

}  // namespace

double baseline_rating(const PredictContext& ctx, Index user, Index item) {
  return 0.5 * ctx.flags.alpha *
         (average_rating(ctx.bundle, true, user) + average_rating(ctx.bundle, false, item));
}

double preference_term(const PredictContext& ctx, Index user, Index item) {
  const Vec h_user = user_offset(ctx.params, ctx.graph, ctx.flags, ctx.sample, user);
  const Vec h_item = item_offset(ctx.params, ctx.graph, ctx.flags, ctx.sample, item);
  const double own = preference_rating(ctx.params, h_user, h_item);
  return combine_social(ctx, user, h_item, own, [&](Index k) {
    return user_offset(ctx.params, ctx.graph, ctx.flags, ctx.sample, k);
  });
}

double predict(const PredictContext& ctx, Index user, Index item) {
  return baseline_rating(ctx, user, item) + preference_term(ctx, user, item);
}

double sigmoid(double x) {
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  // keep the score strictly inside (0,1) even where exp saturates
  return std::clamp(s, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

double predict_ranking_score(const PredictContext& ctx, Index user, Index item) {
  return sigmoid(predict(ctx, user, item));
}

OffsetCache::OffsetCache(const PredictContext& ctx, Exec exec) : ctx_(ctx) {
  const auto nu = static_cast<std::int64_t>(ctx.graph.num_users());
  const auto ni = static_cast<std::int64_t>(ctx.graph.num_items());
  users_.resize(static_cast<std::size_t>(nu));
  items_.resize(static_cast<std::size_t>(ni));
  auto fill_user = [&](std::int64_t u) {
    users_[static_cast<std::size_t>(u)] = user_offset(ctx.params, ctx.graph, ctx.flags, ctx.sample, static_cast<Index>(u));
  };
  auto fill_item = [&](std::int64_t v) {
    items_[static_cast<std::size_t>(v)] = item_offset(ctx.params, ctx.graph, ctx.flags, ctx.sample, static_cast<Index>(v));
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 32)
    for (std::int64_t u = 0; u < nu; ++u) fill_user(u);
#pragma omp parallel for schedule(dynamic, 32)
    for (std::int64_t v = 0; v < ni; ++v) fill_item(v);
  } else {
    for (std::int64_t u = 0; u < nu; ++u) fill_user(u);
    for (std::int64_t v = 0; v < ni; ++v) fill_item(v);
  }
}

double OffsetCache::predict(Index user, Index item) const {
  const Vec& h_item = this->item(item);
  const double own = preference_rating(ctx_.params, this->user(user), h_item);
  const double f = combine_social(ctx_, user, h_item, own, [&](Index k) -> const Vec& { return this->user(k); });
  return baseline_rating(ctx_, user, item) + f;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic line, JSON header line, then raw little-endian doubles
// for the table block followed by the dense block.

namespace {
constexpr const char* kCheckpointMagic = "gdsrec-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto& layout = ckpt.params.layout();
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["shape"] = {{"num_users", layout.shape().num_users},
                     {"num_items", layout.shape().num_items},
                     {"D", layout.shape().dim}};
  auto& groups = header["groups"] = nlohmann::json::array();
  for (const auto& g : layout.groups())
    groups.push_back({{"name", g.name}, {"rows", g.rows}, {"cols", g.cols}, {"table", g.table}});
  header["flags"] = {{"rc_off", ckpt.flags.rc_off},
                     {"sn_off", ckpt.flags.sn_off},
                     {"rd_raw", ckpt.flags.rd_raw},
                     {"attention", to_string(ckpt.flags.attention)},
                     {"alpha", ckpt.flags.alpha}};
  const auto& pv = ckpt.provenance;
  header["provenance"] = {{"dataset_hash", hex64(pv.dataset_hash)},
                          {"delta", pv.delta},
                          {"K", pv.K},
                          {"D", layout.shape().dim},
                          {"split_seed", pv.split_seed},
                          {"seed", pv.seed},
                          {"epoch", pv.epoch},
                          {"task", pv.task},
                          {"F", pv.positive_threshold}};
  header["optimizer"] = {{"name", "rmsprop"}, {"decay", ckpt.rmsprop_decay}, {"epsilon", ckpt.rmsprop_epsilon}};
  header["rng_state"] = ckpt.rng_state;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << header.dump() << '\n';
  const auto& v = ckpt.params.values();
  out.write(reinterpret_cast<const char*>(v.tables.data()), static_cast<std::streamsize>(v.tables.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(v.dense.data()), static_cast<std::streamsize>(v.dense.size() * sizeof(double)));
  if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw ValidationError(fmt::format("'{}' is not a checkpoint", path.string()));
  if (version != kCheckpointVersion) throw ValidationError(fmt::format("unsupported checkpoint version {}", version));
  in.ignore(1);
  std::string line;
  std::getline(in, line);
  const auto header = nlohmann::json::parse(line);

  Checkpoint ckpt;
  const ModelShape shape{header["shape"]["num_users"].get<Index>(), header["shape"]["num_items"].get<Index>(),
                         header["shape"]["D"].get<int>()};
  ckpt.params = ModelParams(shape);
  const auto& layout = ckpt.params.layout();
  const auto& groups = header["groups"];
  if (groups.size() != kNumGroups) throw ValidationError("checkpoint: parameter group count mismatch");
  for (std::size_t k = 0; k < kNumGroups; ++k) {
    const auto& g = layout.groups()[k];
    if (groups[k]["name"].get<std::string>() != g.name || groups[k]["rows"].get<std::size_t>() != g.rows ||
        groups[k]["cols"].get<std::size_t>() != g.cols)
      throw ValidationError(fmt::format("checkpoint: group '{}' shape mismatch", g.name));
  }
  const auto& f = header["flags"];
  ckpt.flags.rc_off = f["rc_off"].get<bool>();
  ckpt.flags.sn_off = f["sn_off"].get<bool>();
  ckpt.flags.rd_raw = f["rd_raw"].get<bool>();
  ckpt.flags.attention = parse_attention(f["attention"].get<std::string>());
  ckpt.flags.alpha = f["alpha"].get<double>();
  const auto& pv = header["provenance"];
  ckpt.provenance.dataset_hash = std::stoull(pv["dataset_hash"].get<std::string>(), nullptr, 16);
  ckpt.provenance.delta = pv["delta"].get<int>();
  ckpt.provenance.K = pv["K"].get<std::size_t>();
  ckpt.provenance.split_seed = pv["split_seed"].get<std::uint64_t>();
  ckpt.provenance.seed = pv["seed"].get<std::uint64_t>();
  ckpt.provenance.epoch = pv["epoch"].get<int>();
  ckpt.provenance.task = pv["task"].get<std::string>();
  ckpt.provenance.positive_threshold = pv["F"].get<int>();
  ckpt.rmsprop_decay = header["optimizer"]["decay"].get<double>();
  ckpt.rmsprop_epsilon = header["optimizer"]["epsilon"].get<double>();
  ckpt.rng_state = header["rng_state"].get<std::string>();

  auto& v = ckpt.params.values();
  in.read(reinterpret_cast<char*>(v.tables.data()), static_cast<std::streamsize>(v.tables.size() * sizeof(double)));
  in.read(reinterpret_cast<char*>(v.dense.data()), static_cast<std::streamsize>(v.dense.size() * sizeof(double)));
  if (!in) throw ValidationError("checkpoint: truncated parameter block");
  return ckpt;
}

}  // namespace gdsrec
