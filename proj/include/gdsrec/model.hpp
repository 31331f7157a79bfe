#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "gdsrec/data.hpp"
#include "gdsrec/exec.hpp"
#include "gdsrec/graph.hpp"

namespace gdsrec {

using Vec = Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;

enum class AttentionMode { softmax, uniform_avg, max };

std::string_view to_string(AttentionMode mode);
AttentionMode parse_attention(std::string_view name);

/// Ablation switches. The named variants are:
///   rc  -> social weights become 1/|N(u)|
///   sn  -> the social term is dropped from the final preference rating
///   rd  -> raw ratings (1..5) index the difference table instead of levels
struct VariantFlags {
  bool rc_off = false;
  bool sn_off = false;
  bool rd_raw = false;
  AttentionMode attention = AttentionMode::softmax;
  double alpha = 1.0;

  /// "base", "rc", "sn" or "rd".
  static VariantFlags from_variant(std::string_view name);
  std::string variant_name() const;

  friend bool operator==(const VariantFlags&, const VariantFlags&) = default;
};

struct ModelShape {
  Index num_users = 0;
  Index num_items = 0;
  int dim = 0;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Every learnable array. The first three are embedding tables (row-sparse
/// gradients); the rest are dense network weights.
enum class Group : int {
  user_embed,
  item_embed,
  diff_embed,
  enc_user_w1, enc_user_b1, enc_user_w2, enc_user_b2,
  enc_item_w1, enc_item_b1, enc_item_w2, enc_item_b2,
  att_user_w1, att_user_b1, att_user_w2, att_user_b2,
  att_item_w1, att_item_b1, att_item_w2, att_item_b2,
  agg_user_w, agg_user_b,
  agg_item_w, agg_item_b,
  head_w1, head_b1, head_w2, head_b2, head_w,
  count_
};

inline constexpr std::size_t kNumGroups = static_cast<std::size_t>(Group::count_);

struct GroupInfo {
  std::string_view name;
  bool table = false;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;  ///< into the table or dense storage
  std::size_t size() const noexcept { return rows * cols; }
};

class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(ModelShape shape);

  const GroupInfo& operator[](Group g) const { return groups_[static_cast<std::size_t>(g)]; }
  const std::array<GroupInfo, kNumGroups>& groups() const noexcept { return groups_; }
  std::size_t table_size() const noexcept { return table_size_; }
  std::size_t dense_size() const noexcept { return dense_size_; }
  const ModelShape& shape() const noexcept { return shape_; }

 private:
  ModelShape shape_;
  std::array<GroupInfo, kNumGroups> groups_{};
  std::size_t table_size_ = 0;
  std::size_t dense_size_ = 0;
};

/// Flat storage shaped by a ParamLayout. Used for parameters, gradients and
/// optimizer accumulators alike.
struct ParamBuffer {
  std::vector<double> tables;
  std::vector<double> dense;

  static ParamBuffer zeros(const ParamLayout& layout);
  void set_zero();
  std::span<double> group(const ParamLayout& layout, Group g);
  std::span<const double> group(const ParamLayout& layout, Group g) const;
  bool all_finite() const;

  friend bool operator==(const ParamBuffer&, const ParamBuffer&) = default;
};

class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ModelShape shape);

  /// Every array drawn from U(-1/sqrt(D), 1/sqrt(D)).
  static ModelParams initialized(ModelShape shape, std::uint64_t seed);

  const ParamLayout& layout() const noexcept { return layout_; }
  const ModelShape& shape() const noexcept { return layout_.shape(); }
  int dim() const noexcept { return layout_.shape().dim; }

  ParamBuffer& values() noexcept { return values_; }
  const ParamBuffer& values() const noexcept { return values_; }

  ConstMatMap mat(Group g) const;
  MatMap mat(Group g);
  ConstVecMap vec(Group g) const;
  VecMap vec(Group g);
  ConstVecMap row(Group table, Index r) const;

  void zero_prediction_head();

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.shape() == b.shape() && a.values_ == b.values_;
  }

 private:
  ParamLayout layout_;
  ParamBuffer values_;
};

// ---------------------------------------------------------------------------
// Forward operations

/// L_U(q_item (+) s_row).
Vec encode_user_interaction(const ModelParams& p, Index item, int diff_row);
/// L_I(p_user (+) s_row).
Vec encode_item_interaction(const ModelParams& p, Index user, int diff_row);

/// Normalized attention weights from pre-softmax scores.
///   softmax      -> softmax(scores)
///   uniform_avg  -> 1/n each
///   max          -> every weight equals max(softmax(scores))
/// Requires a non-empty score list.
std::vector<double> attention_weights(std::span<const double> scores, AttentionMode mode);

/// Pre-softmax score w2 . ReLU(W1 [x (+) context] + b1) + b2 of the user-side
/// (or item-side) attention net.
double attention_score(const ModelParams& p, bool user_side, const Vec& interaction, const Vec& context);

/// Latent offset h_u over the sampled item neighbors of `user`.
Vec user_offset(const ModelParams& p, const DecentralizedGraph& g, const VariantFlags& flags,
                const EpochSample& sample, Index user);
/// Latent offset h_v over the sampled raters of `item`.
Vec item_offset(const ModelParams& p, const DecentralizedGraph& g, const VariantFlags& flags,
                const EpochSample& sample, Index item);

/// Three-layer head: w . tanh(W2 tanh(W1 [h_u (+) h_v] + b1) + b2).
double preference_rating(const ModelParams& p, const Vec& h_user, const Vec& h_item);

/// Social weights over the kept neighbor positions of `user`: T/sum(T), or
/// uniform when `rc_off`.
std::vector<double> kept_social_weights(const DecentralizedGraph& g, Index user,
                                        std::span<const std::uint32_t> kept, bool rc_off);

struct PredictContext {
  const ModelParams& params;
  const DecentralizedGraph& graph;
  const DatasetBundle& bundle;
  const VariantFlags& flags;
  const EpochSample& sample;
};

/// (alpha/2)(E(u)+E(v)), with cold-start averages already folded into the bundle.
double baseline_rating(const PredictContext& ctx, Index user, Index item);
/// Final preference term f(u, v).
double preference_term(const PredictContext& ctx, Index user, Index item);
/// (alpha/2)(E(u)+E(v)) + f(u,v).
double predict(const PredictContext& ctx, Index user, Index item);
double sigmoid(double x);
double predict_ranking_score(const PredictContext& ctx, Index user, Index item);

/// Precomputes every user and item offset once, then predicts pairs cheaply.
/// Results match `predict` on the same context.
class OffsetCache {
 public:
  OffsetCache(const PredictContext& ctx, Exec exec = Exec::parallel);
  double predict(Index user, Index item) const;
  const Vec& user(Index u) const { return users_[static_cast<std::size_t>(u)]; }
  const Vec& item(Index v) const { return items_[static_cast<std::size_t>(v)]; }

 private:
  PredictContext ctx_;
  std::vector<Vec> users_;
  std::vector<Vec> items_;
};

// ---------------------------------------------------------------------------
// Checkpoints

struct Provenance {
  std::uint64_t dataset_hash = 0;
  int delta = 1;
  std::size_t K = 0;
  std::uint64_t split_seed = 0;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::string task = "rating";
  int positive_threshold = 4;
};

struct Checkpoint {
  ModelParams params;
  VariantFlags flags;
  Provenance provenance;
  std::string rng_state;
  double rmsprop_decay = 0.99;
  double rmsprop_epsilon = 1e-8;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gdsrec
