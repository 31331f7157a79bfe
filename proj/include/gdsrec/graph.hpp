#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gdsrec/data.hpp"
#include "gdsrec/exec.hpp"

namespace gdsrec {

/// Number of quantized rating-difference levels (and of raw rating values).
inline constexpr int kNumLevels = 5;

/// ceil(|rating - item_avg|): the user-side deviation level.
int user_level(int rating, double item_avg);
/// ceil(|rating - user_avg|): the item-side deviation level.
int item_level(int rating, double user_avg);

struct UserEdge {
  Index item = 0;
  std::uint8_t level = 0;
  std::uint8_t rating = 0;
};

struct ItemEdge {
  Index user = 0;
  std::uint8_t level = 0;
  std::uint8_t rating = 0;
};

struct SocialEdge {
  Index user = 0;
  int coefficient = 1;  ///< T >= 1
  double weight = 0.0;  ///< T / sum(T) over the full neighbor list
};

/// Interaction graph with ratings replaced by deviation levels, plus the
/// social graph weighted by relationship coefficients. Built from train
/// ratings only; immutable afterwards.
struct DecentralizedGraph {
  int delta = 1;
  std::vector<std::vector<UserEdge>> user_view;
  std::vector<std::vector<ItemEdge>> item_view;
  std::vector<std::vector<SocialEdge>> social_view;

  Index num_users() const noexcept { return static_cast<Index>(user_view.size()); }
  Index num_items() const noexcept { return static_cast<Index>(item_view.size()); }
};

/// 1 + number of co-rated train items whose ratings differ by at most `delta`.
int relation_coefficient(const DatasetBundle& bundle, Index ui, Index uj, int delta);

/// T_k / sum(T); empty when the user has no social neighbors.
std::vector<double> social_weights(std::span<const int> coefficients);
std::vector<double> social_weights(const DecentralizedGraph& graph, Index user);

DecentralizedGraph build_graph(const DatasetBundle& bundle, int delta, Exec exec = Exec::parallel);

void save_graph(const DecentralizedGraph& graph, std::uint64_t dataset_hash,
                const std::filesystem::path& path);
/// Throws when the stored dataset hash differs from `expected_hash`.
DecentralizedGraph load_graph(const std::filesystem::path& path, std::uint64_t expected_hash);

// ---------------------------------------------------------------------------
// Node dropout

struct NeighborSample {
  Index node = 0;
  /// Positions into the node's neighbor list, ascending; size min(K, degree).
  std::vector<std::uint32_t> kept;
  std::uint64_t sample_seed = 0;
};

/// Uniform size-min(K, degree) subset without replacement. Degree <= K keeps
/// every neighbor in order.
NeighborSample sample_neighbors(Index node, std::size_t degree, std::size_t K, std::uint64_t seed);

enum class NeighborKind : std::uint64_t { user_items = 1, item_users = 2, user_social = 3 };

/// Kept neighbor positions for every node in one epoch. A default-built
/// sample (or `full()`) keeps everything, which is what evaluation uses.
class EpochSample {
 public:
  static EpochSample full(const DecentralizedGraph& graph);
  /// Draws per-node samples with seeds derived from (seed, epoch, kind, node).
  static EpochSample draw(const DecentralizedGraph& graph, std::size_t K, std::uint64_t seed,
                          std::uint64_t epoch, Exec exec = Exec::parallel);

  std::span<const std::uint32_t> user_items(Index u) const { return pick(user_items_, deg_ui_, u); }
  std::span<const std::uint32_t> item_users(Index v) const { return pick(item_users_, deg_iu_, v); }
  std::span<const std::uint32_t> user_social(Index u) const { return pick(user_social_, deg_us_, u); }

  bool is_full() const noexcept { return full_; }
  std::size_t cap() const noexcept { return cap_; }

 private:
  std::span<const std::uint32_t> pick(const std::vector<std::vector<std::uint32_t>>& rows,
                                      const std::vector<std::uint32_t>& degree, Index node) const {
    const auto n = static_cast<std::size_t>(node);
    if (full_) return {iota_.data(), degree[n]};
    return rows[n];
  }

  bool full_ = true;
  std::size_t cap_ = 0;
  std::vector<std::uint32_t> iota_;
  std::vector<std::uint32_t> deg_ui_, deg_iu_, deg_us_;
  std::vector<std::vector<std::uint32_t>> user_items_, item_users_, user_social_;
};

}  // namespace gdsrec
