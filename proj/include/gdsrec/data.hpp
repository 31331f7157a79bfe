#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace gdsrec {

using Index = std::int32_t;

/// Raised for malformed input files; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bidirectional map between opaque external identifiers and dense indices.
class IdMap {
 public:
  Index intern(const std::string& external);
  /// -1 when absent.
  Index find(const std::string& external) const;
  const std::string& external(Index idx) const { return names_.at(static_cast<std::size_t>(idx)); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::unordered_map<std::string, Index> index_;
  std::vector<std::string> names_;
};

struct RatingRecord {
  Index user = 0;
  Index item = 0;
  int rating = 0;

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

struct TrustEdge {
  Index src = 0;
  Index dst = 0;
  /// True when either endpoint has no rating in the ratings file.
  bool unrated_endpoint = false;

  friend bool operator==(const TrustEdge&, const TrustEdge&) = default;
};

enum class DuplicatePolicy { reject, last_wins };

/// Ratings plus the identifier maps produced while reading them.
struct RatingTable {
  std::vector<RatingRecord> records;
  IdMap users;
  IdMap items;
};

struct TrustTable {
  std::vector<TrustEdge> edges;
  std::size_t self_loops_dropped = 0;
  std::size_t duplicates_dropped = 0;
  std::size_t unrated_endpoints = 0;
};

/// Reads `<user><sep><item><sep><rating>` lines. The separator is a comma or a
/// tab, detected from the first data line. Blank lines and lines starting with
/// '#' are skipped.
RatingTable load_ratings(const std::filesystem::path& path,
                         DuplicatePolicy duplicates = DuplicatePolicy::reject);

/// Reads `<src><sep><dst>` lines. Users unknown to `ratings` are appended to
/// its user map so they can take part in the social graph.
TrustTable load_trust(const std::filesystem::path& path, RatingTable& ratings);

struct ItemRating {
  Index item = 0;
  int rating = 0;
};

struct UserRating {
  Index user = 0;
  int rating = 0;
};

/// Indexed splits plus the statistics derived from the training split.
/// Immutable once built.
struct DatasetBundle {
  Index num_users = 0;  ///< includes users only present in the trust file
  Index num_items = 0;
  Index num_rating_users = 0;

  std::vector<RatingRecord> train;
  std::vector<RatingRecord> validation;
  std::vector<RatingRecord> test;

  std::vector<double> user_avg;  ///< E(u); global mean for users without train ratings
  std::vector<double> item_avg;  ///< E(v); global mean for items without train ratings
  std::vector<std::uint32_t> user_train_count;
  std::vector<std::uint32_t> item_train_count;
  double global_mean = 0.0;

  /// Train ratings per user / item, sorted by the counterpart index.
  std::vector<std::vector<ItemRating>> items_of_user;
  std::vector<std::vector<UserRating>> users_of_item;
  /// Directed social neighbors per user, sorted and deduplicated.
  std::vector<std::vector<Index>> social;

  std::uint64_t split_seed = 0;
  double train_fraction = 0.0;

  std::vector<std::string> user_names;
  std::vector<std::string> item_names;

  std::size_t num_ratings() const noexcept { return train.size() + validation.size() + test.size(); }
  std::size_t num_relations() const noexcept;
};

/// Seeded global shuffle; the first round(fraction * n) records go to train and
/// the holdout alternates validation/test.
DatasetBundle split_dataset(const RatingTable& ratings, const TrustTable& trust,
                            double train_fraction, std::uint64_t seed);

/// E(u) when `is_user`, otherwise E(v). Entities without train ratings fall
/// back to the global mean.
double average_rating(const DatasetBundle& bundle, bool is_user, Index entity);

/// Versioned text serialization. `delta` is recorded in the header.
void save_bundle(const DatasetBundle& bundle, int delta, const std::filesystem::path& path);
DatasetBundle load_bundle(const std::filesystem::path& path, int* delta_out = nullptr);

/// Stable 64-bit fingerprint over the split contents and dimensions.
std::uint64_t dataset_hash(const DatasetBundle& bundle);

}  // namespace gdsrec
