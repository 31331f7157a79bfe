#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gdsrec/data.hpp"
#include "gdsrec/graph.hpp"
#include "gdsrec/model.hpp"

namespace gdsrec::testing {

using Triple = std::tuple<std::string, std::string, int>;

inline RatingTable table_from(const std::vector<Triple>& triples) {
  RatingTable t;
  for (const auto& [u, i, r] : triples) t.records.push_back({t.users.intern(u), t.items.intern(i), r});
  return t;
}

inline TrustTable trust_from(const std::vector<std::pair<std::string, std::string>>& pairs, RatingTable& t) {
  TrustTable trust;
  for (const auto& [a, b] : pairs) trust.edges.push_back({t.users.intern(a), t.users.intern(b), false});
  return trust;
}

/// Dense-ish random rating matrix over n users and m items with random
/// directed trust; every user rates at least one item.
inline std::pair<RatingTable, TrustTable> random_tables(std::mt19937_64& rng, int n, int m, double density,
                                                         double trust_p) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> rating(1, 5);
  std::uniform_int_distribution<int> any_item(0, m - 1);
  RatingTable t;
  for (int v = 0; v < m; ++v) t.items.intern("i" + std::to_string(v));
  for (int u = 0; u < n; ++u) {
    const Index uid = t.users.intern("u" + std::to_string(u));
    const int forced = any_item(rng);
    for (int v = 0; v < m; ++v)
      if (v == forced || coin(rng) < density) t.records.push_back({uid, v, rating(rng)});
  }
  TrustTable trust;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (a != b && coin(rng) < trust_p) trust.edges.push_back({a, b, false});
  return {t, trust};
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("gdsrec-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace gdsrec::testing
