#include "gdsrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace gdsrec {

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  if (spec.users <= 0 || spec.items <= 0) throw std::invalid_argument("synthetic: empty shape");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> user_bias(0.0, spec.user_bias_sd);
  std::normal_distribution<double> item_bias(0.0, spec.item_bias_sd);
  std::normal_distribution<double> noise(0.0, spec.noise_sd);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  SyntheticData out;
  std::vector<double> bu(static_cast<std::size_t>(spec.users)), bv(static_cast<std::size_t>(spec.items));
  for (auto& b : bu) b = user_bias(rng);
  for (auto& b : bv) b = item_bias(rng);
  for (Index u = 0; u < spec.users; ++u) out.ratings.users.intern(fmt::format("u{}", u));
  for (Index v = 0; v < spec.items; ++v) out.ratings.items.intern(fmt::format("i{}", v));

  std::vector<char> item_seen(static_cast<std::size_t>(spec.items), 0);
  auto rate = [&](Index u, Index v) {
    const double raw = spec.mu + bu[static_cast<std::size_t>(u)] + bv[static_cast<std::size_t>(v)] + noise(rng);
    const int r = static_cast<int>(std::clamp(std::lround(raw), 1L, 5L));
    out.ratings.records.push_back({u, v, r});
    item_seen[static_cast<std::size_t>(v)] = 1;
  };
  std::uniform_int_distribution<Index> any_item(0, spec.items - 1);
  for (Index u = 0; u < spec.users; ++u) {
    const Index forced = any_item(rng);
    for (Index v = 0; v < spec.items; ++v)
      if (v == forced || coin(rng) < spec.density) rate(u, v);
  }
  std::uniform_int_distribution<Index> any_user(0, spec.users - 1);
  for (Index v = 0; v < spec.items; ++v)
    if (!item_seen[static_cast<std::size_t>(v)]) rate(any_user(rng), v);

  for (Index a = 0; a < spec.users; ++a)
    for (Index b = 0; b < spec.users; ++b)
      if (a != b && coin(rng) < spec.trust_probability) out.trust.edges.push_back({a, b, false});
  return out;
}

void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream ratings(dir / "ratings.txt");
  std::ofstream trust(dir / "trust.txt");
  if (!ratings || !trust) throw std::runtime_error(fmt::format("cannot write into {}", dir.string()));
  for (const auto& r : data.ratings.records)
    ratings << data.ratings.users.external(r.user) << '\t' << data.ratings.items.external(r.item) << '\t' << r.rating
            << '\n';
  for (const auto& e : data.trust.edges)
    trust << data.ratings.users.external(e.src) << '\t' << data.ratings.users.external(e.dst) << '\n';
}

}  // namespace gdsrec
