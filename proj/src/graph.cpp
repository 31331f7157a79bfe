#include "gdsrec/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "gdsrec/hash.hpp"

namespace gdsrec {

namespace {

int deviation_level(int rating, double average) {
  const double level = std::ceil(std::abs(static_cast<double>(rating) - average));
  return std::clamp(static_cast<int>(level), 0, kNumLevels - 1);
}

}  // namespace

int user_level(int rating, double item_avg) { return deviation_level(rating, item_avg); }
int item_level(int rating, double user_avg) { return deviation_level(rating, user_avg); }

int relation_coefficient(const DatasetBundle& bundle, Index ui, Index uj, int delta) {
  const auto& a = bundle.items_of_user.at(static_cast<std::size_t>(ui));
  const auto& b = bundle.items_of_user.at(static_cast<std::size_t>(uj));
  int t = 1;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (ia->item < ib->item) {
      ++ia;
    } else if (ib->item < ia->item) {
      ++ib;
    } else {
      if (std::abs(ia->rating - ib->rating) <= delta) ++t;
      ++ia;
      ++ib;
    }
  }
  return t;
}

std::vector<double> social_weights(std::span<const int> coefficients) {
  std::vector<double> w(coefficients.size());
  double total = 0.0;
  for (int t : coefficients) total += t;
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = coefficients[k] / total;
  return w;
}

std::vector<double> social_weights(const DecentralizedGraph& graph, Index user) {
  const auto& row = graph.social_view.at(static_cast<std::size_t>(user));
  std::vector<int> t(row.size());
  std::transform(row.begin(), row.end(), t.begin(), [](const SocialEdge& e) { return e.coefficient; });
  return social_weights(t);
}

DecentralizedGraph build_graph(const DatasetBundle& bundle, int delta, Exec exec) {
  if (delta < 0) throw std::invalid_argument("delta must be non-negative");
  DecentralizedGraph g;
  g.delta = delta;
  const auto nu = static_cast<std::int64_t>(bundle.num_users);
  const auto ni = static_cast<std::int64_t>(bundle.num_items);
  g.user_view.resize(static_cast<std::size_t>(nu));
  g.item_view.resize(static_cast<std::size_t>(ni));
  g.social_view.resize(static_cast<std::size_t>(nu));

  auto build_user = [&](std::int64_t u) {
    const auto& items = bundle.items_of_user[static_cast<std::size_t>(u)];
    auto& row = g.user_view[static_cast<std::size_t>(u)];
    row.reserve(items.size());
    for (const auto& ir : items)
      row.push_back({ir.item, static_cast<std::uint8_t>(user_level(ir.rating, bundle.item_avg[ir.item])),
                     static_cast<std::uint8_t>(ir.rating)});

    const auto& friends = bundle.social[static_cast<std::size_t>(u)];
    auto& srow = g.social_view[static_cast<std::size_t>(u)];
    srow.reserve(friends.size());
    std::vector<int> t;
    t.reserve(friends.size());
    for (Index k : friends) {
      t.push_back(relation_coefficient(bundle, static_cast<Index>(u), k, delta));
      srow.push_back({k, t.back(), 0.0});
    }
    const auto w = social_weights(t);
    for (std::size_t k = 0; k < srow.size(); ++k) srow[k].weight = w[k];
  };

  auto build_item = [&](std::int64_t v) {
    const auto& users = bundle.users_of_item[static_cast<std::size_t>(v)];
    auto& row = g.item_view[static_cast<std::size_t>(v)];
    row.reserve(users.size());
    for (const auto& ur : users)
      row.push_back({ur.user, static_cast<std::uint8_t>(item_level(ur.rating, bundle.user_avg[ur.user])),
                     static_cast<std::uint8_t>(ur.rating)});
  };

  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t u = 0; u < nu; ++u) build_user(u);
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t v = 0; v < ni; ++v) build_item(v);
  } else {
    for (std::int64_t u = 0; u < nu; ++u) build_user(u);
    for (std::int64_t v = 0; v < ni; ++v) build_item(v);
  }
  return g;
}

namespace {
constexpr const char* kGraphMagic = "gdsrec-graph";
constexpr int kGraphVersion = 1;

template <class T>
T read_field(std::istream& in, const char* key) {
  std::string k;
  T v{};
  if (!(in >> k >> v) || k != key) throw ValidationError(fmt::format("graph: expected '{}'", key));
  return v;
}
}  // namespace

void save_graph(const DecentralizedGraph& g, std::uint64_t hash, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  std::size_t n_user = 0, n_item = 0, n_social = 0;
  for (const auto& r : g.user_view) n_user += r.size();
  for (const auto& r : g.item_view) n_item += r.size();
  for (const auto& r : g.social_view) n_social += r.size();

  out << kGraphMagic << ' ' << kGraphVersion << '\n'
      << "dataset_hash " << hex64(hash) << '\n'
      << "delta " << g.delta << '\n'
      << "num_users " << g.user_view.size() << '\n'
      << "num_items " << g.item_view.size() << '\n';
  out << "[user_view] " << n_user << '\n';
  for (std::size_t u = 0; u < g.user_view.size(); ++u)
    for (const auto& e : g.user_view[u]) out << u << ' ' << e.item << ' ' << int(e.level) << ' ' << int(e.rating) << '\n';
  out << "[item_view] " << n_item << '\n';
  for (std::size_t v = 0; v < g.item_view.size(); ++v)
    for (const auto& e : g.item_view[v]) out << v << ' ' << e.user << ' ' << int(e.level) << ' ' << int(e.rating) << '\n';
  out << "[social_view] " << n_social << '\n';
  for (std::size_t u = 0; u < g.social_view.size(); ++u)
    for (const auto& e : g.social_view[u])
      out << u << ' ' << e.user << ' ' << e.coefficient << ' ' << fmt::format("{:.17g}", e.weight) << '\n';
  out << "end\n";
}

DecentralizedGraph load_graph(const std::filesystem::path& path, std::uint64_t expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  if (read_field<int>(in, kGraphMagic) != kGraphVersion) throw ValidationError("graph: unsupported version");
  const auto hash = read_field<std::string>(in, "dataset_hash");
  if (hash != hex64(expected_hash))
    throw ValidationError(fmt::format("graph: dataset hash {} does not match bundle {}", hash, hex64(expected_hash)));

  DecentralizedGraph g;
  g.delta = read_field<int>(in, "delta");
  const auto nu = read_field<std::size_t>(in, "num_users");
  const auto ni = read_field<std::size_t>(in, "num_items");
  g.user_view.resize(nu);
  g.item_view.resize(ni);
  g.social_view.resize(nu);

  auto check = [](bool ok, const char* section) {
    if (!ok) throw ValidationError(fmt::format("graph: malformed [{}] section", section));
  };
  const auto n_user = read_field<std::size_t>(in, "[user_view]");
  for (std::size_t k = 0; k < n_user; ++k) {
    std::size_t u = 0;
    int item = 0, level = 0, rating = 0;
    check(static_cast<bool>(in >> u >> item >> level >> rating) && u < nu && item >= 0 &&
              static_cast<std::size_t>(item) < ni && level >= 0 && level < kNumLevels,
          "user_view");
    g.user_view[u].push_back({item, static_cast<std::uint8_t>(level), static_cast<std::uint8_t>(rating)});
  }
  const auto n_item = read_field<std::size_t>(in, "[item_view]");
  for (std::size_t k = 0; k < n_item; ++k) {
    std::size_t v = 0;
    int user = 0, level = 0, rating = 0;
    check(static_cast<bool>(in >> v >> user >> level >> rating) && v < ni && user >= 0 &&
              static_cast<std::size_t>(user) < nu && level >= 0 && level < kNumLevels,
          "item_view");
    g.item_view[v].push_back({user, static_cast<std::uint8_t>(level), static_cast<std::uint8_t>(rating)});
  }
  const auto n_social = read_field<std::size_t>(in, "[social_view]");
  for (std::size_t k = 0; k < n_social; ++k) {
    std::size_t u = 0;
    int user = 0, t = 0;
    double w = 0.0;
    check(static_cast<bool>(in >> u >> user >> t >> w) && u < nu && user >= 0 &&
              static_cast<std::size_t>(user) < nu && t >= 1,
          "social_view");
    g.social_view[u].push_back({user, t, w});
  }
  std::string tail;
  check(static_cast<bool>(in >> tail) && tail == "end", "end");
  return g;
}

NeighborSample sample_neighbors(Index node, std::size_t degree, std::size_t K, std::uint64_t seed) {
  if (K == 0) throw std::invalid_argument("neighbor cap K must be at least 1");
  NeighborSample s{node, {}, seed};
  std::vector<std::uint32_t> all(degree);
  std::iota(all.begin(), all.end(), 0u);
  if (degree <= K) {
    s.kept = std::move(all);
    return s;
  }
  s.kept.reserve(K);
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(s.kept), K, rng);
  return s;
}

EpochSample EpochSample::full(const DecentralizedGraph& g) {
  EpochSample s;
  s.full_ = true;
  std::size_t max_deg = 0;
  auto degrees = [&](const auto& view, std::vector<std::uint32_t>& out) {
    out.resize(view.size());
    for (std::size_t n = 0; n < view.size(); ++n) {
      out[n] = static_cast<std::uint32_t>(view[n].size());
      max_deg = std::max<std::size_t>(max_deg, view[n].size());
    }
  };
  degrees(g.user_view, s.deg_ui_);
  degrees(g.item_view, s.deg_iu_);
  degrees(g.social_view, s.deg_us_);
  s.iota_.resize(max_deg);
  std::iota(s.iota_.begin(), s.iota_.end(), 0u);
  s.cap_ = max_deg;
  return s;
}

EpochSample EpochSample::draw(const DecentralizedGraph& g, std::size_t K, std::uint64_t seed,
                              std::uint64_t epoch, Exec exec) {
  EpochSample s;
  s.full_ = false;
  s.cap_ = K;
  auto fill = [&](const auto& view, NeighborKind kind, std::vector<std::vector<std::uint32_t>>& out) {
    const auto n = static_cast<std::int64_t>(view.size());
    out.resize(view.size());
    auto one = [&](std::int64_t node) {
      const auto node_seed = derive_seed(seed, epoch, static_cast<std::uint64_t>(kind),
                                         static_cast<std::uint64_t>(node));
      out[static_cast<std::size_t>(node)] =
          sample_neighbors(static_cast<Index>(node), view[static_cast<std::size_t>(node)].size(), K, node_seed).kept;
    };
    if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 256)
      for (std::int64_t node = 0; node < n; ++node) one(node);
    } else {
      for (std::int64_t node = 0; node < n; ++node) one(node);
    }
  };
  fill(g.user_view, NeighborKind::user_items, s.user_items_);
  fill(g.item_view, NeighborKind::item_users, s.item_users_);
  fill(g.social_view, NeighborKind::user_social, s.user_social_);
  return s;
}

}  // namespace gdsrec
