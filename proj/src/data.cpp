#include "gdsrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <string_view>
#include <utility>

#include <fmt/format.h>

#include "gdsrec/hash.hpp"

namespace gdsrec {

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("{}:{}: {}", path, line, what)), line_(line) {}

Index IdMap::intern(const std::string& external) {
  auto [it, inserted] = index_.try_emplace(external, static_cast<Index>(names_.size()));
  if (inserted) names_.push_back(external);
  return it->second;
}

Index IdMap::find(const std::string& external) const {
  auto it = index_.find(external);
  return it == index_.end() ? -1 : it->second;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

/// Splits `line` on `sep`, trimming each field.
std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Iterates data lines, handing (line_number, content, separator) to `fn`.
template <class Fn>
void for_each_data_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  std::string raw;
  std::size_t line_no = 0;
  char sep = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (sep == 0) sep = line.find('\t') != std::string_view::npos ? '\t' : ',';
    fn(line_no, line, sep);
  }
}

}  // namespace

RatingTable load_ratings(const std::filesystem::path& path, DuplicatePolicy duplicates) {
  RatingTable table;
  std::unordered_map<std::uint64_t, std::size_t> seen;
  const auto file = path.string();

  for_each_data_line(path, [&](std::size_t line_no, std::string_view line, char sep) {
    const auto fields = split_fields(line, sep);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty())
      throw ParseError(file, line_no, "expected <user><sep><item><sep><rating>");

    double value = 0.0;
    const auto* end = fields[2].data() + fields[2].size();
    auto [ptr, ec] = std::from_chars(fields[2].data(), end, value);
    if (ec != std::errc{} || ptr != end)
      throw ParseError(file, line_no, fmt::format("rating '{}' is not a number", fields[2]));
    if (value != std::floor(value) || value < 1.0 || value > 5.0)
      throw ValidationError(
          fmt::format("{}:{}: rating {} outside the integer range [1,5]", file, line_no, fields[2]));

    RatingRecord rec{table.users.intern(std::string(fields[0])),
                     table.items.intern(std::string(fields[1])), static_cast<int>(value)};
    const auto key = (static_cast<std::uint64_t>(rec.user) << 32) | static_cast<std::uint32_t>(rec.item);
    if (auto it = seen.find(key); it != seen.end()) {
      if (duplicates == DuplicatePolicy::reject)
        throw ValidationError(fmt::format("{}:{}: duplicate rating for user '{}' item '{}'", file,
                                          line_no, fields[0], fields[1]));
      table.records[it->second].rating = rec.rating;
      return;
    }
    seen.emplace(key, table.records.size());
    table.records.push_back(rec);
  });
  return table;
}

TrustTable load_trust(const std::filesystem::path& path, RatingTable& ratings) {
  TrustTable table;
  const auto rated_users = ratings.users.size();
  std::set<std::pair<Index, Index>> seen;
  const auto file = path.string();

  for_each_data_line(path, [&](std::size_t line_no, std::string_view line, char sep) {
    const auto fields = split_fields(line, sep);
    if (fields.size() < 2 || fields[0].empty() || fields[1].empty())
      throw ParseError(file, line_no, "expected <src><sep><dst>");
    if (fields[0] == fields[1]) {
      ++table.self_loops_dropped;
      return;
    }
    const Index src = ratings.users.intern(std::string(fields[0]));
    const Index dst = ratings.users.intern(std::string(fields[1]));
    if (!seen.emplace(src, dst).second) {
      ++table.duplicates_dropped;
      return;
    }
    TrustEdge edge{src, dst, static_cast<std::size_t>(src) >= rated_users ||
                                 static_cast<std::size_t>(dst) >= rated_users};
    if (edge.unrated_endpoint) ++table.unrated_endpoints;
    table.edges.push_back(edge);
  });
  return table;
}

std::size_t DatasetBundle::num_relations() const noexcept {
  std::size_t n = 0;
  for (const auto& s : social) n += s.size();
  return n;
}

namespace {

void compute_statistics(DatasetBundle& b) {
  const auto nu = static_cast<std::size_t>(b.num_users);
  const auto ni = static_cast<std::size_t>(b.num_items);
  b.user_avg.assign(nu, 0.0);
  b.item_avg.assign(ni, 0.0);
  b.user_train_count.assign(nu, 0);
  b.item_train_count.assign(ni, 0);
  b.items_of_user.assign(nu, {});
  b.users_of_item.assign(ni, {});

  double total = 0.0;
  for (const auto& r : b.train) {
    b.user_avg[r.user] += r.rating;
    b.item_avg[r.item] += r.rating;
    ++b.user_train_count[r.user];
    ++b.item_train_count[r.item];
    total += r.rating;
    b.items_of_user[r.user].push_back({r.item, r.rating});
    b.users_of_item[r.item].push_back({r.user, r.rating});
  }
  b.global_mean = b.train.empty() ? 0.0 : total / static_cast<double>(b.train.size());
  for (std::size_t u = 0; u < nu; ++u)
    b.user_avg[u] = b.user_train_count[u] ? b.user_avg[u] / b.user_train_count[u] : b.global_mean;
  for (std::size_t v = 0; v < ni; ++v)
    b.item_avg[v] = b.item_train_count[v] ? b.item_avg[v] / b.item_train_count[v] : b.global_mean;
  for (auto& row : b.items_of_user)
    std::sort(row.begin(), row.end(), [](auto& a, auto& c) { return a.item < c.item; });
  for (auto& row : b.users_of_item)
    std::sort(row.begin(), row.end(), [](auto& a, auto& c) { return a.user < c.user; });
}

}  // namespace

DatasetBundle split_dataset(const RatingTable& ratings, const TrustTable& trust,
                            double train_fraction, std::uint64_t seed) {
  if (ratings.records.empty()) throw ValidationError("empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError(fmt::format("train fraction {} outside (0,1)", train_fraction));

  DatasetBundle b;
  b.num_users = static_cast<Index>(ratings.users.size());
  b.num_items = static_cast<Index>(ratings.items.size());
  b.split_seed = seed;
  b.train_fraction = train_fraction;
  b.user_names = ratings.users.names();
  b.item_names = ratings.items.names();
  for (const auto& r : ratings.records) b.num_rating_users = std::max(b.num_rating_users, r.user + 1);

  std::vector<std::size_t> order(ratings.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n = order.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  b.train.reserve(n_train);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& rec = ratings.records[order[k]];
    if (k < n_train)
      b.train.push_back(rec);
    else if ((k - n_train) % 2 == 0)
      b.validation.push_back(rec);
    else
      b.test.push_back(rec);
  }

  b.social.assign(static_cast<std::size_t>(b.num_users), {});
  for (const auto& e : trust.edges) b.social[e.src].push_back(e.dst);
  for (auto& row : b.social) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }

  compute_statistics(b);
  return b;
}

double average_rating(const DatasetBundle& bundle, bool is_user, Index entity) {
  const auto& avg = is_user ? bundle.user_avg : bundle.item_avg;
  if (entity < 0 || static_cast<std::size_t>(entity) >= avg.size())
    throw std::out_of_range(fmt::format("{} index {} out of range", is_user ? "user" : "item", entity));
  return avg[static_cast<std::size_t>(entity)];
}

namespace {

constexpr const char* kBundleMagic = "gdsrec-bundle";
constexpr int kBundleVersion = 1;

void write_split(std::ofstream& out, const char* name, const std::vector<RatingRecord>& rows) {
  out << '[' << name << "] " << rows.size() << '\n';
  for (const auto& r : rows) out << r.user << ' ' << r.item << ' ' << r.rating << '\n';
}

std::string expect_key(std::istream& in, const std::string& key) {
  std::string k;
  if (!(in >> k) || k != key)
    throw ValidationError(fmt::format("bundle: expected '{}' but found '{}'", key, k));
  return k;
}

template <class T>
T read_value(std::istream& in, const std::string& key) {
  expect_key(in, key);
  T v{};
  if (!(in >> v)) throw ValidationError(fmt::format("bundle: bad value for '{}'", key));
  return v;
}

std::vector<RatingRecord> read_split(std::istream& in, const std::string& name, const DatasetBundle& b) {
  const auto count = read_value<std::size_t>(in, "[" + name + "]");
  std::vector<RatingRecord> rows(count);
  for (auto& r : rows) {
    if (!(in >> r.user >> r.item >> r.rating))
      throw ValidationError(fmt::format("bundle: truncated [{}] section", name));
    if (r.user < 0 || r.user >= b.num_users || r.item < 0 || r.item >= b.num_items || r.rating < 1 ||
        r.rating > 5)
      throw ValidationError(fmt::format("bundle: invalid record in [{}]", name));
  }
  return rows;
}

std::vector<std::string> read_names(std::istream& in, const std::string& name, std::size_t expected) {
  const auto count = read_value<std::size_t>(in, "[" + name + "]");
  if (count != expected) throw ValidationError(fmt::format("bundle: [{}] count mismatch", name));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> names(count);
  for (auto& s : names)
    if (!std::getline(in, s)) throw ValidationError(fmt::format("bundle: truncated [{}]", name));
  return names;
}

}  // namespace

void save_bundle(const DatasetBundle& b, int delta, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  out << kBundleMagic << ' ' << kBundleVersion << '\n';
  out << "num_users " << b.num_users << '\n';
  out << "num_items " << b.num_items << '\n';
  out << "num_rating_users " << b.num_rating_users << '\n';
  out << "split_seed " << b.split_seed << '\n';
  out << "train_fraction " << fmt::format("{:.17g}", b.train_fraction) << '\n';
  out << "delta " << delta << '\n';
  out << "[users] " << b.user_names.size() << '\n';
  for (const auto& s : b.user_names) out << s << '\n';
  out << "[items] " << b.item_names.size() << '\n';
  for (const auto& s : b.item_names) out << s << '\n';
  write_split(out, "train", b.train);
  write_split(out, "validation", b.validation);
  write_split(out, "test", b.test);
  out << "[social] " << b.num_relations() << '\n';
  for (std::size_t u = 0; u < b.social.size(); ++u)
    for (auto v : b.social[u]) out << u << ' ' << v << '\n';
  out << "end\n";
  if (!out) throw std::runtime_error(fmt::format("write failed for '{}'", path.string()));
}

DatasetBundle load_bundle(const std::filesystem::path& path, int* delta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  const auto version = read_value<int>(in, kBundleMagic);
  if (version != kBundleVersion)
    throw ValidationError(fmt::format("bundle: unsupported format version {}", version));

  DatasetBundle b;
  b.num_users = read_value<Index>(in, "num_users");
  b.num_items = read_value<Index>(in, "num_items");
  b.num_rating_users = read_value<Index>(in, "num_rating_users");
  b.split_seed = read_value<std::uint64_t>(in, "split_seed");
  b.train_fraction = read_value<double>(in, "train_fraction");
  const int delta = read_value<int>(in, "delta");
  if (delta_out) *delta_out = delta;
  b.user_names = read_names(in, "users", static_cast<std::size_t>(b.num_users));
  b.item_names = read_names(in, "items", static_cast<std::size_t>(b.num_items));
  b.train = read_split(in, "train", b);
  b.validation = read_split(in, "validation", b);
  b.test = read_split(in, "test", b);

  const auto n_social = read_value<std::size_t>(in, "[social]");
  b.social.assign(static_cast<std::size_t>(b.num_users), {});
  for (std::size_t k = 0; k < n_social; ++k) {
    Index s = 0, d = 0;
    if (!(in >> s >> d) || s < 0 || s >= b.num_users || d < 0 || d >= b.num_users)
      throw ValidationError("bundle: invalid [social] edge");
    b.social[s].push_back(d);
  }
  expect_key(in, "end");
  compute_statistics(b);
  return b;
}

std::uint64_t dataset_hash(const DatasetBundle& b) {
  Fnv1a h;
  h.add(b.num_users);
  h.add(b.num_items);
  for (const auto* split : {&b.train, &b.validation, &b.test}) {
    h.add(split->size());
    for (const auto& r : *split) {
      h.add(r.user);
      h.add(r.item);
      h.add(r.rating);
    }
  }
  for (std::size_t u = 0; u < b.social.size(); ++u) {
    h.add(b.social[u].size());
    for (auto v : b.social[u]) h.add(v);
  }
  return h.value();
}

}  // namespace gdsrec
