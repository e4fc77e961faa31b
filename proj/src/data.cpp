#include "fedmr/data.hpp"

#include "fedmr/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace fedmr {

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Index>(i)) = features.row(rows[i]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

std::vector<Index> Dataset::class_counts() const {
  std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

Dataset gen_circles(std::span<const Point2> centers, Scalar radius, Index n_per_class,
                    std::uint64_t seed) {
  if (n_per_class < 1) throw ContractError("gen_circles: n_per_class must be >= 1");
  if (centers.empty()) throw ContractError("gen_circles: no class centers");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Scalar> unit(0.0, 1.0);
  Dataset ds;
  ds.num_classes = static_cast<int>(centers.size());
  const Index n = n_per_class * static_cast<Index>(centers.size());
  ds.features.resize(n, 2);
  ds.labels.reserve(static_cast<std::size_t>(n));
  Index row = 0;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (Index i = 0; i < n_per_class; ++i, ++row) {
      // sqrt of a uniform radius fraction gives a uniform density on the disk.
      const Scalar r = radius * std::sqrt(unit(rng));
      const Scalar theta = 2.0 * std::numbers::pi * unit(rng);
      ds.features(row, 0) = centers[c][0] + r * std::cos(theta);
      ds.features(row, 1) = centers[c][1] + r * std::sin(theta);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

Dataset gen_circles_default(Index n_per_class, std::uint64_t seed) {
  const Point2 centers[] = {{1.0, 1.0}, {1.0, -1.0}, {-1.0, 1.0}, {-1.0, -1.0}};
  return gen_circles(centers, 0.5, n_per_class, seed);
}

Dataset gen_motivation(Index n_per_class, std::uint64_t seed) {
  const Scalar s3 = std::numbers::sqrt3;
  const Point2 centers[] = {{1.0, 0.0}, {0.0, s3}, {0.0, -s3}};
  return gen_circles(centers, 0.5, n_per_class, seed);
}

namespace {

std::vector<std::vector<Index>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(static_cast<Index>(i));
  return by_class;
}

std::vector<ClientShard> finish_shards(const Dataset& ds, std::vector<std::vector<Index>> parts) {
  std::vector<ClientShard> shards;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    ClientShard s;
    s.client_id = static_cast<int>(k);
    s.indices = std::move(parts[k]);
    std::sort(s.indices.begin(), s.indices.end());
    std::set<int> classes;
    for (Index i : s.indices) classes.insert(ds.labels[static_cast<std::size_t>(i)]);
    s.class_set.assign(classes.begin(), classes.end());
    shards.push_back(std::move(s));
  }
  return shards;
}

// Splits `items` into `sizes.size()` consecutive runs of the given sizes.
void deal(const std::vector<Index>& items, const std::vector<Index>& sizes,
          const std::vector<int>& owners, std::vector<std::vector<Index>>& parts) {
  std::size_t pos = 0;
  for (std::size_t j = 0; j < owners.size(); ++j) {
    auto& dst = parts[static_cast<std::size_t>(owners[j])];
    for (Index i = 0; i < sizes[j]; ++i) dst.push_back(items[pos++]);
  }
}

}  // namespace

std::vector<ClientShard> partition_pcdd(const Dataset& ds, const PcddSpec& spec,
                                        std::uint64_t seed) {
  const int classes = ds.num_classes;
  const int rho = spec.clients;
  const int per = spec.classes_per_client;
  if (rho < 1 || per < 1) throw PartitionError("PCDD needs >= 1 client and >= 1 class per client");
  if (per > classes)
    throw PartitionError("PCDD: " + std::to_string(per) + " classes per client exceeds " +
                         std::to_string(classes) + " classes");
  if (static_cast<long>(rho) * per < classes)
    throw PartitionError("PCDD infeasible: " + std::to_string(rho) + " clients x " +
                         std::to_string(per) + " classes cannot cover " +
                         std::to_string(classes) + " classes");

  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> owned(static_cast<std::size_t>(rho));
  int next = 0;
  for (auto& set : owned)
    while (static_cast<int>(set.size()) < per && next < classes) set.push_back(next++);
  for (auto& set : owned) {
    if (static_cast<int>(set.size()) == per) continue;
    std::vector<int> pool;
    for (int c = 0; c < classes; ++c)
      if (std::find(set.begin(), set.end(), c) == set.end()) pool.push_back(c);
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto missing = static_cast<std::size_t>(per) - set.size();
    set.insert(set.end(), pool.begin(), pool.begin() + static_cast<long>(missing));
  }

  auto by_class = indices_by_class(ds);
  std::vector<std::vector<Index>> parts(static_cast<std::size_t>(rho));
  for (int c = 0; c < classes; ++c) {
    std::vector<int> owners;
    for (int k = 0; k < rho; ++k) {
      const auto& set = owned[static_cast<std::size_t>(k)];
      if (std::find(set.begin(), set.end(), c) != set.end()) owners.push_back(k);
    }
    auto& items = by_class[static_cast<std::size_t>(c)];
    std::shuffle(items.begin(), items.end(), rng);
    const auto n = static_cast<Index>(items.size());
    const auto m = static_cast<Index>(owners.size());
    std::vector<Index> sizes(owners.size(), n / m);
    for (Index j = 0; j < n % m; ++j) ++sizes[static_cast<std::size_t>(j)];
    deal(items, sizes, owners, parts);
  }
  return finish_shards(ds, std::move(parts));
}

std::vector<ClientShard> partition_dirichlet(const Dataset& ds, const DirichletSpec& spec,
                                             std::uint64_t seed) {
  if (spec.clients < 1) throw PartitionError("Dirichlet partition needs >= 1 client");
  if (!(spec.beta > 0.0)) throw PartitionError("Dirichlet concentration beta must be > 0");
  const auto rho = static_cast<std::size_t>(spec.clients);
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(spec.beta, 1.0);

  auto by_class = indices_by_class(ds);
  std::vector<std::vector<Index>> parts(rho);
  std::vector<int> owners(rho);
  std::iota(owners.begin(), owners.end(), 0);
  for (auto& items : by_class) {
    std::vector<double> p(rho);
    for (auto& x : p) x = gamma(rng);
    double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(total > 0.0)) {
      // All draws underflowed; the whole class goes to one client.
      std::fill(p.begin(), p.end(), 0.0);
      p[std::uniform_int_distribution<std::size_t>(0, rho - 1)(rng)] = 1.0;
      total = 1.0;
    }
    const auto n = static_cast<Index>(items.size());
    std::vector<Index> sizes(rho);
    std::vector<std::pair<double, std::size_t>> frac(rho);
    Index assigned = 0;
    for (std::size_t k = 0; k < rho; ++k) {
      const double exact = static_cast<double>(n) * p[k] / total;
      sizes[k] = static_cast<Index>(std::floor(exact));
      assigned += sizes[k];
      frac[k] = {exact - std::floor(exact), k};
    }
    std::stable_sort(frac.begin(), frac.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (Index r = 0; r < n - assigned; ++r) ++sizes[frac[static_cast<std::size_t>(r) % rho].second];
    std::shuffle(items.begin(), items.end(), rng);
    deal(items, sizes, owners, parts);
  }
  return finish_shards(ds, std::move(parts));
}

std::vector<ClientShard> partition_iid(const Dataset& ds, const IidSpec& spec,
                                       std::uint64_t seed) {
  if (spec.clients < 1) throw PartitionError("IID partition needs >= 1 client");
  std::mt19937_64 rng(seed);
  std::vector<Index> items(static_cast<std::size_t>(ds.size()));
  std::iota(items.begin(), items.end(), Index{0});
  std::shuffle(items.begin(), items.end(), rng);
  const auto rho = static_cast<Index>(spec.clients);
  std::vector<Index> sizes(static_cast<std::size_t>(rho), ds.size() / rho);
  for (Index j = 0; j < ds.size() % rho; ++j) ++sizes[static_cast<std::size_t>(j)];
  std::vector<int> owners(static_cast<std::size_t>(rho));
  std::iota(owners.begin(), owners.end(), 0);
  std::vector<std::vector<Index>> parts(static_cast<std::size_t>(rho));
  deal(items, sizes, owners, parts);
  return finish_shards(ds, std::move(parts));
}

// --- CSV ---------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset file " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty())
    throw FormatError(path.string() + ": empty file (a header line is required)");
  const std::size_t columns = split_fields(trim(line)).size();
  if (columns < 2)
    throw FormatError(path.string() + ": header must name at least one feature and the label");

  std::vector<Scalar> values;
  Labels labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto fields = split_fields(row);
    if (fields.size() != columns)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(columns) + " fields, found " + std::to_string(fields.size()));
    for (std::size_t j = 0; j + 1 < fields.size(); ++j) {
      const std::string_view f = trim(fields[j]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || f.empty() || !std::isfinite(v))
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad feature value '" +
                         std::string(f) + "' in column " + std::to_string(j + 1));
      values.push_back(v);
    }
    const std::string_view lf = trim(fields.back());
    int label = -1;
    const auto [ptr, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc() || ptr != lf.data() + lf.size() || lf.empty() || label < 0)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad label '" +
                       std::string(lf) + "'");
    labels.push_back(label);
  }
  if (labels.empty()) throw FormatError(path.string() + ": no data rows");

  Dataset ds;
  const auto n = static_cast<Index>(labels.size());
  const auto m = static_cast<Index>(columns - 1);
  ds.features = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), n, m);
  ds.num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  ds.labels = std::move(labels);
  return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write dataset file " + path.string());
  for (Index j = 0; j < ds.input_dim(); ++j) out << "f" << (j + 1) << ",";
  out << "label\n";
  out << std::setprecision(17);
  for (Index i = 0; i < ds.size(); ++i) {
    for (Index j = 0; j < ds.input_dim(); ++j) out << ds.features(i, j) << ",";
    out << ds.labels[static_cast<std::size_t>(i)] << "\n";
  }
}

}  // namespace fedmr
