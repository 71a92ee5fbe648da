#include "neighbors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "error.hpp"
#include "parallel.hpp"

namespace mixr {

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("euclidean_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

KnnIndex KnnIndex::build(const Matrix& features, std::size_t workers) {
  const std::size_t n = features.rows();
  if (n < 2) throw InputError("kNN index needs at least 2 examples, got " + std::to_string(n));
  KnnIndex index;
  index.n_ = n;
  index.ids_.resize(n * (n - 1));
  index.dists_.resize(n * (n - 1));
  parallel_for(n, workers, [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> row;
    row.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      // Distance is evaluated with the lower index first so that
      // dist(a, b) and dist(b, a) are the same floating-point value.
      const double d = i < j ? euclidean_distance(features.row(i), features.row(j))
                             : euclidean_distance(features.row(j), features.row(i));
      row.emplace_back(d, j);
    }
    std::ranges::sort(row);
    for (std::size_t r = 0; r < row.size(); ++r) {
      index.dists_[i * (n - 1) + r] = row[r].first;
      index.ids_[i * (n - 1) + r] = row[r].second;
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    index.max_distance_ = std::max(index.max_distance_, index.dists_[i * (n - 1) + n - 2]);
  }
  return index;
}

std::span<const std::size_t> KnnIndex::neighbors(std::size_t i) const {
  if (i >= n_) throw InputError("example id " + std::to_string(i) + " out of range");
  return {ids_.data() + i * (n_ - 1), n_ - 1};
}

std::span<const double> KnnIndex::distances(std::size_t i) const {
  if (i >= n_) throw InputError("example id " + std::to_string(i) + " out of range");
  return {dists_.data() + i * (n_ - 1), n_ - 1};
}

std::span<const std::size_t> KnnIndex::knn(std::size_t i, std::size_t k) const {
  if (k + 1 > n_) {
    throw InputError("k=" + std::to_string(k) + " exceeds S-1=" + std::to_string(n_ - 1));
  }
  return neighbors(i).first(k);
}

KnnIndex build_index(const Dataset& data, std::size_t workers) {
  return KnnIndex::build(data.features(), workers);
}

std::vector<std::size_t> knn(const KnnIndex& index, std::size_t i, std::size_t k) {
  auto ids = index.knn(i, k);
  return {ids.begin(), ids.end()};
}

std::uint64_t dataset_hash(const Dataset& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  feed(data.size());
  feed(data.feature_dim());
  for (double v : data.features().values()) feed(std::bit_cast<std::uint64_t>(v));
  return h;
}

namespace {
constexpr char kIndexMagic[8] = {'M', 'I', 'X', 'R', 'K', 'N', 'N', '1'};
}

void save_index(const KnnIndex& index, std::uint64_t key, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write index cache '" + path.string() + "'");
  const std::uint64_t n = index.size();
  f.write(kIndexMagic, sizeof kIndexMagic);
  f.write(reinterpret_cast<const char*>(&key), sizeof key);
  f.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    for (auto id : index.neighbors(i)) {
      const std::uint64_t v = id;
      f.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    auto d = index.distances(i);
    f.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
  }
}

std::optional<KnnIndex> load_index(const std::filesystem::path& path, std::uint64_t key) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  char magic[8];
  std::uint64_t stored_key = 0;
  std::uint64_t n = 0;
  f.read(magic, sizeof magic);
  f.read(reinterpret_cast<char*>(&stored_key), sizeof stored_key);
  f.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!f || std::memcmp(magic, kIndexMagic, sizeof magic) != 0) {
    throw ParseError("'" + path.string() + "' is not a kNN index cache");
  }
  if (stored_key != key) return std::nullopt;
  KnnIndex index;
  index.n_ = n;
  index.ids_.resize(n * (n - 1));
  index.dists_.resize(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r + 1 < n; ++r) {
      std::uint64_t v = 0;
      f.read(reinterpret_cast<char*>(&v), sizeof v);
      index.ids_[i * (n - 1) + r] = v;
    }
    f.read(reinterpret_cast<char*>(index.dists_.data() + i * (n - 1)),
           static_cast<std::streamsize>((n - 1) * sizeof(double)));
    index.max_distance_ = std::max(index.max_distance_, index.dists_[i * (n - 1) + n - 2]);
  }
  if (!f) throw ParseError("'" + path.string() + "' is truncated");
  return index;
}

KnnOptions::KnnOptions(std::vector<std::size_t> values) : values_(std::move(values)) {
  if (values_.empty() || values_.front() != 0) {
    throw InputError("kNN options must start with 0");
  }
  for (std::size_t i = 1; i < values_.size(); ++i) {
    if (values_[i] <= values_[i - 1]) throw InputError("kNN options must be strictly increasing");
  }
}

std::size_t KnnOptions::index_of(std::size_t k) const {
  auto it = std::ranges::lower_bound(values_, k);
  if (it == values_.end() || *it != k) {
    throw InputError("k=" + std::to_string(k) + " is not one of the kNN options");
  }
  return static_cast<std::size_t>(it - values_.begin());
}

KnnOptions option_series(const SeriesSpec& spec, std::size_t cap) {
  std::vector<std::size_t> values{0};
  if (const auto* e = std::get_if<ExponentialSeries>(&spec)) {
    if (e->base == 0) throw InputError("exponential series base must be positive");
    std::size_t v = 1;
    for (std::size_t i = 0; i <= e->max_exponent; ++i) {
      values.push_back(v);
      if (e->base == 1 || v > cap) break;
      v *= e->base;
    }
  } else {
    const auto& l = std::get<LinearSeries>(spec);
    if (l.step == 0 || l.count == 0) throw InputError("linear series step and count must be positive");
    for (std::size_t i = 1; i <= l.count; ++i) values.push_back(l.step * i);
  }
  std::erase_if(values, [cap](std::size_t v) { return v > cap; });
  std::ranges::sort(values);
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() < 2) {
    throw InputError("kNN option series is empty after clipping at " + std::to_string(cap));
  }
  return KnnOptions(std::move(values));
}

}  // namespace mixr
