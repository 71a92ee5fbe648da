#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "dataset.hpp"
#include "matrix.hpp"

namespace mixr {

double euclidean_distance(std::span<const double> a, std::span<const double> b);

// Exact all-pairs neighbor lists. Row i holds every other example sorted by
// ascending Euclidean distance, ties broken by ascending example index.
class KnnIndex {
 public:
  KnnIndex() = default;
  static KnnIndex build(const Matrix& features, std::size_t workers = 1);

  std::size_t size() const noexcept { return n_; }
  std::span<const std::size_t> neighbors(std::size_t i) const;
  std::span<const double> distances(std::size_t i) const;
  // First k neighbors of i; throws InputError when k > S-1.
  std::span<const std::size_t> knn(std::size_t i, std::size_t k) const;
  double max_distance() const noexcept { return max_distance_; }

  bool operator==(const KnnIndex&) const = default;

 private:
  friend std::optional<KnnIndex> load_index(const std::filesystem::path&, std::uint64_t);
  std::size_t n_ = 0;
  std::vector<std::size_t> ids_;
  std::vector<double> dists_;
  double max_distance_ = 0.0;
};

KnnIndex build_index(const Dataset& data, std::size_t workers = 1);
std::vector<std::size_t> knn(const KnnIndex& index, std::size_t i, std::size_t k);

// FNV-1a over the feature bits; keys the on-disk index cache.
std::uint64_t dataset_hash(const Dataset& data);
void save_index(const KnnIndex& index, std::uint64_t key, const std::filesystem::path& path);
// Returns nullopt when the file is missing or was built for another dataset.
std::optional<KnnIndex> load_index(const std::filesystem::path& path, std::uint64_t key);

// Allowed neighbor counts: strictly increasing, starts at 0.
class KnnOptions {
 public:
  KnnOptions() : values_{0} {}
  explicit KnnOptions(std::vector<std::size_t> values);

  const std::vector<std::size_t>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t operator[](std::size_t i) const { return values_[i]; }
  std::size_t max() const noexcept { return values_.back(); }
  // Position of value k; throws when k is not an option.
  std::size_t index_of(std::size_t k) const;

  bool operator==(const KnnOptions&) const = default;

 private:
  std::vector<std::size_t> values_;
};

struct ExponentialSeries {
  std::size_t base = 2;
  std::size_t max_exponent = 7;
};

struct LinearSeries {
  std::size_t step = 10;
  std::size_t count = 19;
};

using SeriesSpec = std::variant<ExponentialSeries, LinearSeries>;

// {0} U series, clipped at cap, deduplicated and sorted.
KnnOptions option_series(const SeriesSpec& spec, std::size_t cap);

}  // namespace mixr
