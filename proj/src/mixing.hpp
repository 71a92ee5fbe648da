#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "neighbors.hpp"

namespace mixr {

// Per-example choice of an index into the kNN options.
class MixPolicy {
 public:
  MixPolicy(std::vector<std::size_t> choice, KnnOptions options);
  // Builds a policy from neighbor counts, each of which must be an option.
  static MixPolicy from_counts(const std::vector<std::size_t>& counts, KnnOptions options);
  static MixPolicy constant(std::size_t n, std::size_t k, KnnOptions options);

  std::size_t size() const noexcept { return choice_.size(); }
  std::size_t choice(std::size_t i) const { return choice_.at(i); }
  std::size_t k(std::size_t i) const { return options_[choice_.at(i)]; }
  const std::vector<std::size_t>& choices() const noexcept { return choice_; }
  const KnnOptions& options() const noexcept { return options_; }
  std::vector<std::size_t> counts() const;
  std::size_t total_mixes() const;

  bool operator==(const MixPolicy&) const = default;

 private:
  std::vector<std::size_t> choice_;
  KnnOptions options_;
};

struct MixConfig {
  enum class Mode { kFixed, kBeta };
  Mode mode = Mode::kFixed;
  double lambda = 0.5;
  double alpha = 1.0;
  std::uint64_t seed = 0;  // Beta mode only

  void validate() const;
};

// Source of one mixed row: lambda * row i + (1 - lambda) * row j.
struct Provenance {
  std::size_t i = 0;
  std::size_t j = 0;
  double lambda = 0.5;
};

// Augmented rows; may be empty.
struct MixedSet {
  Matrix features;
  Matrix labels;
  std::vector<Provenance> provenance;

  std::size_t size() const noexcept { return provenance.size(); }
};

std::pair<std::vector<double>, std::vector<double>> mix_pair(std::span<const double> xi,
                                                             std::span<const double> yi,
                                                             std::span<const double> xj,
                                                             std::span<const double> yj,
                                                             double lambda);

// Mix(D, P): one row per (i, j) with j among the first k_i neighbors of i,
// ordered by i then neighbor rank.
MixedSet mix_with_policy(const Dataset& data, const KnnIndex& index, const MixPolicy& policy,
                         const MixConfig& cfg = {});

// D U Mix(D, P).
Dataset augment(const Dataset& data, const MixedSet& mixed);

// n_pairs ordered pairs drawn uniformly with replacement, lambda ~ Beta(alpha,
// alpha) per pair unless fixed_lambda is set.
MixedSet original_mixup(const Dataset& data, std::size_t n_pairs, double alpha, std::uint64_t seed,
                        std::optional<double> fixed_lambda = std::nullopt);

struct DistanceBand {
  double lo = 0.0;
  double hi = 1.0;
};

// Mixes every unordered pair (i < j) whose distance lies in [lo, hi). With
// `normalized`, distances are divided by the largest pairwise distance and a
// band with hi == 1 also includes the maximum.
MixedSet mix_distance_band(const Dataset& data, const KnnIndex& index, DistanceBand band,
                           double lambda = 0.5, bool normalized = true);

bool in_band(double d, DistanceBand band);

}  // namespace mixr
