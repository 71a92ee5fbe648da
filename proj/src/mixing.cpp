#include "mixing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"
#include "random.hpp"

namespace mixr {

MixPolicy::MixPolicy(std::vector<std::size_t> choice, KnnOptions options)
    : choice_(std::move(choice)), options_(std::move(options)) {
  for (std::size_t i = 0; i < choice_.size(); ++i) {
    if (choice_[i] >= options_.size()) {
      throw InputError("policy entry " + std::to_string(i) + " has invalid option index " +
                       std::to_string(choice_[i]));
    }
  }
}

MixPolicy MixPolicy::from_counts(const std::vector<std::size_t>& counts, KnnOptions options) {
  std::vector<std::size_t> choice;
  choice.reserve(counts.size());
  for (auto k : counts) choice.push_back(options.index_of(k));
  return MixPolicy(std::move(choice), std::move(options));
}

MixPolicy MixPolicy::constant(std::size_t n, std::size_t k, KnnOptions options) {
  return from_counts(std::vector<std::size_t>(n, k), std::move(options));
}

std::vector<std::size_t> MixPolicy::counts() const {
  std::vector<std::size_t> out;
  out.reserve(choice_.size());
  for (auto c : choice_) out.push_back(options_[c]);
  return out;
}

std::size_t MixPolicy::total_mixes() const {
  std::size_t total = 0;
  for (auto c : choice_) total += options_[c];
  return total;
}

void MixConfig::validate() const {
  if (mode == Mode::kFixed && !(lambda >= 0.0 && lambda <= 1.0)) {
    throw InputError("mixing ratio lambda must lie in [0, 1]");
  }
  if (mode == Mode::kBeta && !(alpha > 0.0)) throw InputError("Beta alpha must be positive");
}

std::pair<std::vector<double>, std::vector<double>> mix_pair(std::span<const double> xi,
                                                             std::span<const double> yi,
                                                             std::span<const double> xj,
                                                             std::span<const double> yj,
                                                             double lambda) {
  if (xi.size() != xj.size() || yi.size() != yj.size()) {
    throw InputError("mix_pair: shape mismatch");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("mix_pair: lambda must lie in [0, 1]");
  std::vector<double> x(xi.size());
  std::vector<double> y(yi.size());
  for (std::size_t k = 0; k < x.size(); ++k) x[k] = lambda * xi[k] + (1.0 - lambda) * xj[k];
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = lambda * yi[k] + (1.0 - lambda) * yj[k];
  return {std::move(x), std::move(y)};
}

namespace {

MixedSet empty_set(const Dataset& data) {
  return MixedSet{Matrix(0, data.feature_dim()), Matrix(0, data.label_dim()), {}};
}

void emit(MixedSet& out, const Dataset& data, std::size_t i, std::size_t j, double lambda) {
  auto [x, y] = mix_pair(data.features().row(i), data.labels().row(i), data.features().row(j),
                         data.labels().row(j), lambda);
  out.features.append_row(x);
  out.labels.append_row(y);
  out.provenance.push_back({i, j, lambda});
}

}  // namespace

MixedSet mix_with_policy(const Dataset& data, const KnnIndex& index, const MixPolicy& policy,
                         const MixConfig& cfg) {
  cfg.validate();
  if (policy.size() != data.size() || index.size() != data.size()) {
    throw InputError("policy length " + std::to_string(policy.size()) + " / index size " +
                     std::to_string(index.size()) + " do not match dataset size " +
                     std::to_string(data.size()));
  }
  MixedSet out = empty_set(data);
  Rng rng(derive_seed(cfg.seed, {0x6d6978}));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (auto j : index.knn(i, policy.k(i))) {
      const double lambda =
          cfg.mode == MixConfig::Mode::kFixed ? cfg.lambda : sample_symmetric_beta(rng, cfg.alpha);
      emit(out, data, i, j, lambda);
    }
  }
  return out;
}

Dataset augment(const Dataset& data, const MixedSet& mixed) {
  return concat(data, mixed.features, mixed.labels);
}

MixedSet original_mixup(const Dataset& data, std::size_t n_pairs, double alpha, std::uint64_t seed,
                        std::optional<double> fixed_lambda) {
  if (n_pairs == 0) throw InputError("original_mixup: n_pairs must be at least 1");
  if (!fixed_lambda && !(alpha > 0.0)) throw InputError("original_mixup: alpha must be positive");
  MixedSet out = empty_set(data);
  Rng rng(derive_seed(seed, {0x6f6d}));
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t i = uniform_index(rng, data.size());
    const std::size_t j = uniform_index(rng, data.size());
    const double lambda = fixed_lambda ? *fixed_lambda : sample_symmetric_beta(rng, alpha);
    emit(out, data, i, j, lambda);
  }
  return out;
}

bool in_band(double d, DistanceBand band) { return d >= band.lo && d < band.hi; }

MixedSet mix_distance_band(const Dataset& data, const KnnIndex& index, DistanceBand band,
                           double lambda, bool normalized) {
  if (!(band.lo < band.hi)) throw InputError("distance band needs lo < hi");
  if (index.size() != data.size()) throw InputError("index does not match dataset");
  MixedSet out = empty_set(data);
  const double scale = normalized && index.max_distance() > 0.0 ? index.max_distance() : 1.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto ids = index.neighbors(i);
    auto dists = index.distances(i);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < i) continue;
      const double d = dists[r] / scale;
      const bool top = normalized && band.hi == 1.0 && d == 1.0;
      if (in_band(d, band) || top) emit(out, data, i, ids[r], lambda);
    }
  }
  return out;
}

}  // namespace mixr
