#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "dataset.hpp"
#include "mixing.hpp"
#include "nn.hpp"
#include "random.hpp"
#include "search.hpp"

namespace mixr {

enum class MethodKind { kNone, kOriginalMixup, kManifoldMixup, kGlobalKnn, kMixr, kMixrManifold };

MethodKind parse_method_kind(const std::string& name);
std::string to_string(MethodKind kind);

struct MethodSpec {
  MethodKind kind = MethodKind::kNone;
  double alpha = 1.0;
  std::optional<double> fixed_lambda;   // mixup variants; overrides Beta sampling
  std::size_t n_pairs = 0;              // original mixup; 0 = one per training example
  std::vector<std::size_t> eligible_layers{0, 1, 2};  // manifold variants
  std::size_t tuner_budget = 8;         // global kNN coarse grid size

  void validate(std::size_t layer_count) const;
};

// Shared by every method: model architecture, repeat count and seeding.
struct BaselineContext {
  RegressionSetup regression;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  std::size_t workers = 0;

  // Model seed of repeat r. Identical across methods, so runs are paired.
  std::uint64_t model_seed(std::size_t r) const;
};

struct MethodResult {
  std::string method;
  std::vector<std::uint64_t> seeds;
  std::vector<Metrics> per_seed;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  double r2_mean = 0.0;
  double r2_std = 0.0;
  double runtime_minutes = 0.0;
  std::vector<MlpModel> models;
};

struct GlobalKnnResult {
  std::size_t best_k = 0;
  std::vector<std::pair<std::size_t, double>> tried;  // (k, mean validation loss)
  std::size_t seeds_per_k = 3;
  MethodResult result;
};

MethodResult run_no_augmentation(const Dataset& train, const Dataset& test,
                                 const BaselineContext& ctx);

MethodResult run_original_mixup(const Dataset& train, const Dataset& test, const MethodSpec& spec,
                                const BaselineContext& ctx);

MethodResult run_manifold_mixup(const Dataset& train, const Dataset& test, const MethodSpec& spec,
                                const BaselineContext& ctx);

// Coarse grid of k values: 0 plus budget - 1 log-spaced values over [1, S-1].
// A budget of S or more yields every k.
std::vector<std::size_t> global_knn_grid(std::size_t examples, std::size_t budget);

GlobalKnnResult run_global_knn(const Dataset& train, const Dataset& val, const Dataset& test,
                               const MethodSpec& spec, const BaselineContext& ctx);

// Trains on D U Mix(D, P).
MethodResult run_mixr(const Dataset& train, const Dataset& test, const MixPolicy& policy,
                      const BaselineContext& ctx, const MixConfig& mix = {});

MethodResult run_mixr_manifold(const Dataset& train, const Dataset& test, const MixPolicy& policy,
                               const MethodSpec& spec, const BaselineContext& ctx);

// Batch objectives, exposed for tests. `rng` drives layer, pairing and lambda
// choices and must outlive training.
BatchObjective manifold_mixup_objective(const MethodSpec& spec, Rng& rng,
                                        std::vector<std::size_t>* layer_log = nullptr);
BatchObjective mixr_manifold_objective(const KnnIndex& index, const Dataset& train,
                                       const MixPolicy& policy, const MethodSpec& spec, Rng& rng,
                                       std::vector<std::size_t>* layer_log = nullptr);

}  // namespace mixr
