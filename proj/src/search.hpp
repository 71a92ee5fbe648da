#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "controller.hpp"
#include "dataset.hpp"
#include "mixing.hpp"
#include "neighbors.hpp"
#include "nn.hpp"

namespace mixr {

// Architecture and optimizer settings of the regression model f_phi. Seeds
// are supplied per training run.
struct RegressionSetup {
  std::vector<std::size_t> hidden{512, 256};
  bool layer_norm = false;
  TrainConfig train{.batch_size = 32, .epochs = 100, .lr = 1e-4, .shuffle_seed = 0};

  MlpSpec spec_for(const Dataset& data, std::uint64_t seed) const;
};

// Trains a fresh model (init seed `seed`, shuffle seed derived from it).
MlpModel train_regression(const Dataset& data, const RegressionSetup& setup, std::uint64_t seed);

struct SearchConfig {
  std::size_t samples_per_iteration = 20;  // T
  std::size_t max_iterations = 100;
  std::size_t patience = 10;               // W
  double improvement_threshold = 0.001;    // relative
  double clip = 0.2;
  std::size_t ppo_epochs = 4;
  double entropy_weight = 0.01;
  double baseline_weight = 0.95;
  double controller_lr = 0.0002;
  double eps_loss = 1e-8;
  std::uint64_t seed = 0;
  // Every evaluation starts from the same model initialization.
  bool common_model_seed = false;
  // Validation runs averaged when picking between the mode policy and the
  // best sampled policy at the end of the search.
  std::size_t final_evaluations = 3;
  std::size_t workers = 0;  // 0 = default_workers()

  ControllerConfig controller;
  RegressionSetup regression;
  MixConfig mix;

  void validate() const;
};

struct EvalTask {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
  const KnnIndex* index = nullptr;
  const MixPolicy* policy = nullptr;
  const RegressionSetup* regression = nullptr;
  MixConfig mix;
  std::uint64_t model_seed = 0;
};

// Validation MSE of a fresh model trained on D U Mix(D, P). A diverged
// training run yields +infinity.
double evaluate_policy(const EvalTask& task);

// r = 1 / max(loss, eps_loss) - baseline
double reward(double loss, double baseline, double eps_loss = 1e-8);

// baseline' = w * baseline + (1 - w) / max(loss, eps_loss)
double update_baseline(double baseline, double loss, double weight = 0.95, double eps_loss = 1e-8);

double clipped_surrogate(double ratio, double advantage, double clip);

struct TrajectoryEntry {
  PolicySample sample;
  double reward = 0.0;
};

struct IterationStats {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double max_reward = 0.0;
  double mean_loss = 0.0;
  double min_loss = 0.0;
  double baseline = 0.0;
  double entropy = 0.0;
};

struct SearchState {
  SearchState(ControllerNet controller, double controller_lr);

  ControllerNet controller;
  Adam optimizer;
  double baseline = 0.0;
  std::vector<TrajectoryEntry> trajectory;
  std::vector<double> losses;
  std::vector<IterationStats> reward_trace;
  std::optional<MixPolicy> best_policy;
  double best_loss = std::numeric_limits<double>::infinity();
};

// PPO objective over the trajectory, entropy bonus included, and its
// gradient with respect to the controller logits. old_log_probs come from
// the sampling-time controller.
struct SurrogateValue {
  double objective = 0.0;
  Matrix d_logits;
};
SurrogateValue ppo_surrogate(const ControllerNet& net, const std::vector<TrajectoryEntry>& trajectory,
                             double clip, double entropy_weight);

// ppo_epochs ascent steps on the surrogate, then clears trajectory and
// losses. Returns false (parameters restored) when the objective or its
// gradient became non-finite.
bool ppo_update(SearchState& state, const SearchConfig& cfg);

struct SearchResult {
  MixPolicy policy;
  double validation_loss = 0.0;
  std::string source;  // "mode" or "best-sample"
  MixPolicy mode;
  double mode_loss = 0.0;
  MixPolicy best_sample;
  double best_sample_loss = 0.0;
  std::vector<IterationStats> reward_trace;
  ControllerNet controller;
  std::size_t iterations = 0;
};

using SearchProgress = std::function<void(const IterationStats&)>;

SearchResult run_search(const Dataset& train, const Dataset& val, const KnnOptions& options,
                        const SearchConfig& cfg, const SearchProgress& progress = {});

}  // namespace mixr
