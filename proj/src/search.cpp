#include "search.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "error.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace mixr {

MlpSpec RegressionSetup::spec_for(const Dataset& data, std::uint64_t seed) const {
  return MlpSpec{.input_dim = data.feature_dim(),
                 .hidden = hidden,
                 .output_dim = data.label_dim(),
                 .layer_norm = layer_norm,
                 .seed = seed};
}

MlpModel train_regression(const Dataset& data, const RegressionSetup& setup, std::uint64_t seed) {
  TrainConfig cfg = setup.train;
  cfg.shuffle_seed = derive_seed(seed, {3});
  return train(MlpModel::create(setup.spec_for(data, seed)), data, cfg);
}

void SearchConfig::validate() const {
  if (samples_per_iteration == 0) throw ConfigError("search.samples_per_iteration must be >= 1");
  if (max_iterations == 0) throw ConfigError("search.max_iterations must be >= 1");
  if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("search.clip must lie in (0, 1)");
  if (!(entropy_weight >= 0.0)) throw ConfigError("search.entropy_weight must be non-negative");
  if (!(baseline_weight > 0.0 && baseline_weight < 1.0)) {
    throw ConfigError("search.baseline_weight must lie in (0, 1)");
  }
  if (!(controller_lr >= 0.0)) throw ConfigError("search.controller_lr must be non-negative");
  if (!(eps_loss > 0.0)) throw ConfigError("search.eps_loss must be positive");
  if (ppo_epochs == 0) throw ConfigError("search.ppo_epochs must be >= 1");
  if (final_evaluations == 0) throw ConfigError("search.final_evaluations must be >= 1");
  mix.validate();
}

double evaluate_policy(const EvalTask& task) {
  if (!task.train || !task.val || !task.index || !task.policy || !task.regression) {
    throw InputError("evaluate_policy: incomplete task");
  }
  MixConfig mix = task.mix;
  mix.seed = derive_seed(task.model_seed, {7});
  const Dataset augmented = augment(*task.train, mix_with_policy(*task.train, *task.index, *task.policy, mix));
  try {
    const MlpModel model = train_regression(augmented, *task.regression, task.model_seed);
    const double loss = mse_loss(forward(model, task.val->features()), task.val->labels());
    return std::isfinite(loss) ? loss : std::numeric_limits<double>::infinity();
  } catch (const TrainingDiverged& e) {
    spdlog::debug("policy evaluation diverged: {}", e.what());
    return std::numeric_limits<double>::infinity();
  }
}

double reward(double loss, double baseline, double eps_loss) {
  if (loss < 0.0) throw InputError("reward: loss must be non-negative");
  return 1.0 / std::max(loss, eps_loss) - baseline;
}

double update_baseline(double baseline, double loss, double weight, double eps_loss) {
  if (loss < 0.0) throw InputError("update_baseline: loss must be non-negative");
  return weight * baseline + (1.0 - weight) * (1.0 / std::max(loss, eps_loss));
}

double clipped_surrogate(double ratio, double advantage, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
  return std::min(ratio * advantage, clipped * advantage);
}

SearchState::SearchState(ControllerNet net, double controller_lr)
    : controller(std::move(net)), optimizer(controller.body(), AdamConfig{.lr = controller_lr}) {}

SurrogateValue ppo_surrogate(const ControllerNet& net, const std::vector<TrajectoryEntry>& trajectory,
                             double clip, double entropy_weight) {
  const Matrix log_p = log_softmax_rows(policy_logits(net));
  Matrix p = log_p;
  for (auto& v : p.values()) v = std::exp(v);
  const std::size_t n = net.examples();
  const std::size_t k = net.option_count();

  SurrogateValue out{0.0, Matrix(n, k)};
  const double inv_t = trajectory.empty() ? 0.0 : 1.0 / static_cast<double>(trajectory.size());
  for (const auto& entry : trajectory) {
    const auto& policy = entry.sample.policy;
    double lp_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) lp_new += log_p(i, policy.choice(i));
    const double ratio = std::exp(lp_new - entry.sample.log_prob);
    const double adv = entry.reward;
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv;
    out.objective += inv_t * std::min(unclipped, clipped);
    // Gradient flows only through the unclipped branch.
    if (unclipped <= clipped) {
      const double coef = inv_t * adv * ratio;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) out.d_logits(i, c) -= coef * p(i, c);
        out.d_logits(i, policy.choice(i)) += coef;
      }
    }
  }
  if (entropy_weight != 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      double h = 0.0;
      for (std::size_t c = 0; c < k; ++c) h -= p(i, c) * log_p(i, c);
      out.objective += entropy_weight * h;
      for (std::size_t c = 0; c < k; ++c) {
        out.d_logits(i, c) -= entropy_weight * p(i, c) * (log_p(i, c) + h);
      }
    }
  }
  return out;
}

bool ppo_update(SearchState& state, const SearchConfig& cfg) {
  if (state.trajectory.empty()) throw InputError("ppo_update: empty trajectory");
  const MlpModel saved_body = state.controller.body();
  const Adam saved_optimizer = state.optimizer;
  bool ok = true;
  for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    auto value = ppo_surrogate(state.controller, state.trajectory, cfg.clip, cfg.entropy_weight);
    if (!std::isfinite(value.objective) || !all_finite(value.d_logits.values())) {
      ok = false;
      break;
    }
    Gradients grads = logits_backward(state.controller, value.d_logits);
    grads.scale(-1.0);  // Adam descends; the surrogate is maximized.
    state.optimizer.step(state.controller.body(), grads);
  }
  if (ok) {
    for (auto p : state.controller.body().parameters()) ok = ok && all_finite(p);
  }
  if (!ok) {
    spdlog::warn("PPO update produced a non-finite objective; controller restored");
    state.controller.body() = saved_body;
    state.optimizer = saved_optimizer;
  }
  state.trajectory.clear();
  state.losses.clear();
  return ok;
}

namespace {

double mean_validation_loss(const Dataset& train, const Dataset& val, const KnnIndex& index,
                            const MixPolicy& policy, const SearchConfig& cfg) {
  std::vector<double> losses(cfg.final_evaluations);
  parallel_for(losses.size(), cfg.workers, [&](std::size_t r) {
    EvalTask task{&train, &val, &index, &policy, &cfg.regression, cfg.mix,
                  derive_seed(cfg.seed, {5, r})};
    losses[r] = evaluate_policy(task);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

}  // namespace

SearchResult run_search(const Dataset& train, const Dataset& val, const KnnOptions& options,
                        const SearchConfig& cfg, const SearchProgress& progress) {
  cfg.validate();
  if (options.max() + 1 > train.size()) {
    throw InputError("largest kNN option " + std::to_string(options.max()) +
                     " exceeds S-1 = " + std::to_string(train.size() - 1));
  }
  if (val.feature_dim() != train.feature_dim() || val.label_dim() != train.label_dim()) {
    throw InputError("validation set shape does not match the training set");
  }
  const KnnIndex index = build_index(train, cfg.workers);

  ControllerConfig ccfg = cfg.controller;
  ccfg.seed = derive_seed(cfg.seed, {4});
  SearchState state(ControllerNet(train.size(), options, ccfg), cfg.controller_lr);

  const std::size_t t_count = cfg.samples_per_iteration;
  std::size_t stalled = 0;
  double reference = std::numeric_limits<double>::infinity();
  std::size_t iteration = 0;
  for (; iteration < cfg.max_iterations; ++iteration) {
    std::vector<PolicySample> samples;
    samples.reserve(t_count);
    for (std::size_t t = 0; t < t_count; ++t) {
      samples.push_back(sample_policy(state.controller, derive_seed(cfg.seed, {1, iteration, t})));
    }

    std::vector<double> losses(t_count);
    parallel_for(t_count, cfg.workers, [&](std::size_t t) {
      const std::uint64_t model_seed = cfg.common_model_seed
                                           ? derive_seed(cfg.seed, {2})
                                           : derive_seed(cfg.seed, {2, iteration, t});
      EvalTask task{&train, &val, &index, &samples[t].policy, &cfg.regression, cfg.mix, model_seed};
      losses[t] = evaluate_policy(task);
    });
    state.losses = losses;

    IterationStats stats;
    stats.iteration = iteration;
    stats.max_reward = -std::numeric_limits<double>::infinity();
    stats.min_loss = std::numeric_limits<double>::infinity();
    stats.entropy = policy_entropy(state.controller);
    for (std::size_t t = 0; t < t_count; ++t) {
      const double loss = state.losses[t];
      const double r = reward(loss, state.baseline, cfg.eps_loss);
      state.trajectory.push_back({samples[t], r});
      state.baseline = update_baseline(state.baseline, loss, cfg.baseline_weight, cfg.eps_loss);
      stats.mean_reward += r / static_cast<double>(t_count);
      stats.max_reward = std::max(stats.max_reward, r);
      stats.mean_loss += loss / static_cast<double>(t_count);
      stats.min_loss = std::min(stats.min_loss, loss);
      if (loss < state.best_loss) {
        state.best_loss = loss;
        state.best_policy = samples[t].policy;
      }
    }
    stats.baseline = state.baseline;
    state.reward_trace.push_back(stats);
    if (progress) progress(stats);

    ppo_update(state, cfg);

    if (state.best_loss < reference * (1.0 - cfg.improvement_threshold)) {
      reference = state.best_loss;
      stalled = 0;
    } else if (++stalled >= cfg.patience) {
      ++iteration;
      break;
    }
  }

  MixPolicy mode = mode_policy(state.controller);
  const double mode_loss = mean_validation_loss(train, val, index, mode, cfg);
  MixPolicy best = state.best_policy.value_or(mode);
  const double best_loss = mean_validation_loss(train, val, index, best, cfg);
  const bool use_mode = mode_loss <= best_loss;
  return SearchResult{use_mode ? mode : best,
                      use_mode ? mode_loss : best_loss,
                      use_mode ? "mode" : "best-sample",
                      mode,
                      mode_loss,
                      best,
                      best_loss,
                      std::move(state.reward_trace),
                      std::move(state.controller),
                      iteration};
}

}  // namespace mixr
