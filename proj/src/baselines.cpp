#include "baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "error.hpp"
#include "parallel.hpp"

namespace mixr {

namespace {

const std::map<std::string, MethodKind>& method_names() {
  static const std::map<std::string, MethodKind> names{
      {"none", MethodKind::kNone},
      {"original_mixup", MethodKind::kOriginalMixup},
      {"manifold_mixup", MethodKind::kManifoldMixup},
      {"global_knn", MethodKind::kGlobalKnn},
      {"mixr", MethodKind::kMixr},
      {"mixr_manifold", MethodKind::kMixrManifold},
  };
  return names;
}

using Clock = std::chrono::steady_clock;

double minutes_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count() / 60.0;
}

// Trains ctx.repeats models, train_one(r) building the r-th one, and scores
// them on the test set.
template <typename TrainOne>
MethodResult run_repeats(const std::string& name, const Dataset& test, const BaselineContext& ctx,
                         TrainOne&& train_one) {
  if (ctx.repeats == 0) throw ConfigError("repeats must be at least 1");
  const auto start = Clock::now();
  MethodResult result;
  result.method = name;
  result.models.resize(ctx.repeats);
  parallel_for(ctx.repeats, ctx.workers, [&](std::size_t r) { result.models[r] = train_one(r); });
  std::vector<double> rmses;
  std::vector<double> r2s;
  for (std::size_t r = 0; r < ctx.repeats; ++r) {
    result.seeds.push_back(ctx.model_seed(r));
    result.per_seed.push_back(evaluate(result.models[r], test));
    rmses.push_back(result.per_seed.back().rmse);
    r2s.push_back(result.per_seed.back().r2);
  }
  result.rmse_mean = mean(rmses);
  result.rmse_std = stddev(rmses);
  result.r2_mean = mean(r2s);
  result.r2_std = stddev(r2s);
  result.runtime_minutes = minutes_since(start);
  return result;
}

double draw_lambda(const MethodSpec& spec, Rng& rng) {
  return spec.fixed_lambda ? *spec.fixed_lambda : sample_symmetric_beta(rng, spec.alpha);
}

// rows[r] <- lambda * rows[r] + (1 - lambda) * rows[partner[r]] where a
// partner exists; rows beyond partner.size() are left out of the result.
Matrix mix_rows(const Matrix& m, const std::vector<std::optional<std::size_t>>& partner,
                double lambda) {
  Matrix out(partner.size(), m.cols());
  for (std::size_t r = 0; r < partner.size(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out(r, c) = partner[r] ? lambda * m(r, c) + (1.0 - lambda) * m(*partner[r], c) : m(r, c);
    }
  }
  return out;
}

// Backward of mix_rows onto a matrix with `rows` rows.
Matrix unmix_gradient(const Matrix& d_mixed, const std::vector<std::optional<std::size_t>>& partner,
                      double lambda, std::size_t rows) {
  Matrix d(rows, d_mixed.cols());
  for (std::size_t r = 0; r < partner.size(); ++r) {
    for (std::size_t c = 0; c < d_mixed.cols(); ++c) {
      if (partner[r]) {
        d(r, c) += lambda * d_mixed(r, c);
        d(*partner[r], c) += (1.0 - lambda) * d_mixed(r, c);
      } else {
        d(r, c) += d_mixed(r, c);
      }
    }
  }
  return d;
}

// Forward to `layer`, mix hidden rows and labels, finish the pass and
// backpropagate through both halves.
double mixed_layer_step(const MlpModel& model, const Matrix& x, const Matrix& y, std::size_t layer,
                        const std::vector<std::optional<std::size_t>>& partner, double lambda,
                        Gradients& grads) {
  const std::size_t layers = model.layer_count();
  auto head = trace_forward(model, x, 0, layer);
  const Matrix h = mix_rows(head.output(), partner, lambda);
  const Matrix target = mix_rows(y, partner, lambda);
  auto tail = trace_forward(model, h, layer, layers);
  const double loss = mse_loss(tail.output(), target);
  if (!std::isfinite(loss)) return loss;
  const Matrix d_h = trace_backward(model, tail, mse_gradient(tail.output(), target), grads);
  if (layer > 0) trace_backward(model, head, unmix_gradient(d_h, partner, lambda, x.rows()), grads);
  return loss;
}

}  // namespace

MethodKind parse_method_kind(const std::string& name) {
  auto it = method_names().find(name);
  if (it == method_names().end()) {
    std::string known;
    for (const auto& [k, v] : method_names()) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown method '" + name + "' (expected one of: " + known + ")");
  }
  return it->second;
}

std::string to_string(MethodKind kind) {
  for (const auto& [k, v] : method_names()) {
    if (v == kind) return k;
  }
  return "unknown";
}

void MethodSpec::validate(std::size_t layer_count) const {
  if (!(alpha > 0.0)) throw ConfigError("method alpha must be positive");
  if (fixed_lambda && !(*fixed_lambda >= 0.0 && *fixed_lambda <= 1.0)) {
    throw ConfigError("method lambda must lie in [0, 1]");
  }
  if (kind == MethodKind::kManifoldMixup || kind == MethodKind::kMixrManifold) {
    if (eligible_layers.empty()) throw InputError("eligible_layers must not be empty");
    for (auto l : eligible_layers) {
      if (l >= layer_count) {
        throw InputError("eligible layer " + std::to_string(l) + " is out of range for a " +
                         std::to_string(layer_count) + "-layer model");
      }
    }
  }
  if (kind == MethodKind::kGlobalKnn && tuner_budget < 3) {
    throw ConfigError("global_knn tuner_budget must be at least 3");
  }
}

std::uint64_t BaselineContext::model_seed(std::size_t r) const { return derive_seed(seed, {100, r}); }

MethodResult run_no_augmentation(const Dataset& train, const Dataset& test,
                                 const BaselineContext& ctx) {
  return run_repeats("none", test, ctx, [&](std::size_t r) {
    return train_regression(train, ctx.regression, ctx.model_seed(r));
  });
}

MethodResult run_original_mixup(const Dataset& train, const Dataset& test, const MethodSpec& spec,
                                const BaselineContext& ctx) {
  spec.validate(ctx.regression.hidden.size() + 1);
  const std::size_t pairs = spec.n_pairs == 0 ? train.size() : spec.n_pairs;
  return run_repeats("original_mixup", test, ctx, [&](std::size_t r) {
    const std::uint64_t seed = ctx.model_seed(r);
    const Dataset data =
        augment(train, original_mixup(train, pairs, spec.alpha, derive_seed(seed, {8}), spec.fixed_lambda));
    return train_regression(data, ctx.regression, seed);
  });
}

BatchObjective manifold_mixup_objective(const MethodSpec& spec, Rng& rng,
                                        std::vector<std::size_t>* layer_log) {
  return [spec, &rng, layer_log](const MlpModel& model, const Matrix& x, const Matrix& y,
                                 std::span<const std::size_t>, Gradients& grads) {
    const std::size_t layer = spec.eligible_layers[uniform_index(rng, spec.eligible_layers.size())];
    if (layer_log) layer_log->push_back(layer);
    std::vector<std::size_t> perm(x.rows());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const double lambda = draw_lambda(spec, rng);
    std::vector<std::optional<std::size_t>> partner(perm.begin(), perm.end());
    return mixed_layer_step(model, x, y, layer, partner, lambda, grads);
  };
}

MethodResult run_manifold_mixup(const Dataset& train, const Dataset& test, const MethodSpec& spec,
                                const BaselineContext& ctx) {
  spec.validate(ctx.regression.hidden.size() + 1);
  return run_repeats("manifold_mixup", test, ctx, [&](std::size_t r) {
    const std::uint64_t seed = ctx.model_seed(r);
    Rng rng(derive_seed(seed, {9}));
    TrainConfig cfg = ctx.regression.train;
    cfg.shuffle_seed = derive_seed(seed, {3});
    return mixr::train(MlpModel::create(ctx.regression.spec_for(train, seed)), train, cfg,
                 manifold_mixup_objective(spec, rng));
  });
}

std::vector<std::size_t> global_knn_grid(std::size_t examples, std::size_t budget) {
  if (examples < 2) throw InputError("global kNN needs at least two examples");
  if (budget < 3) throw ConfigError("global_knn tuner_budget must be at least 3");
  const std::size_t max_k = examples - 1;
  std::set<std::size_t> grid{0};
  if (budget >= examples) {
    for (std::size_t k = 1; k <= max_k; ++k) grid.insert(k);
  } else {
    const std::size_t points = budget - 1;
    for (std::size_t i = 0; i < points; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(points - 1);
      grid.insert(static_cast<std::size_t>(std::lround(std::pow(static_cast<double>(max_k), t))));
    }
  }
  return {grid.begin(), grid.end()};
}

GlobalKnnResult run_global_knn(const Dataset& train, const Dataset& val, const Dataset& test,
                               const MethodSpec& spec, const BaselineContext& ctx) {
  spec.validate(ctx.regression.hidden.size() + 1);
  const auto start = Clock::now();
  const KnnIndex index = build_index(train, ctx.workers);
  GlobalKnnResult out;
  const std::size_t seeds = out.seeds_per_k;

  auto constant_policy = [&](std::size_t k) {
    return MixPolicy::constant(train.size(), k, k == 0 ? KnnOptions{} : KnnOptions({0, k}));
  };
  std::map<std::size_t, double> tried;
  auto evaluate_ks = [&](const std::vector<std::size_t>& ks) {
    std::vector<MixPolicy> policies;
    for (auto k : ks) policies.push_back(constant_policy(k));
    std::vector<double> losses(ks.size() * seeds);
    parallel_for(losses.size(), ctx.workers, [&](std::size_t job) {
      EvalTask task{&train, &val, &index, &policies[job / seeds], &ctx.regression, MixConfig{},
                    derive_seed(ctx.seed, {200, job % seeds})};
      losses[job] = evaluate_policy(task);
    });
    for (std::size_t i = 0; i < ks.size(); ++i) {
      tried[ks[i]] = std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(i * seeds),
                                     losses.begin() + static_cast<std::ptrdiff_t>((i + 1) * seeds), 0.0) /
                     static_cast<double>(seeds);
    }
  };
  auto best = [&] {
    // Ties go to the smaller k.
    return std::ranges::min_element(tried, {}, [](const auto& kv) { return kv.second; })->first;
  };

  evaluate_ks(global_knn_grid(train.size(), spec.tuner_budget));
  const std::size_t coarse = best();
  const std::size_t step = std::max<std::size_t>(1, coarse / 8);
  std::vector<std::size_t> refine;
  for (long m : {-2L, -1L, 1L, 2L}) {
    const long k = static_cast<long>(coarse) + m * static_cast<long>(step);
    if (k < 0 || k > static_cast<long>(train.size()) - 1) continue;
    if (!tried.contains(static_cast<std::size_t>(k))) refine.push_back(static_cast<std::size_t>(k));
  }
  if (!refine.empty()) evaluate_ks(refine);
  out.best_k = best();
  out.tried.assign(tried.begin(), tried.end());

  out.result = run_mixr(train, test, constant_policy(out.best_k), ctx);
  out.result.method = "global_knn";
  out.result.runtime_minutes = minutes_since(start);
  return out;
}

MethodResult run_mixr(const Dataset& train, const Dataset& test, const MixPolicy& policy,
                      const BaselineContext& ctx, const MixConfig& mix) {
  if (policy.size() != train.size()) {
    throw InputError("policy covers " + std::to_string(policy.size()) + " examples but the training set has " +
                     std::to_string(train.size()));
  }
  const KnnIndex index = build_index(train, ctx.workers);
  return run_repeats("mixr", test, ctx, [&](std::size_t r) {
    const std::uint64_t seed = ctx.model_seed(r);
    MixConfig cfg = mix;
    cfg.seed = derive_seed(seed, {7});
    return train_regression(augment(train, mix_with_policy(train, index, policy, cfg)), ctx.regression, seed);
  });
}

BatchObjective mixr_manifold_objective(const KnnIndex& index, const Dataset& train,
                                       const MixPolicy& policy, const MethodSpec& spec, Rng& rng,
                                       std::vector<std::size_t>* layer_log) {
  if (policy.size() != train.size() || index.size() != train.size()) {
    throw InputError("policy length " + std::to_string(policy.size()) +
                     " does not match dataset size " + std::to_string(train.size()));
  }
  return [&index, &train, &policy, spec, &rng, layer_log](
             const MlpModel& model, const Matrix& x, const Matrix& y,
             std::span<const std::size_t> rows, Gradients& grads) {
    const std::size_t layer = spec.eligible_layers[uniform_index(rng, spec.eligible_layers.size())];
    if (layer_log) layer_log->push_back(layer);
    std::map<std::size_t, std::size_t> position;
    for (std::size_t r = 0; r < rows.size(); ++r) position.emplace(rows[r], r);
    Matrix xs = x;
    Matrix ys = y;
    std::vector<std::optional<std::size_t>> partner(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t k = policy.k(rows[r]);
      if (k == 0) continue;
      const std::size_t j = index.knn(rows[r], k)[uniform_index(rng, k)];
      auto [it, added] = position.emplace(j, xs.rows());
      if (added) {
        xs.append_row(train.features().row(j));
        ys.append_row(train.labels().row(j));
      }
      partner[r] = it->second;
    }
    const double lambda = spec.fixed_lambda.value_or(0.5);
    return mixed_layer_step(model, xs, ys, layer, partner, lambda, grads);
  };
}

MethodResult run_mixr_manifold(const Dataset& train, const Dataset& test, const MixPolicy& policy,
                               const MethodSpec& spec, const BaselineContext& ctx) {
  spec.validate(ctx.regression.hidden.size() + 1);
  const KnnIndex index = build_index(train, ctx.workers);
  return run_repeats("mixr_manifold", test, ctx, [&](std::size_t r) {
    const std::uint64_t seed = ctx.model_seed(r);
    Rng rng(derive_seed(seed, {9}));
    TrainConfig cfg = ctx.regression.train;
    cfg.shuffle_seed = derive_seed(seed, {3});
    return mixr::train(MlpModel::create(ctx.regression.spec_for(train, seed)), train, cfg,
                 mixr_manifold_objective(index, train, policy, spec, rng));
  });
}

}  // namespace mixr
