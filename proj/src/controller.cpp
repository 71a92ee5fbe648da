#include "controller.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "random.hpp"

namespace mixr {

ControllerNet::ControllerNet(std::size_t examples, KnnOptions options, const ControllerConfig& cfg)
    : ControllerNet(MlpModel::create(MlpSpec{.input_dim = cfg.input_length,
                                             .hidden = cfg.hidden,
                                             .output_dim = examples * options.size(),
                                             .layer_norm = false,
                                             .seed = cfg.seed}),
                    examples, options) {}

ControllerNet::ControllerNet(MlpModel body, std::size_t examples, KnnOptions options)
    : body_(std::move(body)), examples_(examples), options_(std::move(options)) {
  if (examples_ == 0) throw InputError("controller needs at least one example");
  if (body_.output_dim() != examples_ * options_.size()) {
    throw InputError("controller output dim " + std::to_string(body_.output_dim()) +
                     " != examples * options " + std::to_string(examples_ * options_.size()));
  }
  input_ = Matrix(1, body_.input_dim(), 1.0);
}

Matrix policy_logits(const ControllerNet& net) {
  Matrix out = forward(net.body(), net.fixed_input());
  return Matrix(net.examples(), net.option_count(),
                std::vector<double>(out.values().begin(), out.values().end()));
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    const double peak = *std::ranges::max_element(z);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - peak);
    const double log_norm = peak + std::log(sum);
    for (std::size_t c = 0; c < z.size(); ++c) out(r, c) = z[c] - log_norm;
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out = log_softmax_rows(logits);
  for (auto& v : out.values()) v = std::exp(v);
  return out;
}

namespace {

double head_entropy(std::span<const double> log_p) {
  double h = 0.0;
  for (double lp : log_p) h -= std::exp(lp) * lp;
  return h;
}

}  // namespace

PolicySample sample_policy(const ControllerNet& net, std::uint64_t seed) {
  const Matrix log_p = log_softmax_rows(policy_logits(net));
  Rng rng(mix_seed(seed));
  std::vector<std::size_t> choice(net.examples());
  std::vector<double> per_example(net.examples());
  double total = 0.0;
  double entropy = 0.0;
  for (std::size_t i = 0; i < net.examples(); ++i) {
    auto row = log_p.row(i);
    const double u = uniform01(rng);
    double cumulative = 0.0;
    std::size_t pick = row.size() - 1;
    for (std::size_t c = 0; c < row.size(); ++c) {
      cumulative += std::exp(row[c]);
      if (u < cumulative) {
        pick = c;
        break;
      }
    }
    choice[i] = pick;
    per_example[i] = row[pick];
    total += row[pick];
    entropy += head_entropy(row);
  }
  return PolicySample{MixPolicy(std::move(choice), net.options()), total, entropy,
                      std::move(per_example)};
}

double log_prob_of(const ControllerNet& net, const MixPolicy& policy) {
  if (policy.size() != net.examples() || policy.options().size() != net.option_count()) {
    throw InputError("policy shape does not match controller");
  }
  const Matrix log_p = log_softmax_rows(policy_logits(net));
  double total = 0.0;
  for (std::size_t i = 0; i < net.examples(); ++i) total += log_p(i, policy.choice(i));
  return total;
}

double policy_entropy(const ControllerNet& net) {
  const Matrix log_p = log_softmax_rows(policy_logits(net));
  double h = 0.0;
  for (std::size_t i = 0; i < net.examples(); ++i) h += head_entropy(log_p.row(i));
  return h;
}

MixPolicy mode_policy(const ControllerNet& net) {
  const Matrix logits = policy_logits(net);
  std::vector<std::size_t> choice(net.examples());
  for (std::size_t i = 0; i < net.examples(); ++i) {
    auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    choice[i] = best;
  }
  return MixPolicy(std::move(choice), net.options());
}

Gradients logits_backward(const ControllerNet& net, const Matrix& d_logits) {
  if (d_logits.rows() != net.examples() || d_logits.cols() != net.option_count()) {
    throw InputError("logits gradient shape mismatch");
  }
  auto trace = trace_forward(net.body(), net.fixed_input(), 0, net.body().layer_count());
  Matrix d_out(1, d_logits.size(),
               std::vector<double>(d_logits.values().begin(), d_logits.values().end()));
  auto grads = Gradients::zeros_like(net.body());
  trace_backward(net.body(), trace, d_out, grads);
  return grads;
}

}  // namespace mixr
