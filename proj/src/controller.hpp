#pragma once

#include <cstdint>
#include <vector>

#include "mixing.hpp"
#include "neighbors.hpp"
#include "nn.hpp"

namespace mixr {

struct ControllerConfig {
  std::size_t input_length = 16;
  std::vector<std::size_t> hidden{100, 100, 100, 100};
  std::uint64_t seed = 0;
};

// MLP policy network. A fixed all-ones input is mapped to S * |N| logits,
// read row-major as one softmax head per training example.
class ControllerNet {
 public:
  ControllerNet(std::size_t examples, KnnOptions options, const ControllerConfig& cfg = {});
  ControllerNet(MlpModel body, std::size_t examples, KnnOptions options);

  const MlpModel& body() const noexcept { return body_; }
  MlpModel& body() noexcept { return body_; }
  std::size_t examples() const noexcept { return examples_; }
  std::size_t option_count() const noexcept { return options_.size(); }
  const KnnOptions& options() const noexcept { return options_; }
  const Matrix& fixed_input() const noexcept { return input_; }

 private:
  MlpModel body_;
  std::size_t examples_;
  KnnOptions options_;
  Matrix input_;
};

struct PolicySample {
  MixPolicy policy;
  double log_prob = 0.0;
  double entropy = 0.0;
  std::vector<double> per_example_log_prob;
};

Matrix policy_logits(const ControllerNet& net);
Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);

// Independent categorical draw per example from the softmax heads.
PolicySample sample_policy(const ControllerNet& net, std::uint64_t seed);

// Joint log-probability of the given choices.
double log_prob_of(const ControllerNet& net, const MixPolicy& policy);

// Sum of per-head entropies.
double policy_entropy(const ControllerNet& net);

// Argmax per example; ties resolve to the smaller k.
MixPolicy mode_policy(const ControllerNet& net);

// Backpropagates d(objective)/d(logits) (S x |N|) to controller parameters.
Gradients logits_backward(const ControllerNet& net, const Matrix& d_logits);

}  // namespace mixr
