#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dataset.hpp"
#include "matrix.hpp"

namespace mixr {

enum class Activation { kRelu, kIdentity };

inline constexpr double kLayerNormEpsilon = 1e-5;

struct LayerNormParams {
  std::vector<double> gain;
  std::vector<double> shift;
};

// y = act(LN(x W^T + b)). weights is out x in.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;
  Activation activation = Activation::kIdentity;
  std::optional<LayerNormParams> layer_norm;

  std::size_t in_dim() const noexcept { return weights.cols(); }
  std::size_t out_dim() const noexcept { return weights.rows(); }
};

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 1;
  bool layer_norm = false;  // on hidden layers
  std::uint64_t seed = 0;
};

class MlpModel {
 public:
  MlpModel() = default;
  explicit MlpModel(std::vector<DenseLayer> layers, std::uint64_t seed = 0);

  // ReLU hidden layers, identity output, Glorot-uniform weights, zero bias.
  static MlpModel create(const MlpSpec& spec);

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::uint64_t seed() const noexcept { return seed_; }

  // Parameter tensors in a fixed order: per layer weights, bias, then
  // layer-norm gain and shift when present.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
  std::size_t parameter_count() const;

  bool operator==(const MlpModel& other) const;

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t seed_ = 0;
};

// Gradient tensors laid out like MlpModel::parameters().
struct Gradients {
  std::vector<std::vector<double>> tensors;

  static Gradients zeros_like(const MlpModel& model);
  void scale(double factor);
};

Matrix forward(const MlpModel& model, const Matrix& batch);

// Where a split forward pass stopped; forward_resume continues from here.
struct ResumePoint {
  std::size_t layer = 0;
  std::size_t layer_count = 0;
};

// Runs the first split_layer layers. split_layer == 0 returns the input.
std::pair<Matrix, ResumePoint> forward_split(const MlpModel& model, const Matrix& batch,
                                             std::size_t split_layer);
Matrix forward_resume(const MlpModel& model, const ResumePoint& resume, const Matrix& hidden);

// Activations cached by a forward pass over layers [begin, end) for backprop.
class ForwardTrace {
 public:
  const Matrix& output() const noexcept { return output_; }
  std::size_t begin() const noexcept { return begin_; }
  std::size_t end() const noexcept { return end_; }

 private:
  friend ForwardTrace trace_forward(const MlpModel&, const Matrix&, std::size_t, std::size_t);
  friend Matrix trace_backward(const MlpModel&, const ForwardTrace&, const Matrix&, Gradients&);

  struct LayerCache {
    Matrix input;
    Matrix normalized;             // layer-norm only
    std::vector<double> inv_std;   // layer-norm only, per row
    Matrix output;                 // post-activation
  };
  std::size_t begin_ = 0;
  std::size_t end_ = 0;
  std::vector<LayerCache> layers_;
  Matrix output_;
};

ForwardTrace trace_forward(const MlpModel& model, const Matrix& input, std::size_t begin,
                           std::size_t end);

// Accumulates parameter gradients for the traced layers into `grads` and
// returns the gradient with respect to the traced input.
Matrix trace_backward(const MlpModel& model, const ForwardTrace& trace, const Matrix& d_output,
                      Gradients& grads);

double mse_loss(const Matrix& pred, const Matrix& target);
Matrix mse_gradient(const Matrix& pred, const Matrix& target);

// MSE loss and its parameter gradient for one batch.
std::pair<double, Gradients> loss_and_gradients(const MlpModel& model, const Matrix& x,
                                                const Matrix& y);

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> shift);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(const MlpModel& model, AdamConfig cfg);

  // One descent step: params -= lr * m_hat / (sqrt(v_hat) + eps).
  void step(MlpModel& model, const Gradients& grads);

  std::uint64_t step_count() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  double lr = 1e-3;
  std::uint64_t shuffle_seed = 0;
};

// Computes the batch loss and accumulates its gradient into `grads`.
// `rows` are the dataset row ids making up the batch.
using BatchObjective = std::function<double(const MlpModel& model, const Matrix& x,
                                            const Matrix& y, std::span<const std::size_t> rows,
                                            Gradients& grads)>;

// epochs * ceil(S / batch_size) Adam steps on shuffled minibatches.
// Throws TrainingDiverged when a batch loss or parameter becomes non-finite.
MlpModel train(MlpModel model, const Dataset& data, const TrainConfig& cfg,
               const BatchObjective& objective = {});

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);
std::string model_to_json(const MlpModel& model);
MlpModel model_from_json(const std::string& text);

}  // namespace mixr
