#include "nn.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "error.hpp"
#include "random.hpp"

namespace mixr {

namespace {

std::size_t tensors_per_layer(const DenseLayer& layer) { return layer.layer_norm ? 4 : 2; }

std::size_t first_tensor(const MlpModel& model, std::size_t layer) {
  std::size_t idx = 0;
  for (std::size_t l = 0; l < layer; ++l) idx += tensors_per_layer(model.layers()[l]);
  return idx;
}

// Activation buffers are a few hundred KB and reallocated every step; with
// glibc's default thresholds each one is mmapped and unmapped again.
void keep_buffers_mapped() {
#ifdef __GLIBC__
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
  });
#endif
}

// Affine transform, optional layer norm and activation for one layer.
// Fills the cache when given; forward() and trace_forward() share this so
// both produce bitwise identical outputs.
Matrix layer_forward(const DenseLayer& layer, const Matrix& x, Matrix* normalized,
                     std::vector<double>* inv_std) {
  const std::size_t batch = x.rows();
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  Matrix z(batch, out);
  // W^T (in x out) so the inner loop runs over contiguous outputs.
  std::vector<double> wt(in * out);
  const double* w = layer.weights.values().data();
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t k = 0; k < in; ++k) wt[k * out + o] = w[o * in + k];
  }
  for (std::size_t r = 0; r < batch; ++r) {
    const double* xr = x.row(r).data();
    double* zr = z.row(r).data();
    for (std::size_t k = 0; k < in; ++k) {
      const double xk = xr[k];
      if (xk == 0.0) continue;
      const double* wk = wt.data() + k * out;
      for (std::size_t o = 0; o < out; ++o) zr[o] += xk * wk[o];
    }
    for (std::size_t o = 0; o < out; ++o) zr[o] += layer.bias[o];
  }
  if (layer.layer_norm) {
    if (normalized) *normalized = Matrix(batch, out);
    if (inv_std) inv_std->assign(batch, 0.0);
    const auto& gain = layer.layer_norm->gain;
    const auto& shift = layer.layer_norm->shift;
    const double n = static_cast<double>(out);
    for (std::size_t r = 0; r < batch; ++r) {
      double* zr = z.row(r).data();
      double mean = 0.0;
      for (std::size_t o = 0; o < out; ++o) mean += zr[o];
      mean /= n;
      double var = 0.0;
      for (std::size_t o = 0; o < out; ++o) var += (zr[o] - mean) * (zr[o] - mean);
      var /= n;
      const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
      if (inv_std) (*inv_std)[r] = inv;
      for (std::size_t o = 0; o < out; ++o) {
        const double nz = (zr[o] - mean) * inv;
        if (normalized) (*normalized)(r, o) = nz;
        zr[o] = gain[o] * nz + shift[o];
      }
    }
  }
  if (layer.activation == Activation::kRelu) {
    for (auto& v : z.values()) v = v > 0.0 ? v : 0.0;
  }
  return z;
}

void check_input(const MlpModel& model, const Matrix& batch, std::size_t layer) {
  if (model.layer_count() == 0) throw InputError("model has no layers");
  const std::size_t expected = layer < model.layer_count() ? model.layers()[layer].in_dim()
                                                           : model.output_dim();
  if (batch.cols() != expected) {
    throw InputError("input has " + std::to_string(batch.cols()) + " columns, layer " +
                     std::to_string(layer) + " expects " + std::to_string(expected));
  }
}

}  // namespace

MlpModel::MlpModel(std::vector<DenseLayer> layers, std::uint64_t seed)
    : layers_(std::move(layers)), seed_(seed) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.out_dim()) {
      throw InputError("layer " + std::to_string(l) + ": bias length does not match output dim");
    }
    if (layer.layer_norm && (layer.layer_norm->gain.size() != layer.out_dim() ||
                             layer.layer_norm->shift.size() != layer.out_dim())) {
      throw InputError("layer " + std::to_string(l) + ": layer-norm parameter shape mismatch");
    }
    if (l + 1 < layers_.size() && layer.out_dim() != layers_[l + 1].in_dim()) {
      throw InputError("layer " + std::to_string(l) + " output dim " +
                       std::to_string(layer.out_dim()) + " does not chain into layer " +
                       std::to_string(l + 1) + " input dim " +
                       std::to_string(layers_[l + 1].in_dim()));
    }
  }
}

MlpModel MlpModel::create(const MlpSpec& spec) {
  if (spec.input_dim == 0 || spec.output_dim == 0) {
    throw InputError("model input and output dims must be positive");
  }
  std::vector<std::size_t> dims{spec.input_dim};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.output_dim);
  Rng rng(mix_seed(spec.seed));
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    if (out == 0) throw InputError("hidden layer width must be positive");
    const bool hidden = l + 2 < dims.size();
    DenseLayer layer;
    layer.weights = Matrix(out, in);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> init(-limit, limit);
    for (auto& w : layer.weights.values()) w = init(rng);
    layer.bias.assign(out, 0.0);
    layer.activation = hidden ? Activation::kRelu : Activation::kIdentity;
    if (hidden && spec.layer_norm) {
      layer.layer_norm = LayerNormParams{std::vector<double>(out, 1.0),
                                         std::vector<double>(out, 0.0)};
    }
    layers.push_back(std::move(layer));
  }
  return MlpModel(std::move(layers), spec.seed);
}

std::size_t MlpModel::input_dim() const {
  if (layers_.empty()) throw InputError("model has no layers");
  return layers_.front().in_dim();
}

std::size_t MlpModel::output_dim() const {
  if (layers_.empty()) throw InputError("model has no layers");
  return layers_.back().out_dim();
}

std::vector<std::span<double>> MlpModel::parameters() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    out.emplace_back(layer.weights.values());
    out.emplace_back(layer.bias);
    if (layer.layer_norm) {
      out.emplace_back(layer.layer_norm->gain);
      out.emplace_back(layer.layer_norm->shift);
    }
  }
  return out;
}

std::vector<std::span<const double>> MlpModel::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& layer : layers_) {
    out.emplace_back(layer.weights.values());
    out.emplace_back(layer.bias);
    if (layer.layer_norm) {
      out.emplace_back(layer.layer_norm->gain);
      out.emplace_back(layer.layer_norm->shift);
    }
  }
  return out;
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (auto p : parameters()) n += p.size();
  return n;
}

bool MlpModel::operator==(const MlpModel& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.weights != b.weights || a.bias != b.bias || a.activation != b.activation) return false;
    if (a.layer_norm.has_value() != b.layer_norm.has_value()) return false;
    if (a.layer_norm && (a.layer_norm->gain != b.layer_norm->gain ||
                         a.layer_norm->shift != b.layer_norm->shift)) {
      return false;
    }
  }
  return true;
}

Gradients Gradients::zeros_like(const MlpModel& model) {
  Gradients g;
  for (auto p : model.parameters()) g.tensors.emplace_back(p.size(), 0.0);
  return g;
}

void Gradients::scale(double factor) {
  for (auto& t : tensors) {
    for (auto& v : t) v *= factor;
  }
}

Matrix forward(const MlpModel& model, const Matrix& batch) {
  check_input(model, batch, 0);
  Matrix h = batch;
  for (const auto& layer : model.layers()) h = layer_forward(layer, h, nullptr, nullptr);
  return h;
}

std::pair<Matrix, ResumePoint> forward_split(const MlpModel& model, const Matrix& batch,
                                             std::size_t split_layer) {
  if (split_layer >= model.layer_count()) {
    throw InputError("split layer " + std::to_string(split_layer) + " out of range [0, " +
                     std::to_string(model.layer_count()) + ")");
  }
  check_input(model, batch, 0);
  Matrix h = batch;
  for (std::size_t l = 0; l < split_layer; ++l) {
    h = layer_forward(model.layers()[l], h, nullptr, nullptr);
  }
  return {std::move(h), ResumePoint{split_layer, model.layer_count()}};
}

Matrix forward_resume(const MlpModel& model, const ResumePoint& resume, const Matrix& hidden) {
  if (resume.layer_count != model.layer_count() || resume.layer >= model.layer_count()) {
    throw InputError("resume point does not belong to this model");
  }
  check_input(model, hidden, resume.layer);
  Matrix h = hidden;
  for (std::size_t l = resume.layer; l < model.layer_count(); ++l) {
    h = layer_forward(model.layers()[l], h, nullptr, nullptr);
  }
  return h;
}

ForwardTrace trace_forward(const MlpModel& model, const Matrix& input, std::size_t begin,
                           std::size_t end) {
  if (begin > end || end > model.layer_count()) throw InputError("trace_forward: bad layer range");
  ForwardTrace trace;
  trace.begin_ = begin;
  trace.end_ = end;
  if (begin < model.layer_count()) check_input(model, input, begin);
  Matrix h = input;
  for (std::size_t l = begin; l < end; ++l) {
    ForwardTrace::LayerCache cache;
    cache.input = h;
    h = layer_forward(model.layers()[l], h, &cache.normalized, &cache.inv_std);
    cache.output = h;
    trace.layers_.push_back(std::move(cache));
  }
  trace.output_ = std::move(h);
  return trace;
}

Matrix trace_backward(const MlpModel& model, const ForwardTrace& trace, const Matrix& d_output,
                      Gradients& grads) {
  if (d_output.rows() != trace.output().rows() || d_output.cols() != trace.output().cols()) {
    throw InputError("trace_backward: gradient shape does not match traced output");
  }
  Matrix grad = d_output;
  for (std::size_t step = trace.layers_.size(); step-- > 0;) {
    const std::size_t l = trace.begin_ + step;
    const auto& layer = model.layers()[l];
    const auto& cache = trace.layers_[step];
    const std::size_t batch = grad.rows();
    const std::size_t in = layer.in_dim();
    const std::size_t out = layer.out_dim();
    const std::size_t t0 = first_tensor(model, l);

    if (layer.activation == Activation::kRelu) {
      auto o = cache.output.values();
      auto g = grad.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(o[i] > 0.0)) g[i] = 0.0;
      }
    }
    if (layer.layer_norm) {
      auto& d_gain = grads.tensors[t0 + 2];
      auto& d_shift = grads.tensors[t0 + 3];
      const auto& gain = layer.layer_norm->gain;
      const double n = static_cast<double>(out);
      std::vector<double> dn(out);
      for (std::size_t r = 0; r < batch; ++r) {
        double* gr = grad.row(r).data();
        const double* nr = cache.normalized.row(r).data();
        double mean_dn = 0.0;
        double mean_dn_n = 0.0;
        for (std::size_t o = 0; o < out; ++o) {
          d_gain[o] += gr[o] * nr[o];
          d_shift[o] += gr[o];
          dn[o] = gr[o] * gain[o];
          mean_dn += dn[o];
          mean_dn_n += dn[o] * nr[o];
        }
        mean_dn /= n;
        mean_dn_n /= n;
        const double inv = cache.inv_std[r];
        for (std::size_t o = 0; o < out; ++o) gr[o] = inv * (dn[o] - mean_dn - nr[o] * mean_dn_n);
      }
    }

    auto& d_w = grads.tensors[t0];
    auto& d_b = grads.tensors[t0 + 1];
    Matrix d_in(batch, in);
    const double* w = layer.weights.values().data();
    for (std::size_t r = 0; r < batch; ++r) {
      const double* gr = grad.row(r).data();
      const double* xr = cache.input.row(r).data();
      double* dxr = d_in.row(r).data();
      for (std::size_t o = 0; o < out; ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        d_b[o] += go;
        double* dwo = d_w.data() + o * in;
        const double* wo = w + o * in;
        for (std::size_t k = 0; k < in; ++k) {
          dwo[k] += go * xr[k];
          dxr[k] += go * wo[k];
        }
      }
    }
    grad = std::move(d_in);
  }
  return grad;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw InputError("mse_loss: prediction and target shapes differ");
  }
  if (pred.size() == 0) throw InputError("mse_loss: empty input");
  double s = 0.0;
  auto p = pred.values();
  auto t = target.values();
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

Matrix mse_gradient(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw InputError("mse_gradient: prediction and target shapes differ");
  }
  Matrix g(pred.rows(), pred.cols());
  const double scale = 2.0 / static_cast<double>(pred.size());
  auto p = pred.values();
  auto t = target.values();
  auto out = g.values();
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = scale * (p[i] - t[i]);
  return g;
}

std::pair<double, Gradients> loss_and_gradients(const MlpModel& model, const Matrix& x,
                                                const Matrix& y) {
  auto trace = trace_forward(model, x, 0, model.layer_count());
  const double loss = mse_loss(trace.output(), y);
  auto grads = Gradients::zeros_like(model);
  trace_backward(model, trace, mse_gradient(trace.output(), y), grads);
  return {loss, std::move(grads)};
}

std::vector<double> layer_norm(std::span<const double> x, std::span<const double> gain,
                               std::span<const double> shift) {
  if (x.size() < 2) throw InputError("layer_norm needs at least two features");
  if (gain.size() != x.size() || shift.size() != x.size()) {
    throw InputError("layer_norm: gain/shift length mismatch");
  }
  DenseLayer identity;
  identity.weights = Matrix(x.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) identity.weights(i, i) = 1.0;
  identity.bias.assign(x.size(), 0.0);
  identity.layer_norm = LayerNormParams{{gain.begin(), gain.end()}, {shift.begin(), shift.end()}};
  Matrix row(1, x.size(), std::vector<double>(x.begin(), x.end()));
  auto out = layer_forward(identity, row, nullptr, nullptr);
  return {out.values().begin(), out.values().end()};
}

Adam::Adam(const MlpModel& model, AdamConfig cfg) : cfg_(cfg) {
  for (auto p : model.parameters()) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(MlpModel& model, const Gradients& grads) {
  auto params = model.parameters();
  if (params.size() != m_.size() || grads.tensors.size() != m_.size()) {
    throw InputError("Adam::step: parameter layout mismatch");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    const auto& g = grads.tensors[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

MlpModel train(MlpModel model, const Dataset& data, const TrainConfig& cfg,
               const BatchObjective& objective) {
  keep_buffers_mapped();
  if (cfg.batch_size == 0) throw InputError("batch_size must be at least 1");
  if (cfg.epochs == 0) throw InputError("epochs must be at least 1");
  if (data.feature_dim() != model.input_dim() || data.label_dim() != model.output_dim()) {
    throw InputError("dataset shape " + std::to_string(data.feature_dim()) + "->" +
                     std::to_string(data.label_dim()) + " does not match model " +
                     std::to_string(model.input_dim()) + "->" +
                     std::to_string(model.output_dim()));
  }
  Adam adam(model, AdamConfig{.lr = cfg.lr});
  Rng rng(mix_seed(cfg.shuffle_seed));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  auto grads = Gradients::zeros_like(model);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + start, stop - start);
      Matrix xb = select_rows(data.features(), rows);
      Matrix yb = select_rows(data.labels(), rows);
      for (auto& t : grads.tensors) std::ranges::fill(t, 0.0);
      double loss = 0.0;
      if (objective) {
        loss = objective(model, xb, yb, rows, grads);
      } else {
        auto trace = trace_forward(model, xb, 0, model.layer_count());
        loss = mse_loss(trace.output(), yb);
        if (std::isfinite(loss)) trace_backward(model, trace, mse_gradient(trace.output(), yb), grads);
      }
      if (!std::isfinite(loss)) throw TrainingDiverged(step);
      adam.step(model, grads);
      for (auto p : model.parameters()) {
        if (!all_finite(p)) throw TrainingDiverged(step);
      }
      ++step;
    }
  }
  return model;
}

std::string model_to_json(const MlpModel& model) {
  nlohmann::json j;
  j["format"] = "mixr-mlp";
  j["version"] = 1;
  j["seed"] = model.seed();
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& layer : model.layers()) {
    nlohmann::json l;
    l["in"] = layer.in_dim();
    l["out"] = layer.out_dim();
    l["activation"] = layer.activation == Activation::kRelu ? "relu" : "identity";
    l["weights"] = std::vector<double>(layer.weights.values().begin(), layer.weights.values().end());
    l["bias"] = layer.bias;
    if (layer.layer_norm) {
      l["layer_norm"] = {{"gain", layer.layer_norm->gain}, {"shift", layer.layer_norm->shift}};
    } else {
      l["layer_norm"] = nullptr;
    }
    layers.push_back(std::move(l));
  }
  return j.dump();
}

MlpModel model_from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    if (j.at("format") != "mixr-mlp") throw ParseError("not a mixr model checkpoint");
    std::vector<DenseLayer> layers;
    for (const auto& l : j.at("layers")) {
      DenseLayer layer;
      const auto in = l.at("in").get<std::size_t>();
      const auto out = l.at("out").get<std::size_t>();
      layer.weights = Matrix(out, in, l.at("weights").get<std::vector<double>>());
      layer.bias = l.at("bias").get<std::vector<double>>();
      const auto act = l.at("activation").get<std::string>();
      if (act == "relu") {
        layer.activation = Activation::kRelu;
      } else if (act == "identity") {
        layer.activation = Activation::kIdentity;
      } else {
        throw ParseError("unknown activation '" + act + "'");
      }
      if (!l.at("layer_norm").is_null()) {
        layer.layer_norm = LayerNormParams{l["layer_norm"].at("gain").get<std::vector<double>>(),
                                           l["layer_norm"].at("shift").get<std::vector<double>>()};
      }
      layers.push_back(std::move(layer));
    }
    return MlpModel(std::move(layers), j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model checkpoint: ") + e.what());
  }
}

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write model checkpoint '" + path.string() + "'");
  f << model_to_json(model) << '\n';
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read model checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace mixr
