#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dataset.hpp"
#include "matrix.hpp"
#include "nn.hpp"
#include "random.hpp"

namespace testing {

inline mixr::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                  double scale = 1.0) {
  mixr::Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  mixr::Matrix m(rows, cols);
  for (auto& v : m.values()) v = normal(rng);
  return m;
}

inline mixr::Dataset random_dataset(std::size_t rows, std::size_t d, std::size_t e, std::uint64_t seed) {
  return mixr::Dataset(random_matrix(rows, d, seed), random_matrix(rows, e, seed + 1));
}

// y = x A^T + b, exactly linear labels.
inline mixr::Dataset linear_dataset(std::size_t rows, std::size_t d, std::size_t e, std::uint64_t seed,
                                    mixr::Matrix* a_out = nullptr, std::vector<double>* b_out = nullptr) {
  auto x = random_matrix(rows, d, seed);
  auto a = random_matrix(e, d, seed + 7);
  auto b = random_matrix(1, e, seed + 8);
  mixr::Matrix y(rows, e);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < e; ++o) {
      double s = b(0, o);
      for (std::size_t j = 0; j < d; ++j) s += a(o, j) * x(r, j);
      y(r, o) = s;
    }
  }
  if (a_out) *a_out = a;
  if (b_out) *b_out = {b.values().begin(), b.values().end()};
  return mixr::Dataset(std::move(x), std::move(y));
}

// Central differences of f over every parameter entry of `model`.
inline std::vector<std::vector<double>> numeric_gradient(mixr::MlpModel model,
                                                         const std::function<double(const mixr::MlpModel&)>& f,
                                                         double h = 1e-5) {
  std::vector<std::vector<double>> out;
  auto params = model.parameters();
  for (auto& p : params) {
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = f(model);
      p[i] = keep - h;
      const double down = f(model);
      p[i] = keep;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// max |a - b| / max(1, max|b|) over all entries; scale-aware relative error.
inline double relative_error(const std::vector<std::vector<double>>& a,
                             const std::vector<std::vector<double>>& b) {
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].size(); ++i) {
      diff = std::max(diff, std::abs(a[t][i] - b[t][i]));
      scale = std::max(scale, std::abs(b[t][i]));
    }
  }
  return diff / std::max(scale, 1e-8);
}

}  // namespace testing

#include "controller.hpp"

namespace testing {

// Controller whose logits are exactly `logits` (one linear layer fed a 1).
inline mixr::ControllerNet fixed_logits(const mixr::Matrix& logits, mixr::KnnOptions options) {
  mixr::DenseLayer layer{mixr::Matrix(logits.size(), 1,
                                      std::vector<double>(logits.values().begin(), logits.values().end())),
                         std::vector<double>(logits.size(), 0.0), mixr::Activation::kIdentity,
                         std::nullopt};
  return mixr::ControllerNet(mixr::MlpModel({layer}), logits.rows(), std::move(options));
}

}  // namespace testing
