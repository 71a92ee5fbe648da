#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "error.hpp"
#include "mixing.hpp"
#include "support.hpp"

using namespace mixr;

namespace {

// Reference Mix(D, P) straight from the definition.
std::vector<std::pair<std::size_t, std::size_t>> oracle_pairs(const Matrix& x, const std::vector<std::size_t>& k) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < x.rows(); ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) s += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
      d.emplace_back(s, j);
    }
    std::sort(d.begin(), d.end());
    for (std::size_t r = 0; r < k[i]; ++r) out.emplace_back(i, d[r].second);
  }
  return out;
}

}  // namespace

TEST_CASE("mix_pair worked examples") {
  std::vector<double> xi{0.0, 2.0}, yi{1.0}, xj{4.0, 6.0}, yj{5.0};
  auto [x, y] = mix_pair(xi, yi, xj, yj, 0.5);
  CHECK(x == std::vector<double>{2.0, 4.0});
  CHECK(y == std::vector<double>{3.0});
  auto [x1, y1] = mix_pair(xi, yi, xj, yj, 1.0);
  CHECK(x1 == xi);
  CHECK(y1 == yi);
  auto [x0, y0] = mix_pair(xi, yi, xj, yj, 0.0);
  CHECK(x0 == xj);
  auto [xq, yq] = mix_pair(xi, yi, xj, yj, 0.25);
  CHECK(xq[0] == doctest::Approx(3.0));
  CHECK(yq[0] == doctest::Approx(4.0));
  CHECK_THROWS_AS(mix_pair(xi, yi, xj, yj, 1.5), InputError);
  CHECK_THROWS_AS(mix_pair(xi, yi, std::vector<double>{1.0}, yj, 0.5), InputError);
}

TEST_CASE("three-point worked example") {
  Dataset data(Matrix{{0}, {1}, {2}}, Matrix{{0}, {10}, {20}});
  auto index = build_index(data);
  auto policy = MixPolicy::from_counts({1, 2, 0}, KnnOptions({0, 1, 2}));
  auto mixed = mix_with_policy(data, index, policy);
  REQUIRE(mixed.size() == 3);
  CHECK(mixed.provenance[0].i == 0);
  CHECK(mixed.provenance[0].j == 1);
  CHECK(mixed.provenance[1].j == 0);
  CHECK(mixed.provenance[2].j == 2);
  CHECK(mixed.features == Matrix{{0.5}, {0.5}, {1.5}});
  CHECK(mixed.labels == Matrix{{5}, {5}, {15}});
  auto aug = augment(data, mixed);
  CHECK(aug.size() == 6);
  CHECK(aug.features()(5, 0) == 1.5);
}

TEST_CASE("mix_with_policy matches the reference construction") {
  auto data = testing::random_dataset(40, 3, 2, 2);
  auto index = build_index(data);
  KnnOptions opts({0, 1, 2, 4, 8});
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> k(40);
    for (auto& v : k) v = opts[uniform_index(rng, opts.size())];
    auto policy = MixPolicy::from_counts(k, opts);
    auto mixed = mix_with_policy(data, index, policy);
    auto ref = oracle_pairs(data.features(), k);
    REQUIRE(mixed.size() == ref.size());
    CHECK(mixed.size() == policy.total_mixes());
    for (std::size_t r = 0; r < ref.size(); ++r) {
      CHECK(mixed.provenance[r].i == ref[r].first);
      CHECK(mixed.provenance[r].j == ref[r].second);
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(mixed.features(r, c) ==
              0.5 * data.features()(ref[r].first, c) + 0.5 * data.features()(ref[r].second, c));
      }
    }
  }
}

TEST_CASE("all-zero policy adds nothing") {
  auto data = testing::random_dataset(10, 2, 1, 3);
  auto index = build_index(data);
  auto mixed = mix_with_policy(data, index, MixPolicy::constant(10, 0, KnnOptions({0, 1})));
  CHECK(mixed.size() == 0);
  auto aug = augment(data, mixed);
  CHECK(aug.features() == data.features());
  CHECK(aug.labels() == data.labels());
}

TEST_CASE("policy validation and accessors") {
  KnnOptions opts({0, 2, 5});
  auto p = MixPolicy::from_counts({0, 5, 2, 5}, opts);
  CHECK(p.choices() == std::vector<std::size_t>{0, 2, 1, 2});
  CHECK(p.counts() == std::vector<std::size_t>{0, 5, 2, 5});
  CHECK(p.total_mixes() == 12);
  CHECK_THROWS_AS(MixPolicy::from_counts({3}, opts), InputError);
  CHECK_THROWS_AS(MixPolicy({3}, opts), InputError);
  auto data = testing::random_dataset(5, 1, 1, 1);
  CHECK_THROWS_AS(mix_with_policy(data, build_index(data), p), InputError);
}

TEST_CASE("mixing a linear target is exact") {
  Matrix a;
  std::vector<double> b;
  auto data = testing::linear_dataset(30, 4, 2, 6, &a, &b);
  auto index = build_index(data);
  MixConfig cfg{.mode = MixConfig::Mode::kBeta, .alpha = 0.7, .seed = 2};
  auto mixed = mix_with_policy(data, index, MixPolicy::constant(30, 3, KnnOptions({0, 3})), cfg);
  for (std::size_t r = 0; r < mixed.size(); ++r) {
    for (std::size_t o = 0; o < 2; ++o) {
      double y = b[o];
      for (std::size_t c = 0; c < 4; ++c) y += a(o, c) * mixed.features(r, c);
      CHECK(mixed.labels(r, o) == doctest::Approx(y).epsilon(1e-12));
    }
  }
}

TEST_CASE("mixed points lie on the segment between their sources") {
  auto data = testing::random_dataset(20, 3, 1, 7);
  auto index = build_index(data);
  MixConfig cfg{.mode = MixConfig::Mode::kBeta, .alpha = 2.0, .seed = 9};
  auto mixed = mix_with_policy(data, index, MixPolicy::constant(20, 4, KnnOptions({0, 4})), cfg);
  for (std::size_t r = 0; r < mixed.size(); ++r) {
    const auto& p = mixed.provenance[r];
    CHECK(p.lambda >= 0.0);
    CHECK(p.lambda <= 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
      const double expected = p.lambda * data.features()(p.i, c) + (1 - p.lambda) * data.features()(p.j, c);
      CHECK(mixed.features(r, c) == doctest::Approx(expected));
    }
  }
}

TEST_CASE("Beta lambdas have mean one half") {
  auto data = testing::random_dataset(200, 1, 1, 8);
  auto mixed = original_mixup(data, 20000, 0.4, 3);
  double sum = 0.0, sq = 0.0;
  for (const auto& p : mixed.provenance) {
    sum += p.lambda;
    sq += p.lambda * p.lambda;
  }
  const double n = static_cast<double>(mixed.size());
  const double m = sum / n;
  // Var of Beta(a, a) is 1 / (4 (2a + 1)).
  const double var = 1.0 / (4.0 * (2.0 * 0.4 + 1.0));
  CHECK(std::abs(m - 0.5) < 3.0 * std::sqrt(var / n));
  CHECK(sq / n - m * m == doctest::Approx(var).epsilon(0.05));
  auto fixed = original_mixup(data, 50, 1.0, 3, 0.3);
  for (const auto& p : fixed.provenance) CHECK(p.lambda == 0.3);
  CHECK_THROWS_AS(original_mixup(data, 0, 1.0, 3), InputError);
  CHECK_THROWS_AS(MixConfig{.lambda = 1.2}.validate(), InputError);
  CHECK_THROWS_AS((MixConfig{.mode = MixConfig::Mode::kBeta, .alpha = 0.0}.validate()), InputError);
}

TEST_CASE("distance bands") {
  CHECK(in_band(0.0, {0.0, 0.5}));
  CHECK_FALSE(in_band(0.5, {0.0, 0.5}));
  CHECK(in_band(0.5, {0.5, 1.0}));
  Dataset data(Matrix{{0}, {1}, {3}, {7}}, Matrix{{0}, {1}, {3}, {7}});
  auto index = build_index(data);
  // Normalized distances: 1/7, 3/7, 1, 2/7, 6/7, 4/7.
  auto all = mix_distance_band(data, index, {0.0, 1.0});
  CHECK(all.size() == 6);
  auto low = mix_distance_band(data, index, {0.0, 0.3});
  CHECK(low.size() == 2);
  auto top = mix_distance_band(data, index, {0.8, 1.0});
  CHECK(top.size() == 2);
  auto raw = mix_distance_band(data, index, {2.5, 3.5}, 0.5, false);
  REQUIRE(raw.size() == 1);
  CHECK(raw.features(0, 0) == 1.5);
  for (const auto& p : all.provenance) CHECK(p.i < p.j);
  CHECK_THROWS_AS(mix_distance_band(data, index, {0.5, 0.5}), InputError);
}

TEST_CASE("label error of mixed planted points grows with the neighbor count") {
  SyntheticSpec spec{.kind = SyntheticKind::kPlantedNeighborhood, .seed = 2, .clusters = 8,
                     .planted_k = 4, .slope_step = 3.0};
  SyntheticTarget f(spec);
  auto train = split_preset(generate_synthetic(spec)).train;
  auto index = build_index(train);
  KnnOptions opts({0, 1, 2, 4, 8, 16, 32});
  double previous = 0.0;
  for (std::size_t k : {1, 2, 4, 8, 16, 32}) {
    auto mixed = mix_with_policy(train, index, MixPolicy::constant(train.size(), k, opts));
    double err = 0.0;
    for (std::size_t r = 0; r < mixed.size(); ++r) {
      err += std::abs(mixed.labels(r, 0) - f(mixed.features.row(r))[0]);
    }
    err /= static_cast<double>(mixed.size());
    if (k <= 4) CHECK(err < 1e-12);
    CHECK(err >= previous - 1e-12);
    previous = err;
  }
  CHECK(previous > 0.5);
}
