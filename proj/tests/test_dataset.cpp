#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dataset.hpp"
#include "error.hpp"
#include "neighbors.hpp"
#include "support.hpp"

using namespace mixr;

namespace {

std::filesystem::path write_text(const std::string& name, const std::string& text) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path;
}

double column_mean(const Matrix& m, std::size_t c) {
  double s = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, c);
  return s / static_cast<double>(m.rows());
}

double column_std(const Matrix& m, std::size_t c) {
  const double mu = column_mean(m, c);
  double s = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) s += (m(r, c) - mu) * (m(r, c) - mu);
  return std::sqrt(s / static_cast<double>(m.rows()));
}

}  // namespace

TEST_CASE("load a three-row CSV") {
  auto path = write_text("mixr_three.csv", "a,y,b\n1,10,2\n3,30,4\n5,50,6\n");
  auto data = load_csv(path, {"y"});
  CHECK(data.size() == 3);
  CHECK(data.feature_dim() == 2);
  CHECK(data.feature_names() == std::vector<std::string>{"a", "b"});
  CHECK(data.label_names() == std::vector<std::string>{"y"});
  CHECK(data.features() == Matrix{{1, 2}, {3, 4}, {5, 6}});
  CHECK(data.labels() == Matrix{{10}, {30}, {50}});
  std::filesystem::remove(path);
}

TEST_CASE("CSV errors") {
  auto path = write_text("mixr_bad.csv", "a,y\n1,2\n");
  CHECK_THROWS_AS(load_csv(path, {"z"}), ParseError);
  write_text("mixr_bad.csv", "a,y\n1,nan\n");
  CHECK_THROWS_AS(load_csv(path, {"y"}), ParseError);
  write_text("mixr_bad.csv", "a,y\n1,2,3\n");
  CHECK_THROWS_AS(load_csv(path, {"y"}), ParseError);
  write_text("mixr_bad.csv", "a,y\n");
  CHECK_THROWS_AS(load_csv(path, {"y"}), ParseError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_csv(path, {"y"}), IoError);
}

TEST_CASE("dataset rejects empty and non-finite input") {
  CHECK_THROWS_AS(Dataset(Matrix(0, 1), Matrix(0, 1)), InputError);
  CHECK_THROWS_AS(Dataset(Matrix(2, 1), Matrix(3, 1)), InputError);
  CHECK_THROWS_AS(Dataset(Matrix{{NAN}}, Matrix{{1.0}}), InputError);
}

TEST_CASE("CSV write and load round trip") {
  auto data = testing::random_dataset(12, 3, 2, 4);
  auto path = std::filesystem::temp_directory_path() / "mixr_roundtrip.csv";
  write_csv(data, path);
  auto back = load_csv(path, {"y0", "y1"});
  CHECK(back.features() == data.features());
  CHECK(back.labels() == data.labels());
  std::filesystem::remove(path);
}

TEST_CASE("standardize gives zero mean and unit population std") {
  auto data = testing::random_dataset(40, 3, 1, 5);
  auto st = standardize(data, true);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::abs(column_mean(st.features(), c)) < 1e-12);
    CHECK(column_std(st.features(), c) == doctest::Approx(1.0));
  }
  CHECK(column_std(st.labels(), 0) == doctest::Approx(1.0));
  auto back = inverse_standardize(st);
  for (std::size_t i = 0; i < data.features().size(); ++i) {
    CHECK(back.features().values()[i] == doctest::Approx(data.features().values()[i]));
  }
  for (std::size_t i = 0; i < data.labels().size(); ++i) {
    CHECK(back.labels().values()[i] == doctest::Approx(data.labels().values()[i]));
  }
}

TEST_CASE("standardize worked example and constant columns") {
  Dataset data(Matrix{{1, 7}, {3, 7}}, Matrix{{0}, {1}});
  auto st = standardize(data);
  CHECK(st.feature_dim() == 1);
  CHECK(st.standardization()->dropped_features == std::vector<std::string>{"x1"});
  CHECK(st.features()(0, 0) == doctest::Approx(-1.0));
  CHECK(st.features()(1, 0) == doctest::Approx(1.0));
  CHECK(st.labels() == data.labels());
  CHECK_THROWS_AS(standardize(Dataset(Matrix{{1}, {1}}, Matrix{{0}, {1}})), InputError);

  // Train statistics applied to other rows.
  auto other = apply_standardization(Dataset(Matrix{{5, 0}}, Matrix{{0}}), *st.standardization());
  CHECK(other.features()(0, 0) == doctest::Approx(3.0));
}

TEST_CASE("split partitions the rows") {
  auto data = testing::random_dataset(50, 2, 1, 6);
  auto s = split(data, {.train_size = 30, .val_size = 10, .test_size = 10, .seed = 1});
  CHECK(s.train.size() == 30);
  CHECK(s.val->size() == 10);
  CHECK(s.test->size() == 10);
  std::set<std::size_t> all(s.train_ids.begin(), s.train_ids.end());
  all.insert(s.val_ids.begin(), s.val_ids.end());
  all.insert(s.test_ids.begin(), s.test_ids.end());
  CHECK(all.size() == 50);
  for (std::size_t i = 0; i < 30; ++i) {
    CHECK(s.train.features()(i, 0) == data.features()(s.train_ids[i], 0));
  }
  auto again = split(data, {.train_size = 30, .val_size = 10, .test_size = 10, .seed = 1});
  CHECK(again.train_ids == s.train_ids);
  auto other = split(data, {.train_size = 30, .val_size = 10, .test_size = 10, .seed = 2});
  CHECK(other.train_ids != s.train_ids);

  auto partial = split(data, {.train_size = 50});
  CHECK_FALSE(partial.val.has_value());
  CHECK_FALSE(partial.test.has_value());
  CHECK_THROWS_AS(split(data, {.train_size = 40, .val_size = 20}), InputError);
  CHECK_THROWS_AS(split(data, {.train_size = 0, .val_size = 20}), InputError);
}

TEST_CASE("toy1d dataset") {
  auto data = generate_synthetic({.kind = SyntheticKind::kToy1d, .seed = 3});
  auto s = split_preset(data);
  REQUIRE(s.train.size() == 4);
  CHECK(s.test->size() == 20);
  CHECK_FALSE(s.val.has_value());
  const double xs[] = {0.1, 0.7, 1.0, 2.3};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(s.train.features()(i, 0) == xs[i]);
    const double expected = std::sin(2.5 * xs[i]) + 0.5 * xs[i];
    CHECK(s.train.labels()(i, 0) == doctest::Approx(expected));
  }
  for (std::size_t i = 0; i < 20; ++i) {
    const double x = s.test->features()(i, 0);
    CHECK(x >= 0.0);
    CHECK(x <= 2.5);
  }
}

TEST_CASE("degree-one polynomial target is affine") {
  SyntheticSpec spec{.kind = SyntheticKind::kPolynomial, .seed = 8, .dims = 3, .label_dims = 2, .degree = 1};
  SyntheticTarget f(spec);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(3), b(3), m(3);
    const double t = uniform01(rng);
    for (std::size_t j = 0; j < 3; ++j) {
      a[j] = 2 * uniform01(rng) - 1;
      b[j] = 2 * uniform01(rng) - 1;
      m[j] = t * a[j] + (1 - t) * b[j];
    }
    auto fa = f(a), fb = f(b), fm = f(m);
    for (std::size_t l = 0; l < 2; ++l) CHECK(fm[l] == doctest::Approx(t * fa[l] + (1 - t) * fb[l]));
  }
  auto data = generate_synthetic(spec);
  CHECK(data.feature_dim() == 3);
  CHECK(data.label_dim() == 2);
  CHECK(data.size() == 200);
}

TEST_CASE("planted neighborhoods: midpoints are exact up to planted_k neighbors") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SyntheticSpec spec{.kind = SyntheticKind::kPlantedNeighborhood, .seed = seed,
                       .clusters = 8, .planted_k = 4, .slope_step = 3.0};
    SyntheticTarget f(spec);
    auto s = split_preset(generate_synthetic(spec));
    REQUIRE(s.train.size() == 8 * 5);
    auto index = build_index(s.train);
    auto midpoint_error = [&](std::size_t i, std::size_t rank) {
      const std::size_t j = index.neighbors(i)[rank];
      const double xm = 0.5 * (s.train.features()(i, 0) + s.train.features()(j, 0));
      const double ym = 0.5 * (s.train.labels()(i, 0) + s.train.labels()(j, 0));
      return std::abs(ym - f(std::vector<double>{xm})[0]);
    };
    double inside = 0.0;
    double outside = 0.0;
    for (std::size_t i = 0; i < s.train.size(); ++i) {
      for (std::size_t r = 0; r < 4; ++r) inside = std::max(inside, midpoint_error(i, r));
      outside = std::max(outside, midpoint_error(i, 4));
    }
    CHECK(inside < 1e-12);
    CHECK(outside > 0.1);
  }
}

TEST_CASE("planted generator validates its spec") {
  SyntheticSpec spec{.kind = SyntheticKind::kPlantedNeighborhood};
  spec.clusters = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), InputError);
  spec.clusters = 4;
  spec.planted_k = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), InputError);
  spec.planted_k = 4;
  spec.cluster_width = 0.6;
  CHECK_THROWS_AS(generate_synthetic(spec), InputError);
  spec.cluster_width = 0.3;
  spec.noise = -1.0;
  CHECK_THROWS_AS(generate_synthetic(spec), InputError);
  CHECK_THROWS_AS(parse_synthetic_kind("spiral"), InputError);
  CHECK(parse_synthetic_kind(to_string(SyntheticKind::kPlantedNeighborhood)) ==
        SyntheticKind::kPlantedNeighborhood);
}

TEST_CASE("synthetic generation is seeded") {
  SyntheticSpec spec{.kind = SyntheticKind::kPiecewise, .noise = 0.1, .seed = 4};
  auto a = generate_synthetic(spec);
  CHECK(generate_synthetic(spec).features() == a.features());
  spec.seed = 5;
  CHECK_FALSE(generate_synthetic(spec).features() == a.features());
}
