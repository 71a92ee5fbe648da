#include <doctest.h>

#include <cmath>

#include "controller.hpp"
#include "error.hpp"
#include "support.hpp"

using namespace mixr;

TEST_CASE("softmax worked examples") {
  auto p = softmax_rows(Matrix{{0.0, 0.0}, {0.0, std::log(3.0)}});
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(1, 0) == doctest::Approx(0.25));
  CHECK(p(1, 1) == doctest::Approx(0.75));
  // Large logits stay finite.
  auto q = softmax_rows(Matrix{{1000.0, 0.0, -1000.0}});
  CHECK(q(0, 0) == doctest::Approx(1.0));
  CHECK(q(0, 2) == 0.0);
  auto lq = log_softmax_rows(Matrix{{1000.0, 0.0}});
  CHECK(lq(0, 1) == doctest::Approx(-1000.0));
  CHECK(std::isfinite(lq(0, 1)));
}

TEST_CASE("softmax rows sum to one and ignore shifts") {
  auto logits = testing::random_matrix(10, 5, 1, 3.0);
  auto p = softmax_rows(logits);
  Matrix shifted = logits;
  for (std::size_t r = 0; r < 10; ++r) {
    for (auto& v : shifted.row(r)) v += static_cast<double>(r) * 7.0 - 20.0;
  }
  auto ps = softmax_rows(shifted);
  for (std::size_t r = 0; r < 10; ++r) {
    double s = 0.0;
    for (double v : p.row(r)) s += v;
    CHECK(s == doctest::Approx(1.0));
    for (std::size_t c = 0; c < 5; ++c) CHECK(ps(r, c) == doctest::Approx(p(r, c)));
  }
}

TEST_CASE("uniform heads") {
  KnnOptions opts({0, 1, 2, 4});
  auto net = testing::fixed_logits(Matrix(6, 4, 0.5), opts);
  auto sample = sample_policy(net, 3);
  CHECK(sample.log_prob == doctest::Approx(6 * std::log(0.25)));
  CHECK(log_prob_of(net, sample.policy) == doctest::Approx(sample.log_prob));
  CHECK(policy_entropy(net) == doctest::Approx(6 * std::log(4.0)));
  CHECK(sample.entropy == doctest::Approx(policy_entropy(net)));
  // Ties resolve to the smallest k.
  CHECK(mode_policy(net).counts() == std::vector<std::size_t>(6, 0));
}

TEST_CASE("saturated heads always pick the dominant option") {
  KnnOptions opts({0, 1, 2});
  Matrix logits(5, 3, -50.0);
  for (std::size_t i = 0; i < 5; ++i) logits(i, i % 3) = 50.0;
  auto net = testing::fixed_logits(logits, opts);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = sample_policy(net, seed);
    for (std::size_t i = 0; i < 5; ++i) CHECK(s.policy.choice(i) == i % 3);
    CHECK(s.log_prob == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK(policy_entropy(net) < 1e-30);
}

TEST_CASE("sampled frequencies match the softmax within 3 sigma") {
  KnnOptions opts({0, 1, 2, 4});
  Matrix logits{{0.3, -1.0, 1.2, 0.0}};
  auto net = testing::fixed_logits(logits, opts);
  auto p = softmax_rows(logits);
  const std::size_t draws = 100000;
  std::vector<double> count(4, 0.0);
  for (std::size_t s = 0; s < draws; ++s) count[sample_policy(net, s).policy.choice(0)] += 1.0;
  for (std::size_t c = 0; c < 4; ++c) {
    const double sigma = std::sqrt(p(0, c) * (1 - p(0, c)) / draws);
    CHECK(std::abs(count[c] / draws - p(0, c)) < 3.0 * sigma);
  }
}

TEST_CASE("sample log-probabilities are consistent") {
  ControllerNet net(12, KnnOptions({0, 1, 2, 4, 8}), {.input_length = 4, .hidden = {10}, .seed = 2});
  auto lp = log_softmax_rows(policy_logits(net));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto s = sample_policy(net, seed);
    double total = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(s.per_example_log_prob[i] == doctest::Approx(lp(i, s.policy.choice(i))));
      total += s.per_example_log_prob[i];
    }
    CHECK(s.log_prob == doctest::Approx(total));
    CHECK(log_prob_of(net, s.policy) == doctest::Approx(total));
  }
  CHECK(sample_policy(net, 4).policy == sample_policy(net, 4).policy);
  CHECK_THROWS_AS(log_prob_of(net, MixPolicy::constant(3, 0, KnnOptions({0, 1, 2, 4, 8}))), InputError);
}

TEST_CASE("default controller shape") {
  ControllerNet net(7, KnnOptions({0, 1, 2}));
  CHECK(net.body().input_dim() == 16);
  CHECK(net.body().layer_count() == 5);
  for (std::size_t l = 0; l < 4; ++l) CHECK(net.body().layers()[l].out_dim() == 100);
  CHECK(net.body().output_dim() == 21);
  CHECK(net.fixed_input() == Matrix(1, 16, 1.0));
  CHECK_THROWS_AS(ControllerNet(0, KnnOptions({0, 1})), InputError);
}

TEST_CASE("logits_backward matches central differences of a logit functional") {
  ControllerNet net(4, KnnOptions({0, 1, 2}), {.input_length = 3, .hidden = {6, 5}, .seed = 7});
  auto w = testing::random_matrix(4, 3, 8);
  auto objective = [&](const MlpModel& body) {
    ControllerNet probe(body, 4, net.options());
    // Smooth functional of the log-probabilities.
    auto lp = log_softmax_rows(policy_logits(probe));
    double s = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) s += w.values()[i] * lp.values()[i];
    return s;
  };
  // d/dz of sum w . log_softmax(z) = w - p * sum(w) per row.
  auto p = softmax_rows(policy_logits(net));
  Matrix d(4, 3);
  for (std::size_t r = 0; r < 4; ++r) {
    double wsum = 0.0;
    for (std::size_t c = 0; c < 3; ++c) wsum += w(r, c);
    for (std::size_t c = 0; c < 3; ++c) d(r, c) = w(r, c) - p(r, c) * wsum;
  }
  auto analytic = logits_backward(net, d);
  auto numeric = testing::numeric_gradient(net.body(), objective);
  CHECK(testing::relative_error(analytic.tensors, numeric) < 1e-5);
  CHECK_THROWS_AS(logits_backward(net, Matrix(3, 3)), InputError);
}

TEST_CASE("mode policy picks the argmax and is shift invariant") {
  KnnOptions opts({0, 2, 4});
  Matrix logits{{0.1, 0.9, 0.3}, {2.0, 2.0, 1.0}, {-1.0, -2.0, -0.5}};
  CHECK(mode_policy(testing::fixed_logits(logits, opts)).counts() == std::vector<std::size_t>{2, 0, 4});
  Matrix shifted = logits;
  for (auto& v : shifted.values()) v += 100.0;
  CHECK(mode_policy(testing::fixed_logits(shifted, opts)) == mode_policy(testing::fixed_logits(logits, opts)));
}
