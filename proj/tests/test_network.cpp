#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "bbnn/network.hpp"
#include "helpers.hpp"

using namespace bbnn;

namespace {
Vector random_weights(const MlpArchitecture& a, RngStream& rng, double scale = 0.7) {
  Vector w(param_count(a));
  for (double& v : w) v = scale * rng.normal();
  return w;
}
Matrix random_x(std::size_t n, std::size_t d, RngStream& rng) {
  Matrix x(n, d);
  for (double& v : x.data()) v = rng.normal();
  return x;
}
}  // namespace

TEST_CASE("param_count examples") {
  CHECK(param_count(parse_architecture("2-2")) == 6);
  CHECK(param_count(parse_architecture("4-8-3")) == 67);
  for (std::size_t d : {1, 5, 30})
    for (std::size_t k : {2, 3, 7}) CHECK(param_count(MlpArchitecture{{d, k}}) == (d + 1) * k);
  CHECK(weight_offset(parse_architecture("4-8-3"), 1) == 40);
}

TEST_CASE("architecture validation and descriptors") {
  CHECK_THROWS(parse_architecture("4"));
  CHECK_THROWS(parse_architecture("4-1"));
  CHECK_THROWS(parse_architecture("4-0-2"));
  CHECK_THROWS(parse_architecture("4-x-2"));
  const auto a = parse_architecture("30-32-2");
  CHECK(a.describe() == "30-32-2");
  CHECK(architecture_from_json(to_json(a)) == a);
}

TEST_CASE("forward with all-zero weights is uniform") {
  const auto a = parse_architecture("3-5-4");
  const Vector w(param_count(a), 0.0);
  const Vector lp = forward(a, w, Vector{0.3, -1.0, 2.0});
  for (double v : lp) CHECK(v == doctest::Approx(-std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("forward matches a hand-computed 2-2-2 chain") {
  const auto a = parse_architecture("2-2-2");
  // W1 = [[1, -1], [0.5, 2]], b1 = [0.1, -3]; W2 = [[2, 0], [-1, 1]], b2 = [0, 0.5]
  const Vector w{1, -1, 0.5, 2, 0.1, -3, 2, 0, -1, 1, 0, 0.5};
  const Vector x{0.7, 0.2};
  const double h0 = std::max(0.0, 1 * 0.7 - 1 * 0.2 + 0.1);  // 0.6
  const double h1 = std::max(0.0, 0.5 * 0.7 + 2 * 0.2 - 3);   // relu(-2.25) = 0
  const double z0 = 2 * h0, z1 = -h0 + h1 + 0.5;
  const double m = std::max(z0, z1);
  const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
  const Vector lp = forward(a, w, x);
  CHECK(std::abs(lp[0] - (z0 - lse)) < 1e-12);
  CHECK(std::abs(lp[1] - (z1 - lse)) < 1e-12);
  const Vector raw = forward_raw(a, w, x);
  CHECK(std::abs(raw[0] - z0) < 1e-15);
  CHECK(std::abs(raw[1] - z1) < 1e-15);
  CHECK_THROWS(forward(a, w, Vector{1.0}));
  CHECK_THROWS(forward(a, Vector(3, 0.0), x));
}

TEST_CASE("a constant shift of the output biases leaves log-softmax unchanged") {
  const auto a = parse_architecture("3-4-3");
  RngStream rng(3);
  Vector w = random_weights(a, rng);
  const Vector x{0.1, -0.5, 0.9};
  const Vector before = forward(a, w, x);
  const std::size_t b2 = weight_offset(a, 1) + 4 * 3;
  for (std::size_t k = 0; k < 3; ++k) w[b2 + k] += 7.25;
  const Vector after = forward(a, w, x);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(before[k] - after[k]) < 1e-12);
}

TEST_CASE("forward is deterministic") {
  const auto a = parse_architecture("5-6-3");
  RngStream rng(4);
  const Vector w = random_weights(a, rng);
  const Vector x{1, 2, 3, 4, 5};
  CHECK(forward(a, w, x) == forward(a, w, x));
}

TEST_CASE("loss_and_grad examples") {
  const auto a = parse_architecture("2-3");
  const Vector zero(param_count(a), 0.0);
  const Matrix x(2, 2, Vector{0.5, 1.0, -1.0, 2.0});
  const std::vector<int> y{0, 2};
  CHECK(loss_and_grad(a, zero, x, y, 0.0).loss == doctest::Approx(std::log(3.0)).epsilon(1e-15));

  // Huge correct-class biases: loss 0 and zero data gradient.
  Vector w(param_count(a), 0.0);
  const std::vector<int> y0{0, 0};
  w[6] = 800.0;
  const auto lg = loss_and_grad(a, w, x, y0, 0.0);
  CHECK(lg.loss == 0.0);
  for (double g : lg.grad) CHECK(g == 0.0);

  const std::vector<int> bad{0, 3};
  CHECK_THROWS_WITH(loss_and_grad(a, zero, x, bad, 0.0), doctest::Contains("sample 1"));
}

TEST_CASE("backprop matches finite differences on a random 2-4-3 net") {
  const auto a = parse_architecture("2-4-3");
  RngStream rng(99);
  const Vector w = random_weights(a, rng);
  const Matrix x = random_x(5, 2, rng);
  const std::vector<int> y{0, 2, 1, 1, 0};
  for (double l2 : {0.0, 0.01}) {
    const auto lg = loss_and_grad(a, w, x, y, l2);
    const Vector fd =
        finite_diff_grad([&](std::span<const double> v) { return loss_and_grad(a, v, x, y, l2).loss; }, w, 1e-6);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(testutil::rel_err(lg.grad[i], fd[i]) < 1e-5);
  }
}

TEST_CASE("loss is invariant to batch order") {
  const auto a = parse_architecture("3-4-2");
  RngStream rng(5);
  const Vector w = random_weights(a, rng);
  const Matrix x = random_x(6, 3, rng);
  const std::vector<int> y{0, 1, 1, 0, 1, 0};
  const std::vector<std::size_t> fwd{0, 1, 2, 3, 4, 5}, rev{5, 4, 3, 2, 1, 0};
  CHECK(loss_and_grad(a, w, x, y, fwd, 0.0).loss ==
        doctest::Approx(loss_and_grad(a, w, x, y, rev, 0.0).loss).epsilon(1e-14));
}

TEST_CASE("softplus variance head") {
  CHECK(softplus_variance_head(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus_variance_head(2.0) == doctest::Approx(2.126928).epsilon(1e-6));
  for (double r : {-50.0, -300.0, -700.0}) {
    CHECK(softplus_variance_head(r) > 0.0);
    CHECK(softplus_variance_head(r) < 1e-20);
  }
}

TEST_CASE("gaussian variance-head loss gradient matches finite differences") {
  const auto a = parse_architecture("3-4-4", OutputKind::kMeanAndSoftplusVariance);
  RngStream rng(17);
  const Vector w = random_weights(a, rng, 0.4);
  const Matrix x = random_x(4, 3, rng);
  const Matrix t = random_x(4, 2, rng);
  const auto lg = gaussian_nll_and_grad(a, w, x, t);
  const Vector fd =
      finite_diff_grad([&](std::span<const double> v) { return gaussian_nll_and_grad(a, v, x, t).loss; }, w, 1e-6);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(testutil::rel_err(lg.grad[i], fd[i]) < 1e-5);
  const auto mv = forward_mean_variance(a, w, x.row(0));
  CHECK(mv.mean.size() == 2);
  for (double v : mv.variance) CHECK(v > 0.0);
}

TEST_CASE("predict_proba rows lie on the simplex") {
  const auto a = parse_architecture("4-8-3");
  RngStream rng(6);
  const Vector w = random_weights(a, rng, 2.0);
  const Matrix x = random_x(20, 4, rng);
  const Matrix p = predict_proba(a, w, x);
  for (std::size_t i = 0; i < 20; ++i) {
    double s = 0.0;
    for (double v : p.row(i)) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}
