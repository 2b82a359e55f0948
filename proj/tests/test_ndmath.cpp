#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"

#include "bbnn/errors.hpp"
#include "bbnn/ndmath.hpp"
#include "helpers.hpp"

using namespace bbnn;

TEST_CASE("softplus at the symmetry point and both asymptotes") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double big = softplus(50.0);
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(50.0).epsilon(1e-15));
  const double small = softplus(-50.0);
  CHECK(small > 0.0);
  CHECK(small == doctest::Approx(std::exp(-50.0)).epsilon(1e-12));
  CHECK(std::isfinite(softplus(1000.0)));
  CHECK(softplus(-700.0) > 0.0);
}

TEST_CASE("softplus is continuous across the branch switch") {
  for (double x : {kSoftplusSwitch, -kSoftplusSwitch}) {
    const double lo = softplus(std::nextafter(x, 0.0));
    const double hi = softplus(std::nextafter(x, x > 0 ? 1e9 : -1e9));
    CHECK(std::abs(lo - hi) <= 1e-12 * std::max(1.0, std::abs(lo)));
  }
}

TEST_CASE("softplus inverse round-trips") {
  for (double y : {1e-6, 0.05, 0.5, 1.0, 3.0, 40.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  CHECK_THROWS(softplus_inverse(0.0));
}

TEST_CASE("log_sum_exp examples") {
  const std::vector<double> a{0.0, 0.0};
  CHECK(log_sum_exp(a) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> b{1000.0, 1000.0};
  CHECK(log_sum_exp(b) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  for (double v : {-3.7, 0.0, 12.5, 800.0}) {
    const std::vector<double> c{v};
    CHECK(log_sum_exp(c) == v);
  }
  CHECK_THROWS_WITH(log_sum_exp(std::vector<double>{}), "empty input");
}

TEST_CASE("sample_std_normal determinism and disjoint successive calls") {
  RngStream r1(1, 0), r2(1, 0);
  const Vector a1 = sample_std_normal(r1, 3), b1 = sample_std_normal(r1, 3);
  const Vector a2 = sample_std_normal(r2, 3), b2 = sample_std_normal(r2, 3);
  CHECK(a1 == a2);
  CHECK(b1 == b2);
  for (double x : a1)
    for (double y : b1) CHECK(x != y);
}

TEST_CASE("sample_std_normal moments over 10^6 draws") {
  RngStream rng(7, 3);
  const Vector v = sample_std_normal(rng, 1000000);
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(v.size() - 1);
  CHECK(std::abs(m) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("distinct stream ids are uncorrelated") {
  RngStream a(11, 0), b(11, 1);
  const std::size_t n = 100000;
  const Vector x = sample_std_normal(a, n), y = sample_std_normal(b, n);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("uniform stays in the open unit interval; below is in range") {
  RngStream rng(3);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(rng.below(7) < 7);
  }
}

TEST_CASE("substreams replay and differ from their parent") {
  RngStream p(5, 9);
  RngStream c1 = p.substream(2), c2 = p.substream(2), c3 = p.substream(3);
  const double a = c1.normal();
  CHECK(a == c2.normal());
  CHECK(a != c3.normal());
  RngStream fresh(5, 9);
  CHECK(fresh.normal() != a);
}

TEST_CASE("finite differences") {
  auto sq = [](std::span<const double> x) { return x[0] * x[0]; };
  const Vector x{3.0};
  CHECK(std::abs(finite_diff_grad(sq, x, 1e-4)[0] - 6.0) < 1e-7);
  auto cst = [](std::span<const double>) { return 4.2; };
  const Vector y{1.0, -2.0, 0.5};
  for (double g : finite_diff_grad(cst, y, 1e-4)) CHECK(g == 0.0);
  auto sp = [](std::span<const double> v) { return softplus(v[0]); };
  CHECK(std::abs(finite_diff_grad(sp, Vector{0.0}, 1e-4)[0] - 0.5) < 1e-6);
  auto bad = [](std::span<const double> v) { return v[1] > 0.0 ? std::nan("") : 0.0; };
  CHECK_THROWS_AS(finite_diff_grad(bad, Vector{0.0, 0.0}, 1e-3), NumericError);
  try {
    finite_diff_grad(bad, Vector{0.0, 0.0}, 1e-3);
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
}

TEST_CASE("matmul and select_rows") {
  const Matrix a(2, 3, Vector{1, 2, 3, 4, 5, 6});
  const Matrix b(3, 2, Vector{7, 8, 9, 10, 11, 12});
  const Matrix c = matmul(a, b);
  CHECK(c.data() == Vector{58, 64, 139, 154});
  CHECK_THROWS(matmul(a, a));
  const std::vector<std::size_t> idx{1, 0, 1};
  const Matrix s = a.select_rows(idx);
  CHECK(s.rows() == 3);
  CHECK(s(0, 0) == 4.0);
  CHECK(s(1, 2) == 3.0);
}

TEST_CASE("shuffle is a seeded permutation") {
  std::vector<std::size_t> v(50), w(50);
  for (std::size_t i = 0; i < 50; ++i) v[i] = w[i] = i;
  RngStream r1(4), r2(4);
  shuffle(v, r1);
  shuffle(w, r2);
  CHECK(v == w);
  CHECK(std::set<std::size_t>(v.begin(), v.end()).size() == 50);
}

TEST_CASE("parallel_for result is thread-count independent") {
  const std::size_t n = 257;
  auto run = [&](int threads) {
    std::vector<double> out(n);
    parallel_for(n, threads, [&](std::size_t i) {
      RngStream r = RngStream(1).substream(i);
      out[i] = r.normal();
    });
    return out;
  };
  CHECK(run(1) == run(4));
}
