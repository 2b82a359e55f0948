#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"

#include "bbnn/distributions.hpp"
#include "bbnn/errors.hpp"
#include "helpers.hpp"

using namespace bbnn;

namespace {
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

DiagonalGaussian random_gaussian(RngStream& rng, std::size_t d) {
  Vector mu(d), sigma(d);
  for (std::size_t i = 0; i < d; ++i) {
    mu[i] = 2.0 * rng.normal();
    sigma[i] = 0.3 + 1.5 * rng.uniform();
  }
  return DiagonalGaussian::with_stddevs(mu, sigma);
}

double normal_logpdf(double x, double mu, double s) {
  return -0.5 * ((x - mu) / s) * ((x - mu) / s) - std::log(s) - kHalfLog2Pi;
}
}  // namespace

TEST_CASE("diag_log_prob examples") {
  const auto g = DiagonalGaussian::with_stddev({0.0}, 1.0);
  CHECK(diag_log_prob(g, Vector{0.0}) == doctest::Approx(-0.918939).epsilon(1e-6));
  const auto h = DiagonalGaussian::with_stddev({1.0}, 2.0);
  CHECK(diag_log_prob(h, Vector{3.0}) == doctest::Approx(-2.112086).epsilon(1e-6));
  CHECK(diag_log_prob(h, Vector{3.0}) ==
        doctest::Approx(-std::log(2.0) - kHalfLog2Pi - 0.5).epsilon(1e-12));
  const auto g2 = DiagonalGaussian::with_stddevs({0.5, -1.0}, Vector{0.7, 1.3});
  CHECK(diag_log_prob(g2, Vector{0.1, 0.4}) ==
        doctest::Approx(normal_logpdf(0.1, 0.5, 0.7) + normal_logpdf(0.4, -1.0, 1.3)).epsilon(1e-12));
  CHECK_THROWS(diag_log_prob(g2, Vector{0.0}));
}

TEST_CASE("density integrates to one") {
  const auto g = DiagonalGaussian::with_stddev({0.7}, 1.9);
  const double s = 1.9, lo = 0.7 - 8 * s, hi = 0.7 + 8 * s;
  const std::size_t n = 20001;
  const double dx = (hi - lo) / static_cast<double>(n - 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    acc += w * std::exp(diag_log_prob(g, Vector{lo + dx * static_cast<double>(i)}));
  }
  CHECK(std::abs(acc * dx - 1.0) < 1e-6);
}

TEST_CASE("diag_sample_with_noise") {
  RngStream rng(1);
  const DiagonalGaussian degenerate(Vector{1.0, -2.0, 3.0}, Vector(3, -50.0));
  for (int i = 0; i < 10; ++i) {
    const auto s = diag_sample_with_noise(degenerate, rng);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(s.x[k] - degenerate.mean()[k]) < 1e-20 * std::max(1.0, std::abs(s.eps[k])) + 1e-20);
  }
  const auto g = random_gaussian(rng, 4);
  CHECK(g.transform(Vector(4, 0.0)) == g.mean());

  const auto std1 = DiagonalGaussian::with_stddev({0.0}, 1.0);
  std::vector<double> xs;
  for (int i = 0; i < 100000; ++i) xs.push_back(diag_sample_with_noise(std1, rng).x[0]);
  const double v = testutil::sample_var(xs);
  // Var of the sample variance of a normal is 2 sigma^4 / (n - 1).
  CHECK(std::abs(v - 1.0) < 3.0 * std::sqrt(2.0 / 99999.0));
}

TEST_CASE("kl_diag_to_std_normal examples") {
  CHECK(kl_diag_to_std_normal(DiagonalGaussian::with_stddev(Vector(5, 0.0), 1.0)) == 0.0);
  CHECK(kl_diag_to_std_normal(DiagonalGaussian::with_stddev({1.0}, 1.0)) == doctest::Approx(0.5).epsilon(1e-15));
  const auto one = DiagonalGaussian::with_stddev({0.3}, 0.7);
  const auto many = DiagonalGaussian::with_stddev(Vector(7, 0.3), 0.7);
  CHECK(kl_diag_to_std_normal(many) == doctest::Approx(7.0 * kl_diag_to_std_normal(one)).epsilon(1e-14));
}

TEST_CASE("kl is monotone when every sigma above one is doubled") {
  const auto g = DiagonalGaussian::with_stddevs({0.1, -0.4}, Vector{1.2, 2.0});
  const auto h = DiagonalGaussian::with_stddevs({0.1, -0.4}, Vector{2.4, 4.0});
  CHECK(kl_diag_to_std_normal(h) > kl_diag_to_std_normal(g));
}

TEST_CASE("closed-form KL matches 10^5-sample Monte Carlo on 20 random instances") {
  RngStream gen(2024);
  const auto prior = DiagonalGaussian::with_stddev(Vector(3, 0.0), 1.0);
  for (int inst = 0; inst < 20; ++inst) {
    const auto q = random_gaussian(gen, 3);
    RngStream rng(inst, 77);
    const KlEstimate e = kl_mc([&](RngStream& r) { return diag_sample_with_noise(q, r).x; },
                               [&](std::span<const double> x) { return q.log_prob(x); },
                               [&](std::span<const double> x) { return prior.log_prob(x); }, 100000, rng);
    CHECK(e.n_samples == 100000);
    CHECK(e.value >= -3.0 * e.std_error);
    CHECK(std::abs(e.value - kl_diag_to_std_normal(q)) <= 3.0 * e.std_error);
  }
}

TEST_CASE("kl_mc examples") {
  RngStream rng(9);
  const auto q = DiagonalGaussian::with_stddev({0.4, -1.0}, 0.8);
  auto lq = [&](std::span<const double> x) { return q.log_prob(x); };
  auto sq = [&](RngStream& r) { return diag_sample_with_noise(q, r).x; };
  const auto same = kl_mc(sq, lq, lq, 1000, rng);
  CHECK(same.value == 0.0);
  CHECK(same.std_error == 0.0);

  const auto n10 = DiagonalGaussian::with_stddev({1.0}, 1.0);
  const auto n00 = DiagonalGaussian::with_stddev({0.0}, 1.0);
  const auto n02 = DiagonalGaussian::with_stddev({0.0}, 2.0);
  auto run = [&](const DiagonalGaussian& a, const DiagonalGaussian& b) {
    return kl_mc([&](RngStream& r) { return diag_sample_with_noise(a, r).x; },
                 [&](std::span<const double> x) { return a.log_prob(x); },
                 [&](std::span<const double> x) { return b.log_prob(x); }, 100000, rng);
  };
  const auto e1 = run(n10, n00);
  CHECK(std::abs(e1.value - 0.5) <= 3.0 * e1.std_error);
  const auto e2 = run(n02, n00);
  const double truth = 0.5 * (4.0 - 1.0 - std::log(4.0));
  CHECK(truth == doctest::Approx(0.806853).epsilon(1e-6));
  CHECK(std::abs(e2.value - truth) <= 3.0 * e2.std_error);

  auto bad = [](std::span<const double> x) { return x[0] > 0 ? std::nan("") : 0.0; };
  CHECK_THROWS_AS(kl_mc(sq, bad, lq, 100, rng), NumericError);
}

TEST_CASE("mixture_log_prob examples and endpoint identities") {
  const auto a = DiagonalGaussian::with_stddev({-2.0}, 1.0);
  const auto b = DiagonalGaussian::with_stddev({2.0}, 1.0);
  const Vector x0{0.0};
  CHECK(mixture_log_prob(GaussianMixture(a), Vector{0.3}) == diag_log_prob(a, Vector{0.3}));
  const GaussianMixture twin({a, a}, Vector{0.3, 0.7});
  CHECK(mixture_log_prob(twin, Vector{0.3}) == doctest::Approx(diag_log_prob(a, Vector{0.3})).epsilon(1e-14));
  const GaussianMixture ab({a, b}, Vector{0.5, 0.5});
  // ln((pdf(0; -2, 1) + pdf(0; 2, 1)) / 2) = -2 - ln(2 pi) / 2
  CHECK(mixture_log_prob(ab, x0) == doctest::Approx(-2.918939).epsilon(1e-6));
  CHECK(mixture_log_prob(ab, x0) ==
        doctest::Approx(std::log(0.5 * std::exp(normal_logpdf(0, -2, 1)) + 0.5 * std::exp(normal_logpdf(0, 2, 1))))
            .epsilon(1e-13));
  CHECK_THROWS(mixture_log_prob(ab, Vector{0.0, 1.0}));

  const GaussianMixture base(a);
  const auto at0 = base.with_component(b, 0.0);
  const auto at1 = base.with_component(b, 1.0);
  CHECK(at0.size() == 1);
  CHECK(at0.components().front().mean() == a.mean());
  CHECK(at1.size() == 1);
  CHECK(at1.components().front().mean() == b.mean());
  for (double x : {-3.0, 0.1, 2.5}) {
    CHECK(mixture_log_prob(at0, Vector{x}) == diag_log_prob(a, Vector{x}));
    CHECK(mixture_log_prob(at1, Vector{x}) == diag_log_prob(b, Vector{x}));
  }
  CHECK_THROWS(base.with_component(b, 1.5));
  const auto mid = base.with_component(b, 0.25);
  CHECK(mid.weights() == Vector{0.75, 0.25});
}

TEST_CASE("GaussianMixture validation") {
  const auto a = DiagonalGaussian::with_stddev({0.0}, 1.0);
  CHECK_THROWS(GaussianMixture({a, a}, Vector{0.5, 0.6}));
  CHECK_THROWS(GaussianMixture({a, a}, Vector{-0.5, 1.5}));
  CHECK_THROWS(GaussianMixture({}, Vector{}));
  CHECK_THROWS(GaussianMixture({a, DiagonalGaussian::with_stddev({0.0, 1.0}, 1.0)}, Vector{0.5, 0.5}));
}

TEST_CASE("mixture_sample component frequencies") {
  const auto a = DiagonalGaussian::with_stddev({-5.0}, 0.1);
  const auto b = DiagonalGaussian::with_stddev({5.0}, 0.1);
  RngStream rng(12);
  const GaussianMixture only_a({a, b}, Vector{1.0, 0.0});
  for (int i = 0; i < 1000; ++i) REQUIRE(mixture_sample_with_component(only_a, rng).component == 0);
  const GaussianMixture m({a, b}, Vector{0.3, 0.7});
  const int n = 100000;
  int c0 = 0;
  for (int i = 0; i < n; ++i) c0 += mixture_sample_with_component(m, rng).component == 0 ? 1 : 0;
  const double se = std::sqrt(0.3 * 0.7 / n);
  CHECK(std::abs(static_cast<double>(c0) / n - 0.3) <= 3.0 * se);
}

TEST_CASE("single-component mixture sampling matches diag sampling (two-sample KS)") {
  const auto g = DiagonalGaussian::with_stddev({0.4}, 1.3);
  const GaussianMixture m(g);
  RngStream r1(31), r2(32);
  const int n = 10000;
  std::vector<double> a, b;
  for (int i = 0; i < n; ++i) {
    a.push_back(mixture_sample(m, r1)[0]);
    b.push_back(diag_sample_with_noise(g, r2).x[0]);
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) ++i;
    else ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / n));
  }
  CHECK(d < 1.628 * std::sqrt(2.0 / n));
}

TEST_CASE("entropy closed form") {
  const auto g = DiagonalGaussian::with_stddevs({0.0, 1.0}, Vector{0.5, 2.0});
  const double e = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * 0.25) +
                   0.5 * std::log(2 * std::numbers::pi * std::numbers::e * 4.0);
  CHECK(g.entropy() == doctest::Approx(e).epsilon(1e-14));
}

TEST_CASE("grad_log_prob matches finite differences") {
  RngStream rng(5);
  const auto a = random_gaussian(rng, 2), b = random_gaussian(rng, 2);
  const GaussianMixture m({a, b}, Vector{0.4, 0.6});
  const Vector x{0.3, -0.2};
  const Vector fd = finite_diff_grad([&](std::span<const double> v) { return m.log_prob(v); }, x, 1e-5);
  const Vector g = m.grad_log_prob(x);
  for (std::size_t i = 0; i < 2; ++i) CHECK(testutil::rel_err(fd[i], g[i]) < 1e-7);
}

TEST_CASE("checkpoint JSON round-trips bit-exactly") {
  RngStream rng(8);
  const auto a = random_gaussian(rng, 5), b = random_gaussian(rng, 5);
  const GaussianMixture m({a, b}, Vector{1.0 / 3.0, 2.0 / 3.0});
  const auto text = to_json(m).dump();
  const GaussianMixture back = mixture_from_json(nlohmann::json::parse(text));
  CHECK(back.weights() == m.weights());
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(back.components()[k].mean() == m.components()[k].mean());
    CHECK(back.components()[k].rho() == m.components()[k].rho());
  }
  const auto g = gaussian_from_json(nlohmann::json::parse(to_json(a).dump()));
  CHECK(g.mean() == a.mean());
  CHECK(g.rho() == a.rho());
  CHECK_THROWS_AS(gaussian_from_json(nlohmann::json::object()), ConfigError);
}
