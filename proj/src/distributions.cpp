#include "bbnn/distributions.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bbnn/errors.hpp"

namespace bbnn {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

void check_dim(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got)
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (expected " +
                                std::to_string(expected) + ", got " + std::to_string(got) + ")");
}

}  // namespace

DiagonalGaussian::DiagonalGaussian(Vector mean, Vector rho)
    : mean_(std::move(mean)), rho_(std::move(rho)) {
  check_dim(mean_.size(), rho_.size(), "DiagonalGaussian");
}

DiagonalGaussian DiagonalGaussian::with_stddev(Vector mean, double sigma) {
  Vector rho(mean.size(), softplus_inverse(sigma));
  return DiagonalGaussian(std::move(mean), std::move(rho));
}

DiagonalGaussian DiagonalGaussian::with_stddevs(Vector mean, std::span<const double> sigma) {
  check_dim(mean.size(), sigma.size(), "DiagonalGaussian::with_stddevs");
  Vector rho(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) rho[i] = softplus_inverse(sigma[i]);
  return DiagonalGaussian(std::move(mean), std::move(rho));
}

Vector DiagonalGaussian::stddev() const {
  Vector s(rho_.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = softplus(rho_[i]);
  return s;
}

double DiagonalGaussian::log_prob(std::span<const double> x) const {
  check_dim(dim(), x.size(), "diag_log_prob");
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = softplus(rho_[i]);
    const double z = (x[i] - mean_[i]) / s;
    lp += -0.5 * z * z - std::log(s) - kHalfLog2Pi;
  }
  return lp;
}

Vector DiagonalGaussian::grad_log_prob(std::span<const double> x) const {
  check_dim(dim(), x.size(), "grad_log_prob");
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = softplus(rho_[i]);
    g[i] = -(x[i] - mean_[i]) / (s * s);
  }
  return g;
}

Vector DiagonalGaussian::transform(std::span<const double> eps) const {
  check_dim(dim(), eps.size(), "DiagonalGaussian::transform");
  Vector x(eps.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = mean_[i] + softplus(rho_[i]) * eps[i];
  return x;
}

double DiagonalGaussian::entropy() const {
  double h = 0.0;
  for (double r : rho_) h += 0.5 + kHalfLog2Pi + std::log(softplus(r));
  return h;
}

double diag_log_prob(const DiagonalGaussian& g, std::span<const double> x) {
  return g.log_prob(x);
}

NoisySample diag_sample_with_noise(const DiagonalGaussian& g, RngStream& rng) {
  NoisySample s;
  s.eps = sample_std_normal(rng, g.dim());
  s.x = g.transform(s.eps);
  return s;
}

double kl_diag_to_std_normal(const DiagonalGaussian& g) {
  double kl = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i) {
    const double s = g.stddev(i);
    const double m = g.mean()[i];
    kl += 0.5 * (s * s + m * m - 1.0 - 2.0 * std::log(s));
  }
  return kl;
}

// ---------------------------------------------------------------------------

GaussianMixture::GaussianMixture(DiagonalGaussian single)
    : components_{std::move(single)}, weights_{1.0} {}

GaussianMixture::GaussianMixture(std::vector<DiagonalGaussian> components, Vector weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  if (components_.empty()) throw std::invalid_argument("GaussianMixture: no components");
  check_dim(components_.size(), weights_.size(), "GaussianMixture weights");
  double total = 0.0;
  for (std::size_t k = 0; k < components_.size(); ++k) {
    check_dim(components_[0].dim(), components_[k].dim(), "GaussianMixture component");
    if (!(weights_[k] >= 0.0)) throw std::invalid_argument("GaussianMixture: negative weight");
    total += weights_[k];
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("GaussianMixture: weights do not sum to 1");
}

double GaussianMixture::log_prob(std::span<const double> x) const {
  check_dim(dim(), x.size(), "mixture_log_prob");
  Vector terms;
  terms.reserve(components_.size());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    if (weights_[k] == 0.0) continue;
    terms.push_back(std::log(weights_[k]) + components_[k].log_prob(x));
  }
  return log_sum_exp(terms);
}

Vector GaussianMixture::responsibilities(std::span<const double> x) const {
  check_dim(dim(), x.size(), "responsibilities");
  Vector logw(components_.size(), -INFINITY);
  for (std::size_t k = 0; k < components_.size(); ++k)
    if (weights_[k] > 0.0) logw[k] = std::log(weights_[k]) + components_[k].log_prob(x);
  const double norm = log_sum_exp(logw);
  for (auto& v : logw) v = std::exp(v - norm);
  return logw;
}

Vector GaussianMixture::grad_log_prob(std::span<const double> x) const {
  const Vector r = responsibilities(x);
  Vector g(dim(), 0.0);
  for (std::size_t k = 0; k < components_.size(); ++k) {
    if (r[k] == 0.0) continue;
    const auto& c = components_[k];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = c.stddev(i);
      g[i] -= r[k] * (x[i] - c.mean()[i]) / (s * s);
    }
  }
  return g;
}

GaussianMixture GaussianMixture::with_component(const DiagonalGaussian& q_new,
                                                double lambda) const {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("with_component: lambda outside [0, 1]");
  check_dim(dim(), q_new.dim(), "with_component");
  if (lambda == 0.0) return *this;
  if (lambda == 1.0) return GaussianMixture(q_new);
  std::vector<DiagonalGaussian> comps = components_;
  Vector w(weights_.size() + 1);
  for (std::size_t k = 0; k < weights_.size(); ++k) w[k] = (1.0 - lambda) * weights_[k];
  w.back() = lambda;
  comps.push_back(q_new);
  // Renormalise to absorb rounding so the simplex check stays tight.
  double total = 0.0;
  for (double v : w) total += v;
  for (auto& v : w) v /= total;
  return GaussianMixture(std::move(comps), std::move(w));
}

double mixture_log_prob(const GaussianMixture& m, std::span<const double> x) {
  return m.log_prob(x);
}

MixtureDraw mixture_sample_with_component(const GaussianMixture& m, RngStream& rng) {
  const auto& w = m.weights();
  std::size_t k = 0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] > 0.0) last_positive = i;
  const double u = rng.uniform();
  double acc = 0.0;
  k = last_positive;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (w[i] > 0.0 && u < acc) {
      k = i;
      break;
    }
  }
  NoisySample s = diag_sample_with_noise(m.components()[k], rng);
  return {k, std::move(s.x), std::move(s.eps)};
}

Vector mixture_sample(const GaussianMixture& m, RngStream& rng) {
  return mixture_sample_with_component(m, rng).x;
}

KlEstimate kl_mc(const Sampler& q_sampler, const LogDensity& q_log_prob,
                 const LogDensity& p_log_prob, std::size_t n_samples, RngStream& rng) {
  if (n_samples < 2) throw std::invalid_argument("kl_mc: need at least 2 samples");
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const Vector x = q_sampler(rng);
    const double lq = q_log_prob(x);
    const double lp = p_log_prob(x);
    const double v = lq - lp;
    if (!std::isfinite(v))
      throw NumericError("kl_mc: non-finite log-density at sample " + std::to_string(s));
    const double delta = v - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (v - mean);
  }
  const double n = static_cast<double>(n_samples);
  const double var = m2 / (n - 1.0);
  return {mean, std::sqrt(var / n), n_samples};
}

// ---------------------------------------------------------------------------

namespace {

void require_finite(const Vector& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x))
      throw std::invalid_argument(std::string("cannot serialise non-finite ") + what);
}

Vector vector_from_json(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("checkpoint: missing field '") + key + "'");
  return j.at(key).get<Vector>();
}

}  // namespace

nlohmann::json to_json(const DiagonalGaussian& g) {
  require_finite(g.mean(), "mean");
  require_finite(g.rho(), "rho");
  return {{"family", "diagonal_gaussian"}, {"dims", g.dim()}, {"mean", g.mean()}, {"rho", g.rho()}};
}

nlohmann::json to_json(const GaussianMixture& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : m.components()) {
    require_finite(c.mean(), "mean");
    require_finite(c.rho(), "rho");
    comps.push_back({{"mean", c.mean()}, {"rho", c.rho()}});
  }
  return {{"family", "gaussian_mixture"},
          {"dims", m.dim()},
          {"weights", m.weights()},
          {"components", comps}};
}

DiagonalGaussian gaussian_from_json(const nlohmann::json& j) {
  DiagonalGaussian g(vector_from_json(j, "mean"), vector_from_json(j, "rho"));
  if (j.contains("dims") && j.at("dims").get<std::size_t>() != g.dim())
    throw ConfigError("checkpoint: 'dims' does not match mean length");
  return g;
}

GaussianMixture mixture_from_json(const nlohmann::json& j) {
  if (j.value("family", "") == "diagonal_gaussian") return GaussianMixture(gaussian_from_json(j));
  std::vector<DiagonalGaussian> comps;
  for (const auto& c : j.at("components")) comps.push_back(gaussian_from_json(c));
  GaussianMixture m(std::move(comps), vector_from_json(j, "weights"));
  if (j.contains("dims") && j.at("dims").get<std::size_t>() != m.dim())
    throw ConfigError("checkpoint: 'dims' does not match component length");
  return m;
}

}  // namespace bbnn
