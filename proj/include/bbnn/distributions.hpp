#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bbnn/ndmath.hpp"

namespace bbnn {

/// Fully factorised Gaussian over a flat parameter vector. Standard
/// deviations are stored pre-softplus: sigma_i = softplus(rho_i).
class DiagonalGaussian {
 public:
  DiagonalGaussian() = default;
  DiagonalGaussian(Vector mean, Vector rho);

  /// N(mean, sigma^2) with a shared sigma.
  static DiagonalGaussian with_stddev(Vector mean, double sigma);
  /// N(mean, diag(sigma^2)).
  static DiagonalGaussian with_stddevs(Vector mean, std::span<const double> sigma);

  std::size_t dim() const noexcept { return mean_.size(); }
  const Vector& mean() const noexcept { return mean_; }
  const Vector& rho() const noexcept { return rho_; }
  Vector& mean() noexcept { return mean_; }
  Vector& rho() noexcept { return rho_; }

  Vector stddev() const;
  double stddev(std::size_t i) const { return softplus(rho_[i]); }

  double log_prob(std::span<const double> x) const;
  /// d/dx log q(x).
  Vector grad_log_prob(std::span<const double> x) const;

  /// x = mean + sigma * eps for a caller-supplied noise vector.
  Vector transform(std::span<const double> eps) const;

  /// Closed-form differential entropy, sum_i 0.5 log(2 pi e sigma_i^2).
  double entropy() const;

 private:
  Vector mean_;
  Vector rho_;
};

struct NoisySample {
  Vector x;
  Vector eps;
};

double diag_log_prob(const DiagonalGaussian& g, std::span<const double> x);
/// Returns the sample together with the noise that produced it.
NoisySample diag_sample_with_noise(const DiagonalGaussian& g, RngStream& rng);
/// KL(g || N(0, I)) = sum_i 0.5 (sigma_i^2 + mu_i^2 - 1 - 2 log sigma_i).
double kl_diag_to_std_normal(const DiagonalGaussian& g);

/// Finite mixture of diagonal Gaussians sharing one dimension.
class GaussianMixture {
 public:
  GaussianMixture() = default;
  explicit GaussianMixture(DiagonalGaussian single);
  GaussianMixture(std::vector<DiagonalGaussian> components, Vector weights);

  std::size_t dim() const noexcept { return components_.front().dim(); }
  std::size_t size() const noexcept { return components_.size(); }
  const std::vector<DiagonalGaussian>& components() const noexcept { return components_; }
  const Vector& weights() const noexcept { return weights_; }

  double log_prob(std::span<const double> x) const;
  /// d/dx log q(x) = sum_k r_k(x) d/dx log q_k(x), r_k the responsibilities.
  Vector grad_log_prob(std::span<const double> x) const;
  /// Posterior component probabilities at x.
  Vector responsibilities(std::span<const double> x) const;

  /// (1 - lambda) * this + lambda * q_new. lambda must lie in [0, 1]; the
  /// endpoints return the original mixture or q_new alone.
  GaussianMixture with_component(const DiagonalGaussian& q_new, double lambda) const;

 private:
  std::vector<DiagonalGaussian> components_;
  Vector weights_;
};

double mixture_log_prob(const GaussianMixture& m, std::span<const double> x);

struct MixtureDraw {
  std::size_t component;
  Vector x;
  Vector eps;
};

/// Ancestral draw: component k ~ weights, then a reparameterised sample of k.
MixtureDraw mixture_sample_with_component(const GaussianMixture& m, RngStream& rng);
Vector mixture_sample(const GaussianMixture& m, RngStream& rng);

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;
};

using Sampler = std::function<Vector(RngStream&)>;
using LogDensity = std::function<double(std::span<const double>)>;

/// Monte Carlo KL(q || p) = E_q[log q - log p] with its standard error.
KlEstimate kl_mc(const Sampler& q_sampler, const LogDensity& q_log_prob,
                 const LogDensity& p_log_prob, std::size_t n_samples, RngStream& rng);

// Checkpoint serialisation. Doubles round-trip exactly through the JSON
// number representation.
nlohmann::json to_json(const DiagonalGaussian& g);
nlohmann::json to_json(const GaussianMixture& m);
DiagonalGaussian gaussian_from_json(const nlohmann::json& j);
GaussianMixture mixture_from_json(const nlohmann::json& j);

}  // namespace bbnn
