#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bbnn/ndmath.hpp"

namespace bbnn {

enum class OutputKind {
  kSoftmaxLogits,          ///< K class logits, read through log-softmax.
  kMeanAndSoftplusVariance ///< m means followed by m raw variances (softplus head).
};

/// Dense ReLU network. layer_sizes = {input, hidden..., output}. For the
/// variance head the output layer carries 2 * m units.
struct MlpArchitecture {
  std::vector<std::size_t> layer_sizes;
  OutputKind output = OutputKind::kSoftmaxLogits;

  /// Throws std::invalid_argument when the topology is unusable.
  void validate() const;
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  std::size_t class_count() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return layer_sizes.size() - 1; }

  std::string describe() const;  // "4-8-3"
  bool operator==(const MlpArchitecture&) const = default;
};

/// sum_l (n_{l-1} + 1) * n_l.
std::size_t param_count(const MlpArchitecture& arch);

/// Offset of layer l's weight block in the flat vector. Layout is
/// layer-major: W_l as an (n_l x n_{l-1}) row-major block, then b_l.
std::size_t weight_offset(const MlpArchitecture& arch, std::size_t layer);

/// Class log-probabilities for one input (softmax output only).
Vector forward(const MlpArchitecture& arch, std::span<const double> w,
               std::span<const double> x);

/// Raw output-layer activations (logits / mean-and-raw-variance).
Vector forward_raw(const MlpArchitecture& arch, std::span<const double> w,
                   std::span<const double> x);

/// Softmax probabilities for every row of `x` (N x K).
Matrix predict_proba(const MlpArchitecture& arch, std::span<const double> w, const Matrix& x);

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// Optional inverted dropout on hidden activations.
struct Dropout {
  double rate = 0.0;
  RngStream* rng = nullptr;
};

/// loss = mean cross-entropy over `rows` (all rows when empty) + l2 * ||w||^2,
/// with its exact backprop gradient. Labels are indexed by row of `x`.
LossGrad loss_and_grad(const MlpArchitecture& arch, std::span<const double> w, const Matrix& x,
                       std::span<const int> labels, std::span<const std::size_t> rows,
                       double l2, std::optional<Dropout> dropout = std::nullopt);

/// Same as above over every row.
LossGrad loss_and_grad(const MlpArchitecture& arch, std::span<const double> w, const Matrix& x,
                       std::span<const int> labels, double l2);

/// sigma^2(x) = softplus(raw).
double softplus_variance_head(double raw) noexcept;

struct MeanVariance {
  Vector mean;
  Vector variance;
};

/// Heteroscedastic output: first m units are means, the next m pass through
/// the softplus variance head.
MeanVariance forward_mean_variance(const MlpArchitecture& arch, std::span<const double> w,
                                   std::span<const double> x);

/// Mean Gaussian negative log-likelihood of real targets (N x m) under the
/// variance head, plus gradient.
LossGrad gaussian_nll_and_grad(const MlpArchitecture& arch, std::span<const double> w,
                               const Matrix& x, const Matrix& targets);

nlohmann::json to_json(const MlpArchitecture& arch);
MlpArchitecture architecture_from_json(const nlohmann::json& j);
/// Parses "30-32-2" style descriptors.
MlpArchitecture parse_architecture(const std::string& spec,
                                   OutputKind output = OutputKind::kSoftmaxLogits);

}  // namespace bbnn
