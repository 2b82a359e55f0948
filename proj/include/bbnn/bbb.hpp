#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "bbnn/data.hpp"
#include "bbnn/distributions.hpp"
#include "bbnn/network.hpp"

namespace bbnn {

/// A minibatch view. The data term is reported in full-dataset units, i.e.
/// the batch log-likelihood times dataset_size / rows.size().
struct Batch {
  const Matrix* x = nullptr;
  std::span<const int> labels;  // indexed by row of x
  std::span<const std::size_t> rows;
  std::size_t dataset_size = 0;
};

enum class BetaMode { kConstant, kOneOverBatches };

struct BbbConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  BetaMode beta_mode = BetaMode::kOneOverBatches;
  double beta = 1.0;  // used when beta_mode == kConstant
  std::size_t train_samples = 1;
  std::size_t eval_samples = 100;
  /// Draws used for the per-epoch validation accuracy.
  std::size_t val_samples = 10;
  bool early_stopping = true;
  std::size_t patience = 20;
  double init_mean_std = 0.1;
  double init_sigma = 0.05;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// KL weight in full-dataset units. Spreading the KL evenly over the batches
/// of an epoch (batch_size / N per batch) sums to a weight of one.
double effective_beta(const BbbConfig& cfg);

struct ElboTerms {
  double value = 0.0;
  double data_term = 0.0;
  double kl_term = 0.0;
};

ElboTerms elbo_estimate(const DiagonalGaussian& q, const MlpArchitecture& arch, const Batch& batch,
                        double beta, std::size_t s, RngStream& rng);
/// Same estimate on caller-supplied noise vectors (one per MC draw).
ElboTerms elbo_estimate(const DiagonalGaussian& q, const MlpArchitecture& arch, const Batch& batch,
                        double beta, std::span<const Vector> eps);

struct ElboGrad {
  Vector mu;
  Vector rho;
  ElboTerms terms;
};

/// Pathwise gradient of the ELBO (ascent direction).
ElboGrad elbo_grad_reparam(const DiagonalGaussian& q, const MlpArchitecture& arch,
                           const Batch& batch, double beta, std::size_t s, RngStream& rng);
ElboGrad elbo_grad_reparam(const DiagonalGaussian& q, const MlpArchitecture& arch,
                           const Batch& batch, double beta, std::span<const Vector> eps);

/// Data-term-only pathwise gradient for one weight draw, in full-dataset
/// units: d/dW of (N / B) * sum_batch log p(y | x, W).
double batch_loglik_and_grad(const MlpArchitecture& arch, std::span<const double> w,
                             const Batch& batch, Vector* grad);

struct EpochRecord {
  std::size_t epoch = 0;
  double elbo = 0.0;
  double data_term = 0.0;
  double kl_term = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct BbbResult {
  DiagonalGaussian posterior;
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;  // 1-based; 0 means the initialization was kept
  bool stopped_early = false;
};

DiagonalGaussian bbb_initialization(const MlpArchitecture& arch, const BbbConfig& cfg);

/// Momentum SGD on the minibatch ELBO (divided by N). With early stopping the
/// posterior from the best validation epoch is returned.
BbbResult train_bbb(const MlpArchitecture& arch, const Dataset& data, const Split& split,
                    const BbbConfig& cfg);
/// Extra per-draw objective term in full-dataset units. Returns its value at
/// weights w and adds d/dw into grad_w; q is the current posterior.
using PathwiseTerm =
    std::function<double(const DiagonalGaussian& q, std::span<const double> w, Vector& grad_w)>;

/// Validation probabilities for the current posterior (defaults to its own
/// predictive with cfg.val_samples draws).
using ValPredictor =
    std::function<Matrix(const DiagonalGaussian& q, const Matrix& x_val, RngStream& rng)>;

/// Continues from a given starting posterior, optionally adding `extra` to
/// every draw's data term.
BbbResult train_bbb_from(const MlpArchitecture& arch, const Dataset& data, const Split& split,
                         const BbbConfig& cfg, DiagonalGaussian init,
                         const PathwiseTerm& extra = {}, const ValPredictor& val_predict = {});

/// Per-draw class probabilities plus their weighted average.
struct PredictiveSamples {
  Matrix mean;                // N x K
  std::vector<Matrix> draws;  // one N x K matrix per weight draw
  Vector weights;             // per-draw weight, sums to 1
};

/// Draw j uses rng substream j, so results do not depend on `threads`.
PredictiveSamples predictive_samples(const DiagonalGaussian& posterior, const MlpArchitecture& arch,
                                     const Matrix& x, std::size_t s, RngStream& rng,
                                     int threads = 1);
Matrix predictive(const DiagonalGaussian& posterior, const MlpArchitecture& arch, const Matrix& x,
                  std::size_t s, RngStream& rng, int threads = 1);

/// Argmax accuracy; row i of `probs` belongs to sample rows[i].
double accuracy_on(const Matrix& probs, std::span<const int> labels,
                   std::span<const std::size_t> rows);

/// CSV `epoch,elbo,data_term,kl_term,val_acc,seconds`.
void write_train_trace_csv(std::ostream& os, std::span<const EpochRecord> trace);

}  // namespace bbnn
