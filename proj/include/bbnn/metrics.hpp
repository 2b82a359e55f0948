#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "json.hpp"

#include "bbnn/ndmath.hpp"

namespace bbnn {

/// Class probabilities (N x K) and true labels; row i belongs to labels[i].
struct PredictionSet {
  Matrix probs;
  std::vector<int> labels;
};

/// Throws std::invalid_argument for empty sets, label/shape mismatches and
/// rows that leave the simplex by more than 1e-8.
void validate(const PredictionSet& p);

/// Argmax with ties to the lowest class index.
std::size_t argmax(std::span<const double> p);

double accuracy(const PredictionSet& p);
/// Mean -log p(true class), probabilities clamped below at 1e-12.
double nll(const PredictionSet& p);

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  double nll = 0.0;
  double accuracy = 0.0;
  std::vector<CalibrationBin> bins;
};

/// Equal-width confidence bins on [0, 1]; bin m holds (m/M, (m+1)/M] and
/// bin 0 also takes confidence 0. Confidence is the max class probability.
CalibrationReport ece(const PredictionSet& p, std::size_t m_bins = 10);
/// sum_m count_m / N * |acc_m - conf_m| over a bin table.
double ece_from_bins(std::span<const CalibrationBin> bins);

nlohmann::json to_json(const CalibrationReport& r);
/// CSV `bin_lo,bin_hi,count,acc,conf`.
void write_bins_csv(std::ostream& os, std::span<const CalibrationBin> bins);

struct Decomposition {
  Vector aleatoric;  // per class
  Vector epistemic;  // per class
  double aleatoric_total = 0.0;
  double epistemic_total = 0.0;
};

/// Rows of `draws` are S MC draws of one sample's class probabilities.
/// aleatoric_k = E_s[p_k (1 - p_k)], epistemic_k = Var_s[p_k], both with
/// population normalisation; optional per-draw weights must sum to 1.
Decomposition uncertainty_decomposition(const Matrix& draws, std::span<const double> weights = {});

/// Decomposition for every sample: draws[s] is the N x K matrix of draw s.
std::vector<Decomposition> decompose_samples(std::span<const Matrix> draws,
                                             std::span<const double> weights = {});

}  // namespace bbnn
