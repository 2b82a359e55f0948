#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "bbnn/bbb.hpp"
#include "bbnn/data.hpp"
#include "bbnn/network.hpp"

namespace bbnn {

/// Point-estimate baseline: minibatch SGD with momentum on cross-entropy plus
/// l2 * ||w||^2, optional dropout on hidden units.
struct ClassicalConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double l2 = 1e-3;
  double dropout = 0.0;
  bool early_stopping = true;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
};

struct ClassicalResult {
  Vector weights;
  std::vector<EpochRecord> trace;  // elbo holds -loss, kl_term is 0
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// He-style initialisation N(0, 2 / fan_in) for weights, zero biases.
Vector classical_initialization(const MlpArchitecture& arch, std::uint64_t seed);

ClassicalResult train_classical(const MlpArchitecture& arch, const Dataset& data, const Split& split,
                                const ClassicalConfig& cfg);

}  // namespace bbnn
