#include "bbnn/classical.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "bbnn/errors.hpp"

namespace bbnn {

Vector classical_initialization(const MlpArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  RngStream rng(seed, 0xC1A5ull);
  Vector w(param_count(arch), 0.0);
  for (std::size_t l = 1; l < arch.layer_sizes.size(); ++l) {
    const std::size_t in = arch.layer_sizes[l - 1], out = arch.layer_sizes[l];
    const std::size_t off = weight_offset(arch, l - 1);
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    for (std::size_t i = 0; i < in * out; ++i) w[off + i] = sd * rng.normal();
  }
  return w;
}

ClassicalResult train_classical(const MlpArchitecture& arch, const Dataset& data, const Split& split,
                                const ClassicalConfig& cfg) {
  arch.validate();
  if (split.train.empty()) throw std::invalid_argument("train_classical: empty training set");
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0) || cfg.l2 < 0.0 || cfg.dropout < 0.0 ||
      cfg.dropout >= 1.0)
    throw ConfigError("classical: invalid batch_size / learning_rate / l2 / dropout");
  RngStream order_rng(cfg.seed, 0x0DE5ull);
  RngStream drop_rng(cfg.seed, 0xD209ull);
  const Matrix x_val = data.features.select_rows(split.val);
  const bool use_val = cfg.early_stopping && !split.val.empty();

  ClassicalResult res;
  Vector w = classical_initialization(arch, cfg.seed);
  res.weights = w;
  Vector vel(w.size(), 0.0);
  std::vector<std::size_t> order(split.train.begin(), split.train.end());
  const std::size_t n = order.size();
  double best_val = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle(order, order_rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> rows = std::span<const std::size_t>(order).subspan(start, stop - start);
      std::optional<Dropout> drop;
      if (cfg.dropout > 0.0) drop = Dropout{cfg.dropout, &drop_rng};
      LossGrad lg;
      try {
        lg = loss_and_grad(arch, w, data.features, data.labels, rows, cfg.l2, drop);
      } catch (const NumericError&) {
        lg.loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(lg.loss))
        throw NumericError("train_classical: non-finite loss at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(batches));
      for (std::size_t i = 0; i < w.size(); ++i) {
        vel[i] = cfg.momentum * vel[i] - cfg.learning_rate * lg.grad[i];
        w[i] += vel[i];
      }
      rec.elbo -= lg.loss;
      ++batches;
    }
    rec.elbo /= static_cast<double>(batches);
    rec.data_term = rec.elbo;
    if (!split.val.empty())
      rec.val_accuracy = accuracy_on(predict_proba(arch, w, x_val), data.labels, split.val);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.trace.push_back(rec);
    if (!use_val) {
      res.weights = w;
      res.best_epoch = epoch + 1;
      continue;
    }
    if (rec.val_accuracy > best_val) {
      best_val = rec.val_accuracy;
      res.weights = w;
      res.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

}  // namespace bbnn
