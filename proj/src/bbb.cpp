#include "bbnn/bbb.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "bbnn/errors.hpp"
#include "bbnn/io.hpp"

namespace bbnn {

double effective_beta(const BbbConfig& cfg) {
  return cfg.beta_mode == BetaMode::kConstant ? cfg.beta : 1.0;
}

double batch_loglik_and_grad(const MlpArchitecture& arch, std::span<const double> w,
                             const Batch& batch, Vector* grad) {
  if (batch.rows.empty()) throw std::invalid_argument("empty batch");
  const double scale = static_cast<double>(batch.dataset_size);
  if (grad == nullptr) {
    const Matrix sub = batch.x->select_rows(batch.rows);
    double ll = 0.0;
    for (std::size_t i = 0; i < batch.rows.size(); ++i) {
      const Vector lp = forward(arch, w, sub.row(i));
      ll += lp[static_cast<std::size_t>(batch.labels[batch.rows[i]])];
    }
    ll *= scale / static_cast<double>(batch.rows.size());
    if (!std::isfinite(ll)) throw NumericError("non-finite forward pass");
    return ll;
  }
  // loss_and_grad gives the mean cross-entropy; the full-unit data term is -N
  // times that.
  LossGrad lg = loss_and_grad(arch, w, *batch.x, batch.labels, batch.rows, 0.0);
  if (!std::isfinite(lg.loss)) throw NumericError("non-finite forward pass");
  grad->resize(lg.grad.size());
  for (std::size_t i = 0; i < lg.grad.size(); ++i) (*grad)[i] = -scale * lg.grad[i];
  return -scale * lg.loss;
}

namespace {

std::vector<Vector> draw_noise(std::size_t d, std::size_t s, RngStream& rng) {
  if (s < 1) throw std::invalid_argument("need at least one MC sample");
  std::vector<Vector> eps(s);
  for (auto& e : eps) e = sample_std_normal(rng, d);
  return eps;
}

}  // namespace

ElboTerms elbo_estimate(const DiagonalGaussian& q, const MlpArchitecture& arch, const Batch& batch,
                        double beta, std::span<const Vector> eps) {
  if (eps.empty()) throw std::invalid_argument("need at least one MC sample");
  ElboTerms t;
  for (const Vector& e : eps) t.data_term += batch_loglik_and_grad(arch, q.transform(e), batch, nullptr);
  t.data_term /= static_cast<double>(eps.size());
  t.kl_term = kl_diag_to_std_normal(q);
  t.value = t.data_term - beta * t.kl_term;
  return t;
}

ElboTerms elbo_estimate(const DiagonalGaussian& q, const MlpArchitecture& arch, const Batch& batch,
                        double beta, std::size_t s, RngStream& rng) {
  const auto eps = draw_noise(q.dim(), s, rng);
  return elbo_estimate(q, arch, batch, beta, eps);
}

namespace {

ElboGrad grad_impl(const DiagonalGaussian& q, const MlpArchitecture& arch, const Batch& batch,
                   double beta, std::span<const Vector> eps, const PathwiseTerm* extra) {
  if (eps.empty()) throw std::invalid_argument("need at least one MC sample");
  const std::size_t d = q.dim();
  ElboGrad g;
  g.mu.assign(d, 0.0);
  g.rho.assign(d, 0.0);
  Vector sig(d);
  for (std::size_t i = 0; i < d; ++i) sig[i] = sigmoid(q.rho()[i]);
  Vector gw;
  const double inv = 1.0 / static_cast<double>(eps.size());
  for (const Vector& e : eps) {
    const Vector w = q.transform(e);
    double v = batch_loglik_and_grad(arch, w, batch, &gw);
    if (extra != nullptr && *extra) v += (*extra)(q, w, gw);
    g.terms.data_term += v * inv;
    for (std::size_t i = 0; i < d; ++i) {
      g.mu[i] += gw[i] * inv;
      g.rho[i] += gw[i] * e[i] * sig[i] * inv;
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double s = q.stddev(i);
    g.mu[i] -= beta * q.mean()[i];
    g.rho[i] -= beta * (s - 1.0 / s) * sig[i];
  }
  g.terms.kl_term = kl_diag_to_std_normal(q);
  g.terms.value = g.terms.data_term - beta * g.terms.kl_term;
  return g;
}

}  // namespace

ElboGrad elbo_grad_reparam(const DiagonalGaussian& q, const MlpArchitecture& arch,
                           const Batch& batch, double beta, std::span<const Vector> eps) {
  return grad_impl(q, arch, batch, beta, eps, nullptr);
}

ElboGrad elbo_grad_reparam(const DiagonalGaussian& q, const MlpArchitecture& arch,
                           const Batch& batch, double beta, std::size_t s, RngStream& rng) {
  const auto eps = draw_noise(q.dim(), s, rng);
  return elbo_grad_reparam(q, arch, batch, beta, eps);
}

DiagonalGaussian bbb_initialization(const MlpArchitecture& arch, const BbbConfig& cfg) {
  arch.validate();
  RngStream rng(cfg.seed, 0x1A17ull);
  Vector mu = sample_std_normal(rng, param_count(arch));
  for (double& m : mu) m *= cfg.init_mean_std;
  return DiagonalGaussian::with_stddev(std::move(mu), cfg.init_sigma);
}

PredictiveSamples predictive_samples(const DiagonalGaussian& posterior, const MlpArchitecture& arch,
                                     const Matrix& x, std::size_t s, RngStream& rng, int threads) {
  if (s < 1) throw std::invalid_argument("predictive: need at least one sample");
  const RngStream base = rng.substream(rng.next_u64());
  PredictiveSamples out;
  out.draws.resize(s);
  parallel_for(s, threads, [&](std::size_t j) {
    RngStream r = base.substream(j);
    const Vector eps = sample_std_normal(r, posterior.dim());
    out.draws[j] = predict_proba(arch, posterior.transform(eps), x);
  });
  out.weights.assign(s, 1.0 / static_cast<double>(s));
  out.mean = Matrix(x.rows(), arch.class_count());
  for (std::size_t j = 0; j < s; ++j)
    for (std::size_t k = 0; k < out.mean.data().size(); ++k)
      out.mean.data()[k] += out.weights[j] * out.draws[j].data()[k];
  return out;
}

Matrix predictive(const DiagonalGaussian& posterior, const MlpArchitecture& arch, const Matrix& x,
                  std::size_t s, RngStream& rng, int threads) {
  return predictive_samples(posterior, arch, x, s, rng, threads).mean;
}

double accuracy_on(const Matrix& probs, std::span<const int> labels,
                   std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto p = probs.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.size(); ++k)
      if (p[k] > p[best]) best = k;
    hit += static_cast<int>(best) == labels[rows[i]] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

BbbResult train_bbb_from(const MlpArchitecture& arch, const Dataset& data, const Split& split,
                         const BbbConfig& cfg, DiagonalGaussian init, const PathwiseTerm& extra,
                         const ValPredictor& val_predict) {
  arch.validate();
  if (split.train.empty()) throw std::invalid_argument("train_bbb: empty training set");
  if (cfg.batch_size < 1 || cfg.train_samples < 1 || !(cfg.learning_rate > 0.0))
    throw ConfigError("bbb: batch_size and train_samples must be >= 1, learning_rate > 0");
  if (init.dim() != param_count(arch)) throw std::invalid_argument("train_bbb: posterior size mismatch");

  const double beta = effective_beta(cfg);
  const std::size_t n = split.train.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t d = init.dim();
  RngStream order_rng(cfg.seed, 0x0DE5ull);
  RngStream noise_rng(cfg.seed, 0x7015ull);
  RngStream val_rng(cfg.seed, 0x7A15ull);
  const Matrix x_val = data.features.select_rows(split.val);
  const bool use_val = cfg.early_stopping && !split.val.empty();

  BbbResult res;
  res.posterior = init;
  DiagonalGaussian q = std::move(init);
  Vector vel_mu(d, 0.0), vel_rho(d, 0.0);
  std::vector<std::size_t> order(split.train.begin(), split.train.end());
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
      const Batch b{&data.features, data.labels,
                    std::span<const std::size_t>(order).subspan(start, stop - start), n};
      const auto eps = draw_noise(d, cfg.train_samples, noise_rng);
      ElboGrad g;
      try {
        g = grad_impl(q, arch, b, beta, eps, &extra);
      } catch (const NumericError& e) {
        throw NumericError("train_bbb: " + std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(batches));
      }
      if (!std::isfinite(g.terms.value))
        throw NumericError("train_bbb: non-finite ELBO at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(batches));
      for (std::size_t i = 0; i < d; ++i) {
        vel_mu[i] = cfg.momentum * vel_mu[i] + cfg.learning_rate * g.mu[i] * inv_n;
        vel_rho[i] = cfg.momentum * vel_rho[i] + cfg.learning_rate * g.rho[i] * inv_n;
        q.mean()[i] += vel_mu[i];
        q.rho()[i] += vel_rho[i];
      }
      rec.elbo += g.terms.value;
      rec.data_term += g.terms.data_term;
      ++batches;
    }
    for (std::size_t i = 0; i < d; ++i)
      if (!std::isfinite(q.mean()[i]) || !std::isfinite(q.rho()[i]))
        throw NumericError("train_bbb: non-finite parameters after epoch " + std::to_string(epoch + 1));
    rec.elbo /= static_cast<double>(batches);
    rec.data_term /= static_cast<double>(batches);
    rec.kl_term = kl_diag_to_std_normal(q);
    if (!split.val.empty()) {
      const Matrix p = val_predict ? val_predict(q, x_val, val_rng)
                                   : predictive(q, arch, x_val, cfg.val_samples, val_rng, cfg.threads);
      rec.val_accuracy = accuracy_on(p, data.labels, split.val);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.trace.push_back(rec);

    if (!use_val) {
      res.posterior = q;
      res.best_epoch = epoch + 1;
      continue;
    }
    if (rec.val_accuracy > best_val) {
      best_val = rec.val_accuracy;
      res.posterior = q;
      res.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.stopped_early = true;
      break;
    }
  }
  return res;
}

BbbResult train_bbb(const MlpArchitecture& arch, const Dataset& data, const Split& split,
                    const BbbConfig& cfg) {
  return train_bbb_from(arch, data, split, cfg, bbb_initialization(arch, cfg));
}

void write_train_trace_csv(std::ostream& os, std::span<const EpochRecord> trace) {
  os << "epoch,elbo,data_term,kl_term,val_acc,seconds\n";
  for (const auto& r : trace)
    os << r.epoch << ',' << format_double(r.elbo) << ',' << format_double(r.data_term) << ','
       << format_double(r.kl_term) << ',' << format_double(r.val_accuracy) << ','
       << format_double(r.seconds) << '\n';
}

}  // namespace bbnn
