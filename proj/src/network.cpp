#include "bbnn/network.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "bbnn/errors.hpp"

namespace bbnn {

void MlpArchitecture::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("architecture needs at least 2 layers");
  for (std::size_t n : layer_sizes)
    if (n == 0) throw std::invalid_argument("architecture layer sizes must be positive");
  if (output == OutputKind::kSoftmaxLogits && layer_sizes.back() < 2)
    throw std::invalid_argument("softmax output needs at least 2 classes");
  if (output == OutputKind::kMeanAndSoftplusVariance && layer_sizes.back() % 2 != 0)
    throw std::invalid_argument("variance head needs an even output width (means + variances)");
}

std::string MlpArchitecture::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layer_sizes.size(); ++i) os << (i ? "-" : "") << layer_sizes[i];
  return os.str();
}

std::size_t param_count(const MlpArchitecture& arch) {
  std::size_t n = 0;
  for (std::size_t l = 1; l < arch.layer_sizes.size(); ++l)
    n += (arch.layer_sizes[l - 1] + 1) * arch.layer_sizes[l];
  return n;
}

std::size_t weight_offset(const MlpArchitecture& arch, std::size_t layer) {
  std::size_t n = 0;
  for (std::size_t l = 1; l <= layer; ++l) n += (arch.layer_sizes[l - 1] + 1) * arch.layer_sizes[l];
  return n;
}

namespace {

void check_weights(const MlpArchitecture& arch, std::span<const double> w) {
  if (w.size() != param_count(arch))
    throw std::invalid_argument("weight vector length " + std::to_string(w.size()) +
                                " does not match architecture " + arch.describe());
}

void check_input(const MlpArchitecture& arch, std::size_t got) {
  if (got != arch.input_dim())
    throw std::invalid_argument("input dimension mismatch: expected " +
                                std::to_string(arch.input_dim()) + ", got " + std::to_string(got));
}

// Per-call scratch: pre-activations and activations per layer.
struct Trace {
  std::vector<Vector> act;  // act[0] = input, act[l] = post-activation of layer l
  std::vector<Vector> pre;  // pre[l] = W_l act[l-1] + b_l, l >= 1
  std::vector<Vector> mask; // dropout multipliers for hidden layers

  explicit Trace(const MlpArchitecture& arch)
      : act(arch.layer_sizes.size()), pre(arch.layer_sizes.size()), mask(arch.layer_sizes.size()) {
    for (std::size_t l = 0; l < arch.layer_sizes.size(); ++l) {
      act[l].resize(arch.layer_sizes[l]);
      pre[l].resize(arch.layer_sizes[l]);
    }
  }
};

void run_forward(const MlpArchitecture& arch, std::span<const double> w,
                 std::span<const double> x, Trace& t, const Dropout* dropout) {
  std::copy(x.begin(), x.end(), t.act[0].begin());
  const std::size_t layers = arch.layer_count();
  std::size_t off = 0;
  for (std::size_t l = 1; l <= layers; ++l) {
    const std::size_t in = arch.layer_sizes[l - 1];
    const std::size_t out = arch.layer_sizes[l];
    const double* wl = w.data() + off;
    const double* bl = wl + in * out;
    const Vector& a = t.act[l - 1];
    Vector& z = t.pre[l];
    for (std::size_t o = 0; o < out; ++o) {
      double s = bl[o];
      const double* row = wl + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = s;
    }
    Vector& h = t.act[l];
    if (l < layers) {
      for (std::size_t o = 0; o < out; ++o) h[o] = z[o] > 0.0 ? z[o] : 0.0;
      if (dropout && dropout->rate > 0.0) {
        Vector& m = t.mask[l];
        m.resize(out);
        const double keep = 1.0 - dropout->rate;
        for (std::size_t o = 0; o < out; ++o) {
          m[o] = dropout->rng->uniform() < keep ? 1.0 / keep : 0.0;
          h[o] *= m[o];
        }
      }
    } else {
      h = z;
    }
    off += (in + 1) * out;
  }
}

// Accumulates d(loss)/dw given d(loss)/d(output pre-activation) in `delta`.
void run_backward(const MlpArchitecture& arch, std::span<const double> w, const Trace& t,
                  Vector delta, std::span<double> grad, bool dropout_active) {
  const std::size_t layers = arch.layer_count();
  for (std::size_t l = layers; l >= 1; --l) {
    const std::size_t in = arch.layer_sizes[l - 1];
    const std::size_t out = arch.layer_sizes[l];
    const std::size_t off = weight_offset(arch, l - 1);
    double* gw = grad.data() + off;
    double* gb = gw + in * out;
    const Vector& a = t.act[l - 1];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      double* grow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += d * a[i];
      gb[o] += d;
    }
    if (l == 1) break;
    const double* wl = w.data() + off;
    Vector prev(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = wl + o * in;
      for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d;
    }
    const Vector& z = t.pre[l - 1];
    for (std::size_t i = 0; i < in; ++i) {
      // ReLU subgradient at exactly 0 is 0.
      prev[i] = z[i] > 0.0 ? prev[i] : 0.0;
      if (dropout_active) prev[i] *= t.mask[l - 1][i];
    }
    delta = std::move(prev);
  }
}

Vector log_softmax(std::span<const double> z) {
  const double lse = log_sum_exp(z);
  Vector out(z.size());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] - lse;
  return out;
}

}  // namespace

Vector forward_raw(const MlpArchitecture& arch, std::span<const double> w,
                   std::span<const double> x) {
  check_weights(arch, w);
  check_input(arch, x.size());
  Trace t(arch);
  run_forward(arch, w, x, t, nullptr);
  return t.act.back();
}

Vector forward(const MlpArchitecture& arch, std::span<const double> w, std::span<const double> x) {
  if (arch.output != OutputKind::kSoftmaxLogits)
    throw std::invalid_argument("forward: architecture has no softmax output");
  return log_softmax(forward_raw(arch, w, x));
}

Matrix predict_proba(const MlpArchitecture& arch, std::span<const double> w, const Matrix& x) {
  check_weights(arch, w);
  check_input(arch, x.cols());
  Matrix out(x.rows(), arch.class_count());
  Trace t(arch);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    run_forward(arch, w, x.row(r), t, nullptr);
    const Vector lp = log_softmax(t.act.back());
    for (std::size_t k = 0; k < lp.size(); ++k) out(r, k) = std::exp(lp[k]);
  }
  return out;
}

LossGrad loss_and_grad(const MlpArchitecture& arch, std::span<const double> w, const Matrix& x,
                       std::span<const int> labels, std::span<const std::size_t> rows,
                       double l2, std::optional<Dropout> dropout) {
  check_weights(arch, w);
  check_input(arch, x.cols());
  if (arch.output != OutputKind::kSoftmaxLogits)
    throw std::invalid_argument("loss_and_grad: cross-entropy needs a softmax output");
  if (labels.size() != x.rows()) throw std::invalid_argument("loss_and_grad: label count mismatch");
  const std::size_t n = rows.empty() ? x.rows() : rows.size();
  if (n == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  const int classes = static_cast<int>(arch.class_count());
  const Dropout* drop = (dropout && dropout->rate > 0.0) ? &*dropout : nullptr;
  if (drop && drop->rng == nullptr) throw std::invalid_argument("dropout requires an rng");

  LossGrad out;
  out.grad.assign(w.size(), 0.0);
  Trace t(arch);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t r = rows.empty() ? b : rows[b];
    const int y = labels[r];
    if (y < 0 || y >= classes)
      throw std::invalid_argument("loss_and_grad: label " + std::to_string(y) +
                                  " out of range at sample " + std::to_string(r));
    run_forward(arch, w, x.row(r), t, drop);
    Vector lp = log_softmax(t.act.back());
    total -= lp[static_cast<std::size_t>(y)];
    Vector delta(lp.size());
    for (std::size_t k = 0; k < lp.size(); ++k) delta[k] = std::exp(lp[k]);
    delta[static_cast<std::size_t>(y)] -= 1.0;
    run_backward(arch, w, t, std::move(delta), out.grad, drop != nullptr);
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& g : out.grad) g *= inv;
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    sq += w[i] * w[i];
    out.grad[i] += 2.0 * l2 * w[i];
  }
  out.loss = total * inv + l2 * sq;
  if (!std::isfinite(out.loss)) throw NumericError("loss_and_grad: non-finite loss");
  return out;
}

LossGrad loss_and_grad(const MlpArchitecture& arch, std::span<const double> w, const Matrix& x,
                       std::span<const int> labels, double l2) {
  return loss_and_grad(arch, w, x, labels, {}, l2);
}

double softplus_variance_head(double raw) noexcept { return softplus(raw); }

MeanVariance forward_mean_variance(const MlpArchitecture& arch, std::span<const double> w,
                                   std::span<const double> x) {
  if (arch.output != OutputKind::kMeanAndSoftplusVariance)
    throw std::invalid_argument("forward_mean_variance: architecture has no variance head");
  const Vector raw = forward_raw(arch, w, x);
  const std::size_t m = raw.size() / 2;
  MeanVariance mv;
  mv.mean.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(m));
  mv.variance.resize(m);
  for (std::size_t j = 0; j < m; ++j) mv.variance[j] = softplus_variance_head(raw[m + j]);
  return mv;
}

LossGrad gaussian_nll_and_grad(const MlpArchitecture& arch, std::span<const double> w,
                               const Matrix& x, const Matrix& targets) {
  if (arch.output != OutputKind::kMeanAndSoftplusVariance)
    throw std::invalid_argument("gaussian_nll_and_grad: architecture has no variance head");
  check_weights(arch, w);
  check_input(arch, x.cols());
  const std::size_t m = arch.output_dim() / 2;
  if (targets.rows() != x.rows() || targets.cols() != m)
    throw std::invalid_argument("gaussian_nll_and_grad: target shape mismatch");
  if (x.rows() == 0) throw std::invalid_argument("gaussian_nll_and_grad: empty batch");
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  LossGrad out;
  out.grad.assign(w.size(), 0.0);
  Trace t(arch);
  double total = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    run_forward(arch, w, x.row(r), t, nullptr);
    const Vector& raw = t.act.back();
    Vector delta(raw.size());
    for (std::size_t j = 0; j < m; ++j) {
      const double mu = raw[j];
      const double v = softplus_variance_head(raw[m + j]);
      const double e = targets(r, j) - mu;
      total += kHalfLog2Pi + 0.5 * std::log(v) + 0.5 * e * e / v;
      delta[j] = -e / v;
      delta[m + j] = (0.5 / v - 0.5 * e * e / (v * v)) * sigmoid(raw[m + j]);
    }
    run_backward(arch, w, t, std::move(delta), out.grad, false);
  }
  const double inv = 1.0 / static_cast<double>(x.rows());
  for (auto& g : out.grad) g *= inv;
  out.loss = total * inv;
  return out;
}

nlohmann::json to_json(const MlpArchitecture& arch) {
  return {{"layer_sizes", arch.layer_sizes},
          {"hidden_activation", "relu"},
          {"output", arch.output == OutputKind::kSoftmaxLogits ? "softmax_logits"
                                                               : "mean_and_softplus_variance"}};
}

MlpArchitecture architecture_from_json(const nlohmann::json& j) {
  MlpArchitecture a;
  a.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  const std::string out = j.value("output", "softmax_logits");
  if (out == "softmax_logits")
    a.output = OutputKind::kSoftmaxLogits;
  else if (out == "mean_and_softplus_variance")
    a.output = OutputKind::kMeanAndSoftplusVariance;
  else
    throw ConfigError("unknown output kind '" + out + "'");
  if (j.value("hidden_activation", "relu") != "relu")
    throw ConfigError("only relu hidden activations are supported");
  a.validate();
  return a;
}

MlpArchitecture parse_architecture(const std::string& spec, OutputKind output) {
  MlpArchitecture a;
  a.output = output;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, '-')) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(part, &pos);
      if (pos != part.size() || v <= 0) throw std::invalid_argument(part);
      a.layer_sizes.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("invalid architecture '" + spec + "'");
    }
  }
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid architecture '") + spec + "': " + e.what());
  }
  return a;
}

}  // namespace bbnn
