#include "bbnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "bbnn/io.hpp"

namespace bbnn {

void validate(const PredictionSet& p) {
  if (p.labels.empty() || p.probs.rows() == 0) throw std::invalid_argument("empty prediction set");
  if (p.probs.rows() != p.labels.size())
    throw std::invalid_argument("prediction set: probs and labels differ in length");
  const std::size_t k = p.probs.cols();
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    if (p.labels[i] < 0 || static_cast<std::size_t>(p.labels[i]) >= k)
      throw std::invalid_argument("prediction set: label out of range at sample " + std::to_string(i));
    double s = 0.0;
    for (double v : p.probs.row(i)) {
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12))
        throw std::invalid_argument("prediction set: probability outside [0,1] at sample " + std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-8)
      throw std::invalid_argument("prediction set: row " + std::to_string(i) + " does not sum to 1");
  }
}

std::size_t argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

double accuracy(const PredictionSet& p) {
  validate(p);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < p.labels.size(); ++i)
    hit += argmax(p.probs.row(i)) == static_cast<std::size_t>(p.labels[i]) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(p.labels.size());
}

double nll(const PredictionSet& p) {
  validate(p);
  double total = 0.0;
  for (std::size_t i = 0; i < p.labels.size(); ++i)
    total -= std::log(std::max(p.probs(i, static_cast<std::size_t>(p.labels[i])), 1e-12));
  return total / static_cast<double>(p.labels.size());
}

double ece_from_bins(std::span<const CalibrationBin> bins) {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  if (n == 0) return 0.0;
  double e = 0.0;
  for (const auto& b : bins)
    if (b.count > 0)
      e += static_cast<double>(b.count) / static_cast<double>(n) * std::abs(b.accuracy - b.confidence);
  return e;
}

CalibrationReport ece(const PredictionSet& p, std::size_t m_bins) {
  if (m_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  validate(p);
  const double m = static_cast<double>(m_bins);
  auto edge = [&](std::size_t i) { return static_cast<double>(i) / m; };
  CalibrationReport r;
  r.bins.resize(m_bins);
  std::vector<double> conf_sum(m_bins, 0.0);
  std::vector<std::size_t> hits(m_bins, 0);
  for (std::size_t i = 0; i < m_bins; ++i) {
    r.bins[i].lo = edge(i);
    r.bins[i].hi = edge(i + 1);
  }
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    const auto row = p.probs.row(i);
    const std::size_t pred = argmax(row);
    const double c = row[pred];
    const double guess = std::ceil(c * m) - 1.0;
    std::size_t b = guess <= 0.0 ? 0 : std::min(m_bins - 1, static_cast<std::size_t>(guess));
    while (b > 0 && c <= edge(b)) --b;
    while (b + 1 < m_bins && c > edge(b + 1)) ++b;
    ++r.bins[b].count;
    conf_sum[b] += c;
    hits[b] += pred == static_cast<std::size_t>(p.labels[i]) ? 1 : 0;
  }
  for (std::size_t b = 0; b < m_bins; ++b) {
    if (r.bins[b].count == 0) continue;
    const double n = static_cast<double>(r.bins[b].count);
    r.bins[b].accuracy = static_cast<double>(hits[b]) / n;
    r.bins[b].confidence = conf_sum[b] / n;
  }
  r.ece = ece_from_bins(r.bins);
  r.nll = nll(p);
  r.accuracy = accuracy(p);
  return r;
}

nlohmann::json to_json(const CalibrationReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins)
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"acc", b.accuracy}, {"conf", b.confidence}});
  return {{"ece", r.ece}, {"nll", r.nll}, {"accuracy", r.accuracy}, {"bins", bins}};
}

void write_bins_csv(std::ostream& os, std::span<const CalibrationBin> bins) {
  os << "bin_lo,bin_hi,count,acc,conf\n";
  for (const auto& b : bins)
    os << format_double(b.lo) << ',' << format_double(b.hi) << ',' << b.count << ','
       << format_double(b.accuracy) << ',' << format_double(b.confidence) << '\n';
}

Decomposition uncertainty_decomposition(const Matrix& draws, std::span<const double> weights) {
  const std::size_t s = draws.rows();
  const std::size_t k = draws.cols();
  if (s < 2) throw std::invalid_argument("uncertainty_decomposition: need at least 2 draws");
  if (!weights.empty() && weights.size() != s)
    throw std::invalid_argument("uncertainty_decomposition: one weight per draw required");
  auto w = [&](std::size_t j) { return weights.empty() ? 1.0 / static_cast<double>(s) : weights[j]; };
  Decomposition d;
  d.aleatoric.assign(k, 0.0);
  d.epistemic.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double mean = 0.0;
    for (std::size_t j = 0; j < s; ++j) mean += w(j) * draws(j, c);
    double al = 0.0, ep = 0.0;
    for (std::size_t j = 0; j < s; ++j) {
      const double p = draws(j, c);
      al += w(j) * p * (1.0 - p);
      ep += w(j) * (p - mean) * (p - mean);
    }
    d.aleatoric[c] = al;
    d.epistemic[c] = ep;
    d.aleatoric_total += al;
    d.epistemic_total += ep;
  }
  return d;
}

std::vector<Decomposition> decompose_samples(std::span<const Matrix> draws,
                                             std::span<const double> weights) {
  if (draws.empty()) throw std::invalid_argument("decompose_samples: no draws");
  const std::size_t n = draws.front().rows();
  const std::size_t k = draws.front().cols();
  std::vector<Decomposition> out;
  out.reserve(n);
  Matrix per(draws.size(), k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < draws.size(); ++j)
      for (std::size_t c = 0; c < k; ++c) per(j, c) = draws[j](i, c);
    out.push_back(uncertainty_decomposition(per, weights));
  }
  return out;
}

}  // namespace bbnn
