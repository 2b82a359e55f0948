#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bbnn/data.hpp"
#include "bbnn/ndmath.hpp"

namespace testutil {

// Two Gaussian blobs centred at (+-1.5, +-1.5); label = cluster.
inline bbnn::Dataset separable_toy(std::size_t n, std::uint64_t seed, double spread = 0.3) {
  bbnn::RngStream rng(seed, 0x70ull);
  bbnn::Dataset d;
  d.name = "separable";
  d.class_count = 2;
  d.features = bbnn::Matrix(n, 2);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    const double c = y == 0 ? -1.5 : 1.5;
    d.features(i, 0) = c + spread * rng.normal();
    d.features(i, 1) = c + spread * rng.normal();
    d.labels[i] = y;
  }
  d.feature_names = {"x0", "x1"};
  d.class_names = {"a", "b"};
  return d;
}

inline bbnn::Split all_train(std::size_t n) {
  bbnn::Split s;
  for (std::size_t i = 0; i < n; ++i) s.train.push_back(i);
  return s;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_var(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Mean and standard error of the mean.
inline std::pair<double, double> mean_se(const std::vector<double>& v) {
  return {mean(v), std::sqrt(sample_var(v) / static_cast<double>(v.size()))};
}

}  // namespace testutil
