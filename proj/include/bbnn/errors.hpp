#pragma once

#include <stdexcept>
#include <string>

namespace bbnn {

/// Invalid user input: configuration, schema, or argument validation.
/// The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure during training or evaluation (NaN objective,
/// non-finite density, divergence). The CLI maps this to exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bbnn
