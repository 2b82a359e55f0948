#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace bbnn {

using Vector = std::vector<double>;

// ---------------------------------------------------------------------------
// Scalar kernels
// ---------------------------------------------------------------------------

/// Branch point of the asymptotic softplus path. Beyond |x| = 30 the
/// correction term e^{-|x|} is below double rounding of the leading term.
inline constexpr double kSoftplusSwitch = 30.0;

/// log(1 + e^x), overflow safe.
double softplus(double x) noexcept;

/// d/dx softplus(x) = 1 / (1 + e^-x).
double sigmoid(double x) noexcept;

/// Inverse of softplus for y > 0: log(e^y - 1).
double softplus_inverse(double y);

/// log sum_i e^{v_i} with max shift. Throws std::invalid_argument("empty input").
double log_sum_exp(std::span<const double> v);

/// Left-to-right sum and dot product (fixed reduction order).
double sum(std::span<const double> v) noexcept;
double dot(std::span<const double> a, std::span<const double> b);

/// Central-difference gradient of f at x. Throws NumericError naming the
/// coordinate when f is non-finite at x +- h e_i.
Vector finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                        std::span<const double> x, double h);

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, Vector data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  const Vector& data() const noexcept { return data_; }
  Vector& data() noexcept { return data_; }

  /// True when every entry is finite.
  bool all_finite() const noexcept;

  /// Rows selected by `indices`, in that order.
  Matrix select_rows(std::span<const std::size_t> indices) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

/// C = A * B. Throws std::invalid_argument on shape mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

// ---------------------------------------------------------------------------
// Counter-based random streams
// ---------------------------------------------------------------------------

/// Philox4x32-10 stream keyed by `seed`; `stream_id` occupies the upper half
/// of the counter, so distinct ids never share blocks. Identical
/// (seed, stream_id) pairs replay bit-identical draws.
///
/// Single owner: do not draw from one stream on several threads.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  /// Standard normal via the Marsaglia polar method (pairs are cached).
  double normal() noexcept;
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) noexcept;

  /// Independent child stream with the same seed. Children of distinct
  /// parents or distinct indices never collide in practice (64-bit mix).
  RngStream substream(std::uint64_t index) const noexcept;

 private:
  void refill() noexcept;

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t counter_ = 0;
  std::uint32_t block_[4] = {0, 0, 0, 0};
  int block_pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// n i.i.d. standard-normal draws from `rng`.
Vector sample_std_normal(RngStream& rng, std::size_t n);

/// Fisher-Yates shuffle driven by `rng`.
void shuffle(std::span<std::size_t> v, RngStream& rng) noexcept;

/// Runs fn(i) for i in [0, n) on up to `threads` workers. fn must only write
/// to state owned by index i; callers reduce afterwards in index order.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace bbnn
