// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fcarac {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major float64 array. Value type; copies are deep.
class Array {
 public:
  Array() = default;

  explicit Array(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("Array: shape " + shape_str(shape_) + " does not hold " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Array scalar(double v) { return Array(Shape{1}, std::vector<double>{v}); }
  static Array vector(std::vector<double> v) {
    const auto n = v.size();
    return Array(Shape{n}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double& at(std::size_t a, std::size_t b, std::size_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  double at(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  /// Number of rows when viewed as a matrix (first axis).
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  /// Row width when viewed as a matrix (product of trailing axes).
  std::size_t cols() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

  Array reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    return Array(std::move(shape), data_);
  }

  Array rows_slice(std::size_t start, std::size_t count) const {
    if (start + count > rows()) throw ShapeError("rows_slice out of range");
    Shape s = shape_;
    s[0] = count;
    const auto w = cols();
    return Array(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(start * w),
                                                   data_.begin() + static_cast<std::ptrdiff_t>((start + count) * w)));
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  friend bool operator==(const Array& a, const Array& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Array& a, const Array& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline void require_rank(const Array& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
  }
}

inline double max_abs_diff(const Array& a, const Array& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace kernels {

inline Array matmul(const Array& a, const Array& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Array out(Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < n; ++l) {
      const double av = a.at(i, l);
      if (av == 0.0) continue;
      const double* brow = &b.data()[l * p];
      double* orow = &out.data()[i * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Array transpose(const Array& a) {
  require_rank(a, 2, "transpose");
  Array out(Shape{a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

/// Centre offset of a length-s kernel; even lengths centre at s/2.
inline std::ptrdiff_t kernel_center(std::size_t s) { return static_cast<std::ptrdiff_t>(s / 2); }

/// Output length of a same-padded strided correlation.
inline std::size_t correlate_out_len(std::size_t frames, std::size_t stride) {
  return (frames + stride - 1) / stride;
}

/// out[t] = sum_{j,c} signal[t*stride + j - s/2, c] * kernel[j, c], zero outside [0, F).
inline Array correlate1d(const Array& signal, const Array& kernel, std::size_t stride = 1) {
  require_rank(signal, 2, "correlate1d");
  require_rank(kernel, 2, "correlate1d");
  if (signal.dim(1) != kernel.dim(1)) {
    throw ShapeError("correlate1d: channel mismatch " + shape_str(signal.shape()) + " vs " +
                     shape_str(kernel.shape()));
  }
  if (kernel.dim(0) == 0) throw std::invalid_argument("correlate1d: empty kernel");
  if (stride == 0) throw std::invalid_argument("correlate1d: stride must be >= 1");
  const auto frames = static_cast<std::ptrdiff_t>(signal.dim(0));
  const auto s = kernel.dim(0);
  const auto d = signal.dim(1);
  const auto half = kernel_center(s);
  const auto out_len = correlate_out_len(signal.dim(0), stride);
  Array out(Shape{out_len});
  for (std::size_t t = 0; t < out_len; ++t) {
    double acc = 0.0;
    const auto centre = static_cast<std::ptrdiff_t>(t * stride);
    for (std::size_t j = 0; j < s; ++j) {
      const auto src = centre + static_cast<std::ptrdiff_t>(j) - half;
      if (src < 0 || src >= frames) continue;
      const double* srow = &signal.data()[static_cast<std::size_t>(src) * d];
      const double* krow = &kernel.data()[j * d];
      for (std::size_t c = 0; c < d; ++c) acc += srow[c] * krow[c];
    }
    out[t] = acc;
  }
  return out;
}

/// Linear-interpolation weights mapping k source samples onto n targets.
/// Each target i reads source lo[i] with weight (1-frac[i]) and lo[i]+1 with frac[i].
struct InterpPlan {
  std::vector<std::size_t> lo;
  std::vector<double> frac;
};

inline InterpPlan interp_plan(std::size_t k, std::size_t target_len) {
  if (target_len < 1) throw std::invalid_argument("interp_linear: target_len must be >= 1");
  if (k < 2) throw std::invalid_argument("interp_linear: need at least 2 source samples");
  InterpPlan plan;
  plan.lo.resize(target_len);
  plan.frac.resize(target_len);
  for (std::size_t i = 0; i < target_len; ++i) {
    // A single target sits at the centre of the source span.
    const double pos = target_len == 1
                           ? 0.5 * static_cast<double>(k - 1)
                           : static_cast<double>(i) * static_cast<double>(k - 1) / static_cast<double>(target_len - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= k - 1) lo = k - 2;
    plan.lo[i] = lo;
    plan.frac[i] = pos - static_cast<double>(lo);
  }
  // Endpoints exact.
  if (target_len >= 2) {
    plan.lo.front() = 0;
    plan.frac.front() = 0.0;
    plan.lo.back() = k - 2;
    plan.frac.back() = 1.0;
  }
  return plan;
}

inline Array interp_linear(const Array& kernel, std::size_t target_len) {
  require_rank(kernel, 2, "interp_linear");
  const auto k = kernel.dim(0), d = kernel.dim(1);
  const auto plan = interp_plan(k, target_len);
  Array out(Shape{target_len, d});
  for (std::size_t i = 0; i < target_len; ++i) {
    const double f = plan.frac[i];
    for (std::size_t c = 0; c < d; ++c) {
      const double a = kernel.at(plan.lo[i], c);
      const double b = kernel.at(plan.lo[i] + 1, c);
      out.at(i, c) = f == 1.0 ? b : (f == 0.0 ? a : a + f * (b - a));
    }
  }
  return out;
}

}  // namespace kernels
}  // namespace fcarac
