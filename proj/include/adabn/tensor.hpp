#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace adabn {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);

  Tensor reshaped(Shape shape) const;

  // Rows [begin, end) along axis 0.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  // Gathers the listed rows along axis 0, in order.
  Tensor gather_rows(std::span<const std::size_t> rows) const;

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Standard matrix product of a [m x k] and b [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

// Valid (no padding) 2-D cross-correlation: the kernel is NOT flipped.
// input [n x c x h x w], kernel [o x c x kh x kw] -> [n x o x h' x w'] with
// h' = (h - kh) / stride + 1 and likewise for w'.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride);

struct Moments {
  Tensor mean;
  Tensor variance;  // population (divide by N)
};

// Mean and population variance reduced over `axes`. The result keeps the
// non-reduced axes in order (a 64x10 reduced over {0} yields shape {10}).
Moments reduce_moments(const Tensor& x, std::span<const std::size_t> axes);
Moments reduce_moments(const Tensor& x, std::initializer_list<std::size_t> axes);

// Axes that BN reduces over for this input: {0} for [n x p], {0, 2, 3} for
// [n x c x h x w].
std::vector<std::size_t> feature_reduction_axes(const Tensor& x);
std::size_t feature_count(const Tensor& x);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace adabn
