#include "adabn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adabn/errors.hpp"

namespace adabn {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_to_string(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                         " elements, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape_));
  }
  return shape_[axis];
}

double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}
double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0]) {
    throw DimensionError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_to_string(shape_));
  }
  const std::size_t stride = data_.size() / shape_[0];
  Shape out = shape_;
  out[0] = end - begin;
  return Tensor(std::move(out), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                    data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
  if (shape_.empty() || rows.empty()) throw DimensionError("gather_rows needs a non-empty row list");
  const std::size_t stride = data_.size() / shape_[0];
  std::vector<double> out;
  out.reserve(rows.size() * stride);
  for (auto r : rows) {
    if (r >= shape_[0]) throw DimensionError("row " + std::to_string(r) + " out of range for " + shape_to_string(shape_));
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(r * stride);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(stride));
  }
  Shape s = shape_;
  s[0] = rows.size();
  return Tensor(std::move(s), std::move(out));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) + " * " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  auto o = out.data();
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      double* orow = o.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose needs a matrix, got " + shape_to_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d needs 4-D input and kernel, got " + shape_to_string(input.shape()) + " and " +
                         shape_to_string(kernel.shape()));
  }
  if (stride == 0) throw PreconditionError("conv2d stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != c) {
    throw DimensionError("conv2d channel mismatch: input " + shape_to_string(input.shape()) + ", kernel " +
                         shape_to_string(kernel.shape()));
  }
  if (kh > h || kw > w) {
    throw DimensionError("conv2d kernel " + shape_to_string(kernel.shape()) + " larger than input " +
                         shape_to_string(input.shape()));
  }
  const std::size_t oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;
  Tensor out({n, o, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < o; ++f)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j)
                acc += input.at(b, ch, y * stride + i, x * stride + j) * kernel.at(f, ch, i, j);
          out.at(b, f, y, x) = acc;
        }
  return out;
}

namespace {

// Maps every flat index to its position in the reduced (kept-axes) output.
struct ReductionPlan {
  Shape kept_shape;
  std::vector<std::size_t> out_index;
  std::size_t reduce_count = 1;
};

ReductionPlan plan_reduction(const Tensor& x, std::span<const std::size_t> axes) {
  std::vector<bool> reduce(x.rank(), false);
  for (auto a : axes) {
    if (a >= x.rank()) {
      throw DimensionError("reduction axis " + std::to_string(a) + " out of range for " + shape_to_string(x.shape()));
    }
    reduce[a] = true;
  }
  ReductionPlan plan;
  for (std::size_t a = 0; a < x.rank(); ++a) {
    if (reduce[a]) {
      plan.reduce_count *= x.dim(a);
    } else {
      plan.kept_shape.push_back(x.dim(a));
    }
  }
  if (axes.empty() || plan.reduce_count == 0) throw PreconditionError("reduce_moments needs a non-empty reduction");
  if (plan.kept_shape.empty()) plan.kept_shape.push_back(1);

  plan.out_index.resize(x.size());
  std::vector<std::size_t> idx(x.rank(), 0);
  for (std::size_t flat = 0; flat < x.size(); ++flat) {
    std::size_t out = 0;
    for (std::size_t a = 0; a < x.rank(); ++a) {
      if (!reduce[a]) out = out * x.dim(a) + idx[a];
    }
    plan.out_index[flat] = out;
    for (std::size_t a = x.rank(); a-- > 0;) {
      if (++idx[a] < x.dim(a)) break;
      idx[a] = 0;
    }
  }
  return plan;
}

}  // namespace

Moments reduce_moments(const Tensor& x, std::span<const std::size_t> axes) {
  if (x.empty()) throw PreconditionError("reduce_moments on an empty tensor");
  const ReductionPlan plan = plan_reduction(x, axes);
  Tensor mean(plan.kept_shape), var(plan.kept_shape);
  auto xv = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) mean[plan.out_index[i]] += xv[i];
  const double inv = 1.0 / static_cast<double>(plan.reduce_count);
  for (auto& m : mean.data()) m *= inv;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = xv[i] - mean[plan.out_index[i]];
    var[plan.out_index[i]] += d * d;
  }
  for (auto& v : var.data()) v *= inv;
  return {std::move(mean), std::move(var)};
}

Moments reduce_moments(const Tensor& x, std::initializer_list<std::size_t> axes) {
  const std::vector<std::size_t> a(axes);
  return reduce_moments(x, std::span<const std::size_t>(a));
}

std::vector<std::size_t> feature_reduction_axes(const Tensor& x) {
  if (x.rank() == 2) return {0};
  if (x.rank() == 4) return {0, 2, 3};
  throw DimensionError("expected [n x p] or [n x c x h x w], got " + shape_to_string(x.shape()));
}

std::size_t feature_count(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw DimensionError("expected [n x p] or [n x c x h x w], got " + shape_to_string(x.shape()));
  }
  return x.dim(1);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace adabn
