#include "adabn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "adabn/errors.hpp"

namespace adabn {

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

template <typename C>
const C& expect_cache(const LayerCache& cache, std::string_view who) {
  const C* c = std::get_if<C>(&cache);
  if (!c) throw ContractError(std::string(who) + " backward received a cache from a different forward");
  return *c;
}

void expect_same_shape(const Shape& expected, const Tensor& grad, std::string_view who) {
  if (grad.shape() != expected) {
    throw ContractError(std::string(who) + " backward: gradient shape " + shape_to_string(grad.shape()) +
                        " does not match cached forward output " + shape_to_string(expected));
  }
}

void check_bn_input(const BatchNormLayer& layer, const Tensor& x) {
  if (feature_count(x) != layer.features()) {
    throw DimensionError("batchnorm expects " + std::to_string(layer.features()) + " features, input is " +
                         shape_to_string(x.shape()));
  }
}

// Number of contiguous elements per (sample, feature) pair.
std::size_t inner_extent(const Tensor& x) { return x.rank() == 4 ? x.dim(2) * x.dim(3) : 1; }

}  // namespace

LinearLayer LinearLayer::create(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {he_normal({in, out}, in, rng), Tensor({out}, 0.0)};
}

Conv2dLayer Conv2dLayer::create(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                                std::size_t stride, std::mt19937_64& rng) {
  return {he_normal({out_channels, in_channels, kernel_size, kernel_size}, in_channels * kernel_size * kernel_size, rng),
          Tensor({out_channels}, 0.0), stride};
}

BatchNormLayer BatchNormLayer::create(std::size_t features, double momentum, double epsilon) {
  if (!(momentum > 0.0 && momentum <= 1.0)) throw PreconditionError("batchnorm momentum must lie in (0, 1]");
  if (!(epsilon > 0.0)) throw PreconditionError("batchnorm epsilon must be positive");
  BatchNormLayer bn;
  bn.gamma = Tensor({features}, 1.0);
  bn.beta = Tensor({features}, 0.0);
  bn.running_mean = Tensor({features}, 0.0);
  bn.running_var = Tensor({features}, 1.0);
  bn.momentum = momentum;
  bn.epsilon = epsilon;
  return bn;
}

std::string_view layer_kind_name(const Layer& layer) {
  struct Visitor {
    std::string_view operator()(const LinearLayer&) const { return "linear"; }
    std::string_view operator()(const Conv2dLayer&) const { return "conv2d"; }
    std::string_view operator()(const ReluLayer&) const { return "relu"; }
    std::string_view operator()(const FlattenLayer&) const { return "flatten"; }
    std::string_view operator()(const BatchNormLayer&) const { return "batchnorm"; }
  };
  return std::visit(Visitor{}, layer);
}

// ---- linear ----

Tensor linear_forward(const LinearLayer& layer, const Tensor& x, LayerCache* cache) {
  if (x.rank() != 2 || x.dim(1) != layer.in_features()) {
    throw DimensionError("linear expects [n x " + std::to_string(layer.in_features()) + "], got " +
                         shape_to_string(x.shape()));
  }
  Tensor y = matmul(x, layer.weight);
  const std::size_t out = layer.out_features();
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < out; ++j) y.at(i, j) += layer.bias[j];
  if (cache) *cache = LinearCache{x};
  return y;
}

LayerGrads linear_backward(const LinearLayer& layer, const Tensor& grad_out, const LayerCache& cache) {
  const auto& c = expect_cache<LinearCache>(cache, "linear");
  expect_same_shape({c.input.dim(0), layer.out_features()}, grad_out, "linear");
  LayerGrads g;
  g.input = matmul(grad_out, transpose(layer.weight));
  Tensor grad_w = matmul(transpose(c.input), grad_out);
  Tensor grad_b({layer.out_features()}, 0.0);
  for (std::size_t i = 0; i < grad_out.dim(0); ++i)
    for (std::size_t j = 0; j < grad_out.dim(1); ++j) grad_b[j] += grad_out.at(i, j);
  g.params = {std::move(grad_w), std::move(grad_b)};
  return g;
}

// ---- conv2d ----

Tensor conv2d_forward(const Conv2dLayer& layer, const Tensor& x, LayerCache* cache) {
  Tensor y = conv2d(x, layer.kernel, layer.stride);
  const std::size_t plane = y.dim(2) * y.dim(3);
  auto yv = y.data();
  for (std::size_t b = 0; b < y.dim(0); ++b)
    for (std::size_t f = 0; f < y.dim(1); ++f) {
      double* p = yv.data() + (b * y.dim(1) + f) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += layer.bias[f];
    }
  if (cache) *cache = Conv2dCache{x};
  return y;
}

LayerGrads conv2d_backward(const Conv2dLayer& layer, const Tensor& grad_out, const LayerCache& cache) {
  const auto& c = expect_cache<Conv2dCache>(cache, "conv2d");
  const Tensor& x = c.input;
  const std::size_t n = x.dim(0), ch = x.dim(1);
  const std::size_t o = layer.kernel.dim(0), kh = layer.kernel.dim(2), kw = layer.kernel.dim(3);
  const std::size_t oh = (x.dim(2) - kh) / layer.stride + 1, ow = (x.dim(3) - kw) / layer.stride + 1;
  expect_same_shape({n, o, oh, ow}, grad_out, "conv2d");

  Tensor grad_in(x.shape(), 0.0);
  Tensor grad_k(layer.kernel.shape(), 0.0);
  Tensor grad_b({o}, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < o; ++f)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double g = grad_out.at(b, f, y, xx);
          grad_b[f] += g;
          for (std::size_t cc = 0; cc < ch; ++cc)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const std::size_t r = y * layer.stride + i, s = xx * layer.stride + j;
                grad_k.at(f, cc, i, j) += g * x.at(b, cc, r, s);
                grad_in.at(b, cc, r, s) += g * layer.kernel.at(f, cc, i, j);
              }
        }
  return {std::move(grad_in), {std::move(grad_k), std::move(grad_b)}};
}

// ---- relu / flatten ----

Tensor relu_forward(const Tensor& x, LayerCache* cache) {
  Tensor y = x;
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  if (cache) *cache = ReluCache{x};
  return y;
}

LayerGrads relu_backward(const Tensor& grad_out, const LayerCache& cache) {
  const auto& c = expect_cache<ReluCache>(cache, "relu");
  expect_same_shape(c.input.shape(), grad_out, "relu");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (c.input[i] <= 0.0) g[i] = 0.0;
  return {std::move(g), {}};
}

Tensor flatten_forward(const Tensor& x, LayerCache* cache) {
  if (x.rank() < 2) throw DimensionError("flatten needs a batch axis, got " + shape_to_string(x.shape()));
  if (cache) *cache = FlattenCache{x.shape()};
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

LayerGrads flatten_backward(const Tensor& grad_out, const LayerCache& cache) {
  const auto& c = expect_cache<FlattenCache>(cache, "flatten");
  expect_same_shape({c.input_shape[0], shape_numel(c.input_shape) / c.input_shape[0]}, grad_out, "flatten");
  return {grad_out.reshaped(c.input_shape), {}};
}

// ---- batchnorm ----

namespace {

Tensor bn_normalize(const BatchNormLayer& layer, const Tensor& x, const Tensor& mean, const Tensor& inv_std,
                    Tensor* normalized) {
  const std::size_t n = x.dim(0), p = layer.features(), inner = inner_extent(x);
  Tensor y(x.shape());
  if (normalized) *normalized = Tensor(x.shape());
  auto xv = x.data();
  auto yv = y.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < p; ++j) {
      const std::size_t base = (b * p + j) * inner;
      for (std::size_t k = 0; k < inner; ++k) {
        const double xhat = (xv[base + k] - mean[j]) * inv_std[j];
        if (normalized) (*normalized)[base + k] = xhat;
        yv[base + k] = layer.gamma[j] * xhat + layer.beta[j];
      }
    }
  return y;
}

Tensor inverse_std(const Tensor& variance, double epsilon) {
  Tensor inv(variance.shape());
  for (std::size_t j = 0; j < variance.size(); ++j) inv[j] = 1.0 / std::sqrt(variance[j] + epsilon);
  return inv;
}

}  // namespace

Tensor bn_forward_train(BatchNormLayer& layer, const Tensor& x, LayerCache* cache) {
  check_bn_input(layer, x);
  if (x.dim(0) < 2) throw PreconditionError("batchnorm in train mode needs a batch of at least 2 samples");
  const auto axes = feature_reduction_axes(x);
  Moments m = reduce_moments(x, axes);
  Tensor inv = inverse_std(m.variance, layer.epsilon);
  BnCache c;
  Tensor y = bn_normalize(layer, x, m.mean, inv, cache ? &c.normalized : nullptr);
  for (std::size_t j = 0; j < layer.features(); ++j) {
    layer.running_mean[j] = (1.0 - layer.momentum) * layer.running_mean[j] + layer.momentum * m.mean[j];
    layer.running_var[j] = (1.0 - layer.momentum) * layer.running_var[j] + layer.momentum * m.variance[j];
  }
  if (cache) {
    c.inv_std = std::move(inv);
    c.batch_statistics = true;
    *cache = std::move(c);
  }
  return y;
}

Tensor bn_forward_eval(const BatchNormLayer& layer, const Tensor& x, const Tensor& mean, const Tensor& variance,
                       LayerCache* cache) {
  check_bn_input(layer, x);
  if (mean.size() != layer.features() || variance.size() != layer.features()) {
    throw DimensionError("batchnorm statistics have length " + std::to_string(mean.size()) + "/" +
                         std::to_string(variance.size()) + ", layer has " + std::to_string(layer.features()) +
                         " features");
  }
  for (std::size_t j = 0; j < variance.size(); ++j) {
    if (!(variance[j] >= 0.0)) throw DomainError("batchnorm statistics contain a negative variance");
  }
  Tensor inv = inverse_std(variance, layer.epsilon);
  BnCache c;
  Tensor y = bn_normalize(layer, x, mean, inv, cache ? &c.normalized : nullptr);
  if (cache) {
    c.inv_std = std::move(inv);
    c.batch_statistics = false;
    *cache = std::move(c);
  }
  return y;
}

LayerGrads bn_backward(const BatchNormLayer& layer, const Tensor& grad_out, const LayerCache& cache) {
  const auto& c = expect_cache<BnCache>(cache, "batchnorm");
  expect_same_shape(c.normalized.shape(), grad_out, "batchnorm");
  const std::size_t n = grad_out.dim(0), p = layer.features(), inner = inner_extent(grad_out);
  const double count = static_cast<double>(n * inner);

  Tensor grad_gamma({p}, 0.0), grad_beta({p}, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t i = (b * p + j) * inner + k;
        grad_gamma[j] += grad_out[i] * c.normalized[i];
        grad_beta[j] += grad_out[i];
      }

  Tensor grad_in(grad_out.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < inner; ++k) {
        const std::size_t i = (b * p + j) * inner + k;
        const double dxhat = grad_out[i] * layer.gamma[j];
        if (c.batch_statistics) {
          // sum(dxhat) = gamma * grad_beta, sum(dxhat * xhat) = gamma * grad_gamma
          grad_in[i] = c.inv_std[j] / count *
                       (count * dxhat - layer.gamma[j] * grad_beta[j] - c.normalized[i] * layer.gamma[j] * grad_gamma[j]);
        } else {
          grad_in[i] = dxhat * c.inv_std[j];
        }
      }
  return {std::move(grad_in), {std::move(grad_gamma), std::move(grad_beta)}};
}

// ---- dispatch ----

Tensor layer_forward(Layer& layer, const Tensor& x, LayerCache* cache) {
  if (auto* bn = std::get_if<BatchNormLayer>(&layer); bn && bn->mode == BnMode::kTrain) {
    return bn_forward_train(*bn, x, cache);
  }
  return layer_forward_eval(layer, x, cache);
}

Tensor layer_forward_eval(const Layer& layer, const Tensor& x, LayerCache* cache) {
  struct Visitor {
    const Tensor& x;
    LayerCache* cache;
    Tensor operator()(const LinearLayer& l) const { return linear_forward(l, x, cache); }
    Tensor operator()(const Conv2dLayer& l) const { return conv2d_forward(l, x, cache); }
    Tensor operator()(const ReluLayer&) const { return relu_forward(x, cache); }
    Tensor operator()(const FlattenLayer&) const { return flatten_forward(x, cache); }
    Tensor operator()(const BatchNormLayer& l) const {
      return bn_forward_eval(l, x, l.eval_mean(), l.eval_variance(), cache);
    }
  };
  return std::visit(Visitor{x, cache}, layer);
}

LayerGrads layer_backward(const Layer& layer, const Tensor& grad_out, const LayerCache& cache) {
  struct Visitor {
    const Tensor& g;
    const LayerCache& cache;
    LayerGrads operator()(const LinearLayer& l) const { return linear_backward(l, g, cache); }
    LayerGrads operator()(const Conv2dLayer& l) const { return conv2d_backward(l, g, cache); }
    LayerGrads operator()(const ReluLayer&) const { return relu_backward(g, cache); }
    LayerGrads operator()(const FlattenLayer&) const { return flatten_backward(g, cache); }
    LayerGrads operator()(const BatchNormLayer& l) const { return bn_backward(l, g, cache); }
  };
  return std::visit(Visitor{grad_out, cache}, layer);
}

std::vector<Tensor*> parameters(Layer& layer) {
  struct Visitor {
    std::vector<Tensor*> operator()(LinearLayer& l) const { return {&l.weight, &l.bias}; }
    std::vector<Tensor*> operator()(Conv2dLayer& l) const { return {&l.kernel, &l.bias}; }
    std::vector<Tensor*> operator()(ReluLayer&) const { return {}; }
    std::vector<Tensor*> operator()(FlattenLayer&) const { return {}; }
    std::vector<Tensor*> operator()(BatchNormLayer& l) const { return {&l.gamma, &l.beta}; }
  };
  return std::visit(Visitor{}, layer);
}

std::vector<const Tensor*> parameters(const Layer& layer) {
  auto mut = parameters(const_cast<Layer&>(layer));
  return {mut.begin(), mut.end()};
}

// ---- loss ----

SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  SoftmaxCrossEntropy out;
  out.probabilities = Tensor(logits.shape());
  out.grad_logits = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DimensionError("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at(i, j) - mx);
    const double log_z = std::log(z) + mx;
    total += log_z - logits.at(i, static_cast<std::size_t>(label));
    for (std::size_t j = 0; j < k; ++j) {
      const double prob = std::exp(logits.at(i, j) - log_z);
      out.probabilities.at(i, j) = prob;
      out.grad_logits.at(i, j) = (prob - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

// ---- BN + linear folding ----

FoldedAffine compose_bn_linear(const Tensor& mean, const Tensor& stddev, const LinearLayer& linear) {
  const std::size_t in = linear.in_features(), out = linear.out_features();
  if (mean.size() != in || stddev.size() != in) {
    throw DimensionError("compose_bn_linear: statistics of length " + std::to_string(mean.size()) + "/" +
                         std::to_string(stddev.size()) + " for a linear layer with " + std::to_string(in) + " inputs");
  }
  for (std::size_t i = 0; i < in; ++i) {
    if (!(stddev[i] > 0.0)) throw DomainError("compose_bn_linear: singular statistics, sigma_" + std::to_string(i) + " <= 0");
  }
  FoldedAffine f{Tensor({out, in}), linear.bias};
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) {
      const double w = linear.weight.at(i, o) / stddev[i];
      f.weight.at(o, i) = w;
      f.bias[o] -= w * mean[i];
    }
  }
  return f;
}

}  // namespace adabn
