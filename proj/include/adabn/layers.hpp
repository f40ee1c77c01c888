#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "adabn/tensor.hpp"

namespace adabn {

// Per-feature normalization statistics for one BN layer. `count` is the
// number of samples the estimate was built from (0 when unknown).
struct BnStats {
  Tensor mean;
  Tensor variance;
  std::uint64_t count = 0;

  friend bool operator==(const BnStats&, const BnStats&) = default;
};

// Fully connected layer. `weight` is [in x out] and a batch X [n x in] maps to
// X * weight + bias, i.e. W^T x + b per sample.
struct LinearLayer {
  Tensor weight;
  Tensor bias;

  static LinearLayer create(std::size_t in, std::size_t out, std::mt19937_64& rng);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct Conv2dLayer {
  Tensor kernel;  // [out x in x kh x kw]
  Tensor bias;    // [out]
  std::size_t stride = 1;

  static Conv2dLayer create(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                            std::size_t stride, std::mt19937_64& rng);
};

struct ReluLayer {};

// [n x c x h x w] -> [n x (c*h*w)]
struct FlattenLayer {};

enum class BnMode { kTrain, kEval };

// Batch normalization over axis 1. For [n x p] input a feature is a column;
// for [n x c x h x w] input a feature is a channel and moments reduce over
// batch and both spatial axes. Epsilon sits inside the square root in every
// path (train, eval and domain-swapped).
struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  BnMode mode = BnMode::kTrain;

  // Statistics installed by apply_domain(). When set, eval-mode forward
  // uses them instead of the running statistics.
  std::optional<BnStats> domain_stats;
  std::string domain_id;

  static BatchNormLayer create(std::size_t features, double momentum = 0.1, double epsilon = 1e-5);
  std::size_t features() const { return gamma.size(); }
  const Tensor& eval_mean() const { return domain_stats ? domain_stats->mean : running_mean; }
  const Tensor& eval_variance() const { return domain_stats ? domain_stats->variance : running_var; }
};

using Layer = std::variant<LinearLayer, Conv2dLayer, ReluLayer, FlattenLayer, BatchNormLayer>;

std::string_view layer_kind_name(const Layer& layer);

// Forward caches. Each backward checks it received the cache kind its forward
// produced, and that the gradient shape matches.
struct LinearCache {
  Tensor input;
};
struct Conv2dCache {
  Tensor input;
};
struct ReluCache {
  Tensor input;
};
struct FlattenCache {
  Shape input_shape;
};
struct BnCache {
  Tensor normalized;  // x-hat, same shape as the input
  Tensor inv_std;     // [features]
  bool batch_statistics = false;
};
using LayerCache = std::variant<std::monostate, LinearCache, Conv2dCache, ReluCache, FlattenCache, BnCache>;

struct LayerGrads {
  Tensor input;
  std::vector<Tensor> params;  // same order as parameters()
};

Tensor linear_forward(const LinearLayer& layer, const Tensor& x, LayerCache* cache = nullptr);
LayerGrads linear_backward(const LinearLayer& layer, const Tensor& grad_out, const LayerCache& cache);

Tensor conv2d_forward(const Conv2dLayer& layer, const Tensor& x, LayerCache* cache = nullptr);
LayerGrads conv2d_backward(const Conv2dLayer& layer, const Tensor& grad_out, const LayerCache& cache);

Tensor relu_forward(const Tensor& x, LayerCache* cache = nullptr);
LayerGrads relu_backward(const Tensor& grad_out, const LayerCache& cache);

Tensor flatten_forward(const Tensor& x, LayerCache* cache = nullptr);
LayerGrads flatten_backward(const Tensor& grad_out, const LayerCache& cache);

// Normalizes with the mini-batch's own moments and folds them into the running
// statistics: running <- (1 - momentum) * running + momentum * batch.
// Requires a batch of at least two samples.
Tensor bn_forward_train(BatchNormLayer& layer, const Tensor& x, LayerCache* cache = nullptr);

// Normalizes with the supplied statistics, never the batch's own.
Tensor bn_forward_eval(const BatchNormLayer& layer, const Tensor& x, const Tensor& mean, const Tensor& variance,
                       LayerCache* cache = nullptr);

// Differentiates through the batch mean and variance when the cache came from
// bn_forward_train; otherwise the map is affine in x.
LayerGrads bn_backward(const BatchNormLayer& layer, const Tensor& grad_out, const LayerCache& cache);

// Dispatching forward honoring a BN layer's mode. Train mode mutates the
// layer's running statistics.
Tensor layer_forward(Layer& layer, const Tensor& x, LayerCache* cache = nullptr);
// Same, but BN layers always run in eval mode and nothing is mutated.
Tensor layer_forward_eval(const Layer& layer, const Tensor& x, LayerCache* cache = nullptr);
LayerGrads layer_backward(const Layer& layer, const Tensor& grad_out, const LayerCache& cache);

// Learnable tensors in a fixed order: (weight, bias), (kernel, bias), (gamma, beta).
std::vector<Tensor*> parameters(Layer& layer);
std::vector<const Tensor*> parameters(const Layer& layer);

struct SoftmaxCrossEntropy {
  double loss = 0.0;      // mean over the batch
  Tensor grad_logits;     // d loss / d logits
  Tensor probabilities;
};

SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Folds a BN layer with gamma = 1, beta = 0 and per-feature statistics
// (mu, sigma) into the following linear layer. With Sigma = diag(sigma):
//   weight = W^T Sigma^-1,  bias = b - W^T Sigma^-1 mu
// so that weight * x + bias == W^T ((x - mu) / sigma) + b for every x.
// The returned weight is [out x in] (it acts on column vectors). Any
// sigma_i <= 0 throws DomainError.
struct FoldedAffine {
  Tensor weight;
  Tensor bias;
};
FoldedAffine compose_bn_linear(const Tensor& mean, const Tensor& stddev, const LinearLayer& linear);

}  // namespace adabn
