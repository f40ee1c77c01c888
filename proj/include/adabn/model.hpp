#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adabn/layers.hpp"

namespace adabn {

struct NamedLayer {
  std::string name;
  Layer layer;
};

// Ordered stack of named layers. Layer names are unique; BN layer names key
// the statistics bank.
class Model {
 public:
  Model() = default;
  // `input_shape` is the per-sample shape, e.g. {16} or {1, 12, 12}.
  explicit Model(Shape input_shape);

  Model& add(std::string name, Layer layer);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<NamedLayer>& layers() const { return layers_; }
  std::vector<NamedLayer>& layers() { return layers_; }

  std::optional<std::size_t> index_of(std::string_view name) const;
  std::size_t require_index(std::string_view name) const;
  std::vector<std::size_t> bn_indices() const;
  std::vector<std::string> bn_names() const;
  BatchNormLayer& bn(std::string_view name);
  const BatchNormLayer& bn(std::string_view name) const;

  void set_mode(BnMode mode);

  // Propagates shapes through the stack and throws DimensionError at the
  // first incompatible pair. Returns the per-sample output shape.
  Shape output_shape() const;

  // Forward honoring each BN layer's mode; train-mode BN layers update their
  // running statistics. Caches, when requested, are one per layer.
  Tensor forward(const Tensor& x, std::vector<LayerCache>* caches = nullptr);
  std::vector<LayerGrads> backward(const Tensor& grad_out, const std::vector<LayerCache>& caches) const;

  // Eval-mode forward over layers [begin, end). BN layers use installed domain
  // statistics when present, running statistics otherwise.
  Tensor forward_eval(const Tensor& x, std::size_t begin, std::size_t end) const;
  Tensor predict(const Tensor& x) const { return forward_eval(x, 0, layers_.size()); }

  // Domain currently installed in the BN layers ("" when running stats are used).
  std::string active_domain() const;
  void clear_domain();

 private:
  Shape input_shape_;
  std::vector<NamedLayer> layers_;
};

// Reference architectures. Hidden blocks are linear -> batchnorm -> relu.
Model make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
               std::uint64_t seed);

// conv1(3x3) -> bn1 -> relu1 -> conv2(3x3, stride 2) -> bn2 -> relu2 -> flatten
// -> fc1 -> bn3 -> relu3 -> fc_out
Model make_convnet(std::size_t channels, std::size_t image_size, std::size_t classes, std::uint64_t seed,
                   std::size_t width = 8);

// Applies `fn` to every learnable tensor, visiting layers in order.
template <typename Fn>
void for_each_parameter(const Model& model, Fn&& fn) {
  for (const auto& nl : model.layers()) {
    for (const Tensor* t : parameters(nl.layer)) fn(nl.name, *t);
  }
}

}  // namespace adabn
