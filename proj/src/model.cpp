#include "adabn/model.hpp"

#include <random>

#include "adabn/errors.hpp"

namespace adabn {

Model::Model(Shape input_shape) : input_shape_(std::move(input_shape)) {
  if (input_shape_.empty() || shape_numel(input_shape_) == 0) {
    throw DimensionError("model input shape must be non-empty and positive");
  }
}

Model& Model::add(std::string name, Layer layer) {
  if (name.empty()) throw PreconditionError("layer names must be non-empty");
  if (index_of(name)) throw PreconditionError("duplicate layer name '" + name + "'");
  layers_.push_back({std::move(name), std::move(layer)});
  return *this;
}

std::optional<std::size_t> Model::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Model::require_index(std::string_view name) const {
  auto i = index_of(name);
  if (!i) throw PreconditionError("model has no layer named '" + std::string(name) + "'");
  return *i;
}

std::vector<std::size_t> Model::bn_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (std::holds_alternative<BatchNormLayer>(layers_[i].layer)) out.push_back(i);
  return out;
}

std::vector<std::string> Model::bn_names() const {
  std::vector<std::string> out;
  for (auto i : bn_indices()) out.push_back(layers_[i].name);
  return out;
}

BatchNormLayer& Model::bn(std::string_view name) {
  auto* b = std::get_if<BatchNormLayer>(&layers_[require_index(name)].layer);
  if (!b) throw PreconditionError("layer '" + std::string(name) + "' is not a batchnorm layer");
  return *b;
}

const BatchNormLayer& Model::bn(std::string_view name) const { return const_cast<Model*>(this)->bn(name); }

void Model::set_mode(BnMode mode) {
  for (auto& nl : layers_)
    if (auto* b = std::get_if<BatchNormLayer>(&nl.layer)) b->mode = mode;
}

Shape Model::output_shape() const {
  Shape s = input_shape_;
  for (const auto& nl : layers_) {
    const std::string where = " at layer '" + nl.name + "' (input " + shape_to_string(s) + ")";
    if (const auto* l = std::get_if<LinearLayer>(&nl.layer)) {
      if (s.size() != 1 || s[0] != l->in_features()) throw DimensionError("linear shape mismatch" + where);
      if (l->bias.size() != l->out_features()) throw DimensionError("linear bias length mismatch" + where);
      s = {l->out_features()};
    } else if (const auto* c = std::get_if<Conv2dLayer>(&nl.layer)) {
      if (c->kernel.rank() != 4 || s.size() != 3 || s[0] != c->kernel.dim(1)) {
        throw DimensionError("conv2d shape mismatch" + where);
      }
      if (c->kernel.dim(2) > s[1] || c->kernel.dim(3) > s[2]) throw DimensionError("conv2d kernel too large" + where);
      if (c->stride == 0 || c->bias.size() != c->kernel.dim(0)) throw DimensionError("conv2d bias/stride invalid" + where);
      s = {c->kernel.dim(0), (s[1] - c->kernel.dim(2)) / c->stride + 1, (s[2] - c->kernel.dim(3)) / c->stride + 1};
    } else if (std::holds_alternative<FlattenLayer>(nl.layer)) {
      s = {shape_numel(s)};
    } else if (const auto* b = std::get_if<BatchNormLayer>(&nl.layer)) {
      if ((s.size() != 1 && s.size() != 3) || s[0] != b->features()) throw DimensionError("batchnorm width mismatch" + where);
      const std::size_t p = b->features();
      if (b->beta.size() != p || b->running_mean.size() != p || b->running_var.size() != p) {
        throw DimensionError("batchnorm parameter lengths differ" + where);
      }
    }
  }
  return s;
}

Tensor Model::forward(const Tensor& x, std::vector<LayerCache>* caches) {
  if (caches) caches->assign(layers_.size(), std::monostate{});
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layer_forward(layers_[i].layer, h, caches ? &(*caches)[i] : nullptr);
  }
  return h;
}

std::vector<LayerGrads> Model::backward(const Tensor& grad_out, const std::vector<LayerCache>& caches) const {
  if (caches.size() != layers_.size()) throw ContractError("backward needs one cache per layer");
  std::vector<LayerGrads> grads(layers_.size());
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    grads[i] = layer_backward(layers_[i].layer, g, caches[i]);
    g = grads[i].input;
  }
  return grads;
}

Tensor Model::forward_eval(const Tensor& x, std::size_t begin, std::size_t end) const {
  if (begin > end || end > layers_.size()) throw PreconditionError("forward_eval: invalid layer range");
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) h = layer_forward_eval(layers_[i].layer, h);
  return h;
}

std::string Model::active_domain() const {
  for (auto i : bn_indices()) {
    const auto& b = std::get<BatchNormLayer>(layers_[i].layer);
    if (b.domain_stats) return b.domain_id;
  }
  return {};
}

void Model::clear_domain() {
  for (auto& nl : layers_)
    if (auto* b = std::get_if<BatchNormLayer>(&nl.layer)) {
      b->domain_stats.reset();
      b->domain_id.clear();
    }
}

Model make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Model m({input_dim});
  std::size_t width = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const std::string k = std::to_string(i + 1);
    m.add("fc" + k, LinearLayer::create(width, hidden[i], rng));
    m.add("bn" + k, BatchNormLayer::create(hidden[i]));
    m.add("relu" + k, ReluLayer{});
    width = hidden[i];
  }
  m.add("fc_out", LinearLayer::create(width, classes, rng));
  m.output_shape();
  return m;
}

Model make_convnet(std::size_t channels, std::size_t image_size, std::size_t classes, std::uint64_t seed,
                   std::size_t width) {
  if (image_size < 8) throw PreconditionError("make_convnet needs images of at least 8x8");
  std::mt19937_64 rng(seed);
  Model m({channels, image_size, image_size});
  m.add("conv1", Conv2dLayer::create(channels, width, 3, 1, rng));
  m.add("bn1", BatchNormLayer::create(width));
  m.add("relu1", ReluLayer{});
  m.add("conv2", Conv2dLayer::create(width, 2 * width, 3, 2, rng));
  m.add("bn2", BatchNormLayer::create(2 * width));
  m.add("relu2", ReluLayer{});
  m.add("flatten", FlattenLayer{});
  const std::size_t s1 = image_size - 2, s2 = (s1 - 3) / 2 + 1;
  m.add("fc1", LinearLayer::create(2 * width * s2 * s2, 32, rng));
  m.add("bn3", BatchNormLayer::create(32));
  m.add("relu3", ReluLayer{});
  m.add("fc_out", LinearLayer::create(32, classes, rng));
  m.output_shape();
  return m;
}

}  // namespace adabn
