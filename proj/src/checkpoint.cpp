#include "adabn/checkpoint.hpp"

#include <bit>
#include <sstream>

#include "adabn/binary_io.hpp"
#include "adabn/errors.hpp"

namespace adabn {

namespace {

constexpr std::string_view kMagic = "ADBNCKPT";

enum class LayerTag : std::uint8_t { kLinear = 0, kConv2d = 1, kRelu = 2, kFlatten = 3, kBatchNorm = 4 };

void encode_layer(io::ByteWriter& w, const NamedLayer& nl) {
  if (const auto* l = std::get_if<LinearLayer>(&nl.layer)) {
    w.u8(static_cast<std::uint8_t>(LayerTag::kLinear));
    w.str(nl.name);
    w.tensor(l->weight);
    w.tensor(l->bias);
  } else if (const auto* c = std::get_if<Conv2dLayer>(&nl.layer)) {
    w.u8(static_cast<std::uint8_t>(LayerTag::kConv2d));
    w.str(nl.name);
    w.u64(c->stride);
    w.tensor(c->kernel);
    w.tensor(c->bias);
  } else if (std::holds_alternative<ReluLayer>(nl.layer)) {
    w.u8(static_cast<std::uint8_t>(LayerTag::kRelu));
    w.str(nl.name);
  } else if (std::holds_alternative<FlattenLayer>(nl.layer)) {
    w.u8(static_cast<std::uint8_t>(LayerTag::kFlatten));
    w.str(nl.name);
  } else {
    const auto& b = std::get<BatchNormLayer>(nl.layer);
    w.u8(static_cast<std::uint8_t>(LayerTag::kBatchNorm));
    w.str(nl.name);
    w.f64(b.momentum);
    w.f64(b.epsilon);
    w.tensor(b.gamma);
    w.tensor(b.beta);
    w.tensor(b.running_mean);
    w.tensor(b.running_var);
  }
}

NamedLayer decode_layer(io::ByteReader& r) {
  const std::uint8_t tag = r.u8("layer kind");
  NamedLayer nl;
  nl.name = r.str("layer name");
  switch (static_cast<LayerTag>(tag)) {
    case LayerTag::kLinear: {
      LinearLayer l;
      l.weight = r.tensor("linear weight");
      l.bias = r.tensor("linear bias");
      nl.layer = std::move(l);
      break;
    }
    case LayerTag::kConv2d: {
      Conv2dLayer c;
      c.stride = static_cast<std::size_t>(r.u64("conv stride"));
      c.kernel = r.tensor("conv kernel");
      c.bias = r.tensor("conv bias");
      nl.layer = std::move(c);
      break;
    }
    case LayerTag::kRelu:
      nl.layer = ReluLayer{};
      break;
    case LayerTag::kFlatten:
      nl.layer = FlattenLayer{};
      break;
    case LayerTag::kBatchNorm: {
      BatchNormLayer b;
      b.momentum = r.f64("batchnorm momentum");
      b.epsilon = r.f64("batchnorm epsilon");
      b.gamma = r.tensor("batchnorm gamma");
      b.beta = r.tensor("batchnorm beta");
      b.running_mean = r.tensor("batchnorm running mean");
      b.running_var = r.tensor("batchnorm running variance");
      b.mode = BnMode::kEval;
      nl.layer = std::move(b);
      break;
    }
    default:
      throw FormatError("unknown layer kind tag " + std::to_string(tag) + " for layer '" + nl.name + "'");
  }
  return nl;
}

void validate_model(const Model& model) {
  try {
    model.output_shape();
  } catch (const DimensionError& e) {
    throw ShapeMismatchError(std::string("checkpoint architecture is inconsistent: ") + e.what());
  }
  for (const auto& nl : model.layers()) {
    if (const auto* b = std::get_if<BatchNormLayer>(&nl.layer)) {
      if (!(b->epsilon > 0.0) || !(b->momentum > 0.0 && b->momentum <= 1.0)) {
        throw ValidationError("batchnorm '" + nl.name + "' has invalid epsilon/momentum");
      }
      for (double v : b->running_var.data())
        if (!(v >= 0.0)) throw ValidationError("batchnorm '" + nl.name + "' has a negative running variance");
    }
    for (const Tensor* t : parameters(nl.layer))
      if (!t->all_finite()) throw ValidationError("layer '" + nl.name + "' has non-finite parameters");
  }
}

}  // namespace

Checkpoint make_checkpoint(const Model& model, BnStatsBank bank, Provenance provenance) {
  Checkpoint c{model, std::move(bank), model.active_domain(), std::move(provenance)};
  c.model.clear_domain();
  if (!c.active_domain.empty() && !c.bank.has_domain(c.active_domain)) {
    // Installed statistics that never made it into the bank are saved under the active domain.
    for (auto i : model.bn_indices()) {
      const auto& bn = std::get<BatchNormLayer>(model.layers()[i].layer);
      c.bank.put(model.layers()[i].name, c.active_domain, *bn.domain_stats);
    }
  }
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointFormatVersion);
  w.u64(ckpt.provenance.seed);
  w.str(ckpt.provenance.config_hash);
  const Shape& in = ckpt.model.input_shape();
  w.u64(in.size());
  for (auto e : in) w.u64(e);
  w.u64(ckpt.model.layers().size());
  for (const auto& nl : ckpt.model.layers()) encode_layer(w, nl);
  w.u64(ckpt.bank.size());
  for (const auto& [key, stats] : ckpt.bank.entries()) {
    w.str(key.first);
    w.str(key.second);
    w.u64(stats.count);
    w.tensor(stats.mean);
    w.tensor(stats.variance);
  }
  w.str(ckpt.active_domain);
  return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < kMagic.size() || r.raw(kMagic.size(), "magic") != kMagic) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointFormatVersion) {
    throw UnsupportedVersionError("checkpoint format version " + std::to_string(version) +
                                  " is not supported by this reader (version " +
                                  std::to_string(kCheckpointFormatVersion) + ")");
  }
  Checkpoint c;
  c.provenance.seed = r.u64("seed");
  c.provenance.config_hash = r.str("config hash");
  const std::uint64_t rank = r.u64("input rank");
  if (rank == 0 || rank > 8) throw ValidationError("input rank " + std::to_string(rank) + " outside [1, 8]");
  Shape in;
  for (std::uint64_t i = 0; i < rank; ++i) in.push_back(static_cast<std::size_t>(r.u64("input extent")));
  try {
    c.model = Model(in);
  } catch (const DimensionError& e) {
    throw ValidationError(e.what());
  }
  const std::uint64_t layers = r.u64("layer count");
  for (std::uint64_t i = 0; i < layers; ++i) {
    NamedLayer nl = decode_layer(r);
    if (c.model.index_of(nl.name)) throw ValidationError("duplicate layer name '" + nl.name + "'");
    c.model.add(std::move(nl.name), std::move(nl.layer));
  }
  validate_model(c.model);

  const std::uint64_t entries = r.u64("bank entry count");
  for (std::uint64_t i = 0; i < entries; ++i) {
    std::string layer = r.str("bank layer name");
    std::string domain = r.str("bank domain id");
    BnStats s;
    s.count = r.u64("bank sample count");
    s.mean = r.tensor("bank mean");
    s.variance = r.tensor("bank variance");
    try {
      c.bank.put(std::move(layer), std::move(domain), std::move(s));
    } catch (const DomainError& e) {
      throw ValidationError(e.what());
    } catch (const DimensionError& e) {
      throw ShapeMismatchError(e.what());
    }
  }
  try {
    c.bank.validate_against(c.model);
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  } catch (const DimensionError& e) {
    throw ShapeMismatchError(e.what());
  }
  c.active_domain = r.str("active domain");
  if (r.remaining() != 0) throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  if (!c.active_domain.empty()) {
    try {
      c.model = apply_domain(c.model, c.bank, c.active_domain);
    } catch (const IncompleteBankError& e) {
      throw ValidationError(std::string("active domain cannot be applied: ") + e.what());
    }
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path, bool overwrite) {
  io::write_file(path, encode_checkpoint(ckpt), overwrite);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const TruncationError& e) {
    throw TruncationError("'" + path.string() + "': " + e.what());
  }
}

std::string describe_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream out;
  out << "format: ADBNCKPT v" << kCheckpointFormatVersion << '\n';
  out << "seed: " << ckpt.provenance.seed << '\n';
  out << "config_hash: " << (ckpt.provenance.config_hash.empty() ? "-" : ckpt.provenance.config_hash) << '\n';
  out << "input_shape: " << shape_to_string(ckpt.model.input_shape()) << '\n';
  out << "layers: " << ckpt.model.layers().size() << '\n';
  std::size_t total = 0;
  for (const auto& nl : ckpt.model.layers()) {
    out << "  " << nl.name << " (" << layer_kind_name(nl.layer) << ")";
    for (const Tensor* t : parameters(nl.layer)) {
      out << ' ' << shape_to_string(t->shape());
      total += t->size();
    }
    if (const auto* b = std::get_if<BatchNormLayer>(&nl.layer)) {
      out << " eps=" << b->epsilon << " momentum=" << b->momentum;
    } else if (const auto* c = std::get_if<Conv2dLayer>(&nl.layer)) {
      out << " stride=" << c->stride;
    }
    out << '\n';
  }
  out << "parameters: " << total << '\n';
  out << "bank_entries: " << ckpt.bank.size() << '\n';
  for (const auto& [key, stats] : ckpt.bank.entries()) {
    out << "  (" << key.first << ", " << key.second << ") width=" << stats.mean.size() << " count=" << stats.count
        << '\n';
  }
  out << "active_domain: " << (ckpt.active_domain.empty() ? "-" : ckpt.active_domain) << '\n';
  return out.str();
}

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

bool bank_bit_equal(const BnStatsBank& a, const BnStatsBank& b) {
  if (a.size() != b.size()) return false;
  auto ia = a.entries().begin();
  auto ib = b.entries().begin();
  for (; ia != a.entries().end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.count != ib->second.count) return false;
    if (!bit_equal(ia->second.mean, ib->second.mean) || !bit_equal(ia->second.variance, ib->second.variance)) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::vector<std::string> diff_checkpoints(const Checkpoint& a, const Checkpoint& b) {
  std::vector<std::string> out;
  const auto& la = a.model.layers();
  const auto& lb = b.model.layers();
  bool arch = a.model.input_shape() != b.model.input_shape() || la.size() != lb.size();
  bool params = false, running = false;
  for (std::size_t i = 0; !arch && i < la.size(); ++i) {
    if (la[i].name != lb[i].name || la[i].layer.index() != lb[i].layer.index()) {
      arch = true;
      break;
    }
    const auto pa = parameters(la[i].layer);
    const auto pb = parameters(lb[i].layer);
    for (std::size_t p = 0; p < pa.size(); ++p) {
      if (pa[p]->shape() != pb[p]->shape()) arch = true;
      else if (!bit_equal(*pa[p], *pb[p])) params = true;
    }
    if (const auto* ba = std::get_if<BatchNormLayer>(&la[i].layer)) {
      const auto& bb = std::get<BatchNormLayer>(lb[i].layer);
      if (ba->epsilon != bb.epsilon || ba->momentum != bb.momentum) arch = true;
      if (!bit_equal(ba->running_mean, bb.running_mean) || !bit_equal(ba->running_var, bb.running_var)) running = true;
    }
    if (const auto* ca = std::get_if<Conv2dLayer>(&la[i].layer)) {
      if (ca->stride != std::get<Conv2dLayer>(lb[i].layer).stride) arch = true;
    }
  }
  if (arch) out.push_back("architecture");
  if (params) out.push_back("parameters");
  if (running) out.push_back("running_stats");
  if (!bank_bit_equal(a.bank, b.bank)) out.push_back("bank");
  if (a.active_domain != b.active_domain) out.push_back("active_domain");
  if (!(a.provenance == b.provenance)) out.push_back("provenance");
  return out;
}

}  // namespace adabn
