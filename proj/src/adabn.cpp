#include "adabn/adabn.hpp"

#include <algorithm>

#include "adabn/errors.hpp"

namespace adabn {

WelfordAccumulator::WelfordAccumulator(std::size_t width) : mean_(width, 0.0), m2_(width, 0.0) {}

void WelfordAccumulator::add(std::span<const double> sample) {
  if (sample.size() != width()) {
    throw DimensionError("welford: sample has " + std::to_string(sample.size()) + " features, accumulator has " +
                         std::to_string(width()));
  }
  ++count_;
  const double n = static_cast<double>(count_);
  for (std::size_t j = 0; j < sample.size(); ++j) {
    const double delta = sample[j] - mean_[j];
    mean_[j] += delta / n;
    m2_[j] += delta * (sample[j] - mean_[j]);
  }
}

void WelfordAccumulator::update(const Tensor& batch) {
  const std::size_t p = feature_count(batch);
  if (p != width()) {
    throw DimensionError("welford: batch " + shape_to_string(batch.shape()) + " has " + std::to_string(p) +
                         " features, accumulator has " + std::to_string(width()));
  }
  const std::size_t inner = batch.rank() == 4 ? batch.dim(2) * batch.dim(3) : 1;
  std::vector<double> sample(p);
  for (std::size_t b = 0; b < batch.dim(0); ++b)
    for (std::size_t k = 0; k < inner; ++k) {
      for (std::size_t j = 0; j < p; ++j) sample[j] = batch[(b * p + j) * inner + k];
      add(sample);
    }
}

void WelfordAccumulator::merge(const WelfordAccumulator& other) {
  if (other.width() != width()) throw DimensionError("welford: cannot merge accumulators of different width");
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_), nb = static_cast<double>(other.count_);
  const double n = na + nb;
  for (std::size_t j = 0; j < width(); ++j) {
    const double delta = other.mean_[j] - mean_[j];
    mean_[j] += delta * nb / n;
    m2_[j] += other.m2_[j] + delta * delta * na * nb / n;
  }
  count_ += other.count_;
}

Tensor WelfordAccumulator::variance() const {
  if (count_ == 0) throw PreconditionError("welford: variance of an empty accumulator");
  Tensor v({width()});
  for (std::size_t j = 0; j < width(); ++j) v[j] = std::max(0.0, m2_[j]) / static_cast<double>(count_);
  return v;
}

BnStats WelfordAccumulator::finalize() const { return {Tensor::vector(mean_), variance(), count_}; }

WelfordAccumulator welford_update(WelfordAccumulator acc, const Tensor& batch) {
  acc.update(batch);
  return acc;
}

// ---- bank ----

void BnStatsBank::put(std::string layer, std::string domain, BnStats stats) {
  if (stats.mean.size() != stats.variance.size()) throw DimensionError("bank entry mean/variance lengths differ");
  for (double v : stats.variance.data()) {
    if (!(v >= 0.0)) throw DomainError("bank entry for '" + layer + "' has a negative variance");
  }
  entries_[{std::move(layer), std::move(domain)}] = std::move(stats);
}

const BnStats* BnStatsBank::find(std::string_view layer, std::string_view domain) const {
  auto it = entries_.find({std::string(layer), std::string(domain)});
  return it == entries_.end() ? nullptr : &it->second;
}

bool BnStatsBank::has_domain(std::string_view domain) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first.second == domain; });
}

std::vector<std::string> BnStatsBank::domains() const {
  std::vector<std::string> out;
  for (const auto& [key, _] : entries_)
    if (std::find(out.begin(), out.end(), key.second) == out.end()) out.push_back(key.second);
  std::sort(out.begin(), out.end());
  return out;
}

void BnStatsBank::validate_against(const Model& model) const {
  for (const auto& [key, stats] : entries_) {
    const auto idx = model.index_of(key.first);
    const auto* bn = idx ? std::get_if<BatchNormLayer>(&model.layers()[*idx].layer) : nullptr;
    if (!bn) throw DimensionError("bank entry names '" + key.first + "', which is not a batchnorm layer of the model");
    if (stats.mean.size() != bn->features() || stats.variance.size() != bn->features()) {
      throw DimensionError("bank entry (" + key.first + ", " + key.second + ") has width " +
                           std::to_string(stats.mean.size()) + ", layer has " + std::to_string(bn->features()));
    }
    for (double v : stats.variance.data()) {
      if (!(v >= 0.0)) throw DomainError("bank entry (" + key.first + ", " + key.second + ") has a negative variance");
    }
  }
}

// ---- estimation ----

DomainEstimate estimate_domain_stats(const Model& model, const DomainDataset& data, const EstimationOptions& options) {
  if (data.size() == 0) throw PreconditionError("estimate_domain_stats: empty dataset '" + data.domain_id + "'");
  if (data.size() < 2) {
    throw DomainError("estimate_domain_stats: dataset '" + data.domain_id + "' has " + std::to_string(data.size()) +
                      " sample; at least 2 are needed for non-degenerate statistics");
  }
  if (options.batch_size == 0) throw PreconditionError("estimate_domain_stats: batch_size must be positive");
  const auto bn_idx = model.bn_indices();
  if (bn_idx.empty()) throw PreconditionError("estimate_domain_stats: model has no batchnorm layer");

  std::size_t last = bn_idx.size();
  if (options.up_to_layer) {
    auto it = std::find_if(bn_idx.begin(), bn_idx.end(),
                           [&](std::size_t i) { return model.layers()[i].name == *options.up_to_layer; });
    if (it == bn_idx.end()) {
      throw PreconditionError("estimate_domain_stats: '" + *options.up_to_layer + "' is not a batchnorm layer");
    }
    last = static_cast<std::size_t>(it - bn_idx.begin()) + 1;
  }

  DomainEstimate result;
  if (data.size() < kLowSampleWarning) {
    result.warnings.push_back("domain '" + data.domain_id + "': only " + std::to_string(data.size()) +
                              " samples used for statistics (fewer than one mini-batch of " +
                              std::to_string(kLowSampleWarning) + ")");
  }

  Model work = model;
  work.clear_domain();

  // Activations of every mini-batch at the input of layer `pos`.
  std::vector<Tensor> acts;
  for (std::size_t begin = 0; begin < data.size(); begin += options.batch_size) {
    acts.push_back(data.inputs.slice_rows(begin, std::min(data.size(), begin + options.batch_size)));
  }
  std::size_t pos = 0;
  for (std::size_t k = 0; k < last; ++k) {
    const std::size_t idx = bn_idx[k];
    for (auto& a : acts) a = work.forward_eval(a, pos, idx);
    pos = idx;
    auto& bn = std::get<BatchNormLayer>(work.layers()[idx].layer);
    WelfordAccumulator acc(bn.features());
    for (const auto& a : acts) acc.update(a);
    BnStats stats = acc.finalize();
    if (options.mode == EstimationMode::kSequential) {
      bn.domain_stats = stats;
      bn.domain_id = data.domain_id;
    }
    result.layers.emplace_back(work.layers()[idx].name, std::move(stats));
  }
  return result;
}

void store_estimate(BnStatsBank& bank, const std::string& domain_id, const DomainEstimate& estimate) {
  for (const auto& [layer, stats] : estimate.layers) bank.put(layer, domain_id, stats);
}

void store_running_stats(BnStatsBank& bank, const Model& model, const std::string& domain_id) {
  for (auto i : model.bn_indices()) {
    const auto& bn = std::get<BatchNormLayer>(model.layers()[i].layer);
    bank.put(model.layers()[i].name, domain_id, {bn.running_mean, bn.running_var, 0});
  }
}

Model apply_domain(const Model& model, const BnStatsBank& bank, std::string_view domain_id) {
  Model out = model;
  for (auto i : out.bn_indices()) {
    auto& nl = out.layers()[i];
    const BnStats* stats = bank.find(nl.name, domain_id);
    if (!stats) {
      throw IncompleteBankError("bank has no statistics for layer '" + nl.name + "' in domain '" +
                                std::string(domain_id) + "'");
    }
    auto& bn = std::get<BatchNormLayer>(nl.layer);
    if (stats->mean.size() != bn.features() || stats->variance.size() != bn.features()) {
      throw DimensionError("bank statistics for '" + nl.name + "' have width " + std::to_string(stats->mean.size()) +
                           ", layer has " + std::to_string(bn.features()));
    }
    bn.domain_stats = *stats;
    bn.domain_id = std::string(domain_id);
  }
  return out;
}

AdaptResult adapt(const Model& model, const DomainDataset& target, const std::string& domain_id,
                  const EstimationOptions& options, BnStatsBank bank) {
  DomainEstimate est = estimate_domain_stats(model, target, options);
  store_estimate(bank, domain_id, est);
  Model adapted = apply_domain(model, bank, domain_id);
  return {std::move(adapted), std::move(bank), std::move(est.warnings)};
}

}  // namespace adabn
