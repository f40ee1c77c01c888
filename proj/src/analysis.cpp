#include "adabn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "adabn/errors.hpp"
#include "adabn/trainer.hpp"

namespace adabn {

double symmetric_kl(double mu_i, double var_i, double mu_j, double var_j) {
  if (!(var_i > 0.0) || !(var_j > 0.0)) throw DomainError("symmetric_kl needs positive variances");
  const double d2 = (mu_i - mu_j) * (mu_i - mu_j);
  const double kl_ij = 0.5 * std::log(var_j / var_i) + (var_i + d2) / (2.0 * var_j) - 0.5;
  const double kl_ji = 0.5 * std::log(var_i / var_j) + (var_j + d2) / (2.0 * var_i) - 0.5;
  return kl_ij + kl_ji;
}

std::string_view condition_name(DivergenceCondition c) {
  return c == DivergenceCondition::kBeforeAdapt ? "before_adapt" : "after_adapt";
}

std::vector<std::string> default_probe_layers(const Model& model) {
  const auto names = model.bn_names();
  if (names.empty()) throw PreconditionError("model has no batchnorm layer to probe");
  if (names.size() == 1) return {names.front()};
  return {names.front(), names.back()};
}

namespace {

constexpr std::size_t kStreamBatch = 256;

// Streams the dataset through layers [0, end) of `model` and accumulates
// per-feature moments of the result.
BnStats layer_moments(const Model& model, const DomainDataset& data, std::size_t end) {
  std::optional<WelfordAccumulator> acc;
  for (std::size_t b = 0; b < data.size(); b += kStreamBatch) {
    const Tensor h = model.forward_eval(data.inputs.slice_rows(b, std::min(data.size(), b + kStreamBatch)), 0, end);
    if (!acc) acc.emplace(feature_count(h));
    acc->update(h);
  }
  return acc->finalize();
}

DivergenceReport compare(const std::string& layer, DivergenceCondition cond, const BnStats& a, const BnStats& b) {
  DivergenceReport r;
  r.layer_name = layer;
  r.condition = cond;
  for (std::size_t j = 0; j < a.mean.size(); ++j) {
    if (a.variance[j] < kMinFeatureVariance || b.variance[j] < kMinFeatureVariance) {
      ++r.excluded_features;
      continue;
    }
    r.features.push_back(j);
    r.divergences.push_back(symmetric_kl(a.mean[j], a.variance[j], b.mean[j], b.variance[j]));
  }
  if (r.divergences.empty()) {
    throw DomainError("layer '" + layer + "' has no feature with nonzero variance on both domains");
  }
  r.mean = std::accumulate(r.divergences.begin(), r.divergences.end(), 0.0) / static_cast<double>(r.divergences.size());
  return r;
}

}  // namespace

std::vector<DivergenceReport> feature_divergence_profile(const Model& model, const DomainDataset& src,
                                                         const DomainDataset& tgt,
                                                         const std::vector<std::string>& layer_names,
                                                         const BnStatsBank* bank, std::string_view target_domain) {
  src.validate();
  tgt.validate();
  Model source_model = model;
  source_model.clear_domain();
  std::optional<Model> adapted;
  if (bank) adapted = apply_domain(source_model, *bank, target_domain.empty() ? tgt.domain_id : target_domain);

  std::vector<DivergenceReport> out;
  for (const auto& name : layer_names) {
    const std::size_t end = model.require_index(name) + 1;
    const BnStats s = layer_moments(source_model, src, end);
    out.push_back(compare(name, DivergenceCondition::kBeforeAdapt, s, layer_moments(source_model, tgt, end)));
    if (adapted) out.push_back(compare(name, DivergenceCondition::kAfterAdapt, s, layer_moments(*adapted, tgt, end)));
  }
  return out;
}

PilotResult pilot_separability(const Model& model, std::span<const DomainDataset> domains,
                               const std::vector<std::string>& layer_names, std::size_t batch_size,
                               std::uint64_t probe_seed) {
  if (domains.size() < 2) throw PreconditionError("pilot_separability needs at least two domains");
  if (batch_size < 2) throw PreconditionError("pilot_separability needs mini-batches of at least 2 samples");
  if (layer_names.empty()) throw PreconditionError("pilot_separability needs at least one layer");
  Model source_model = model;
  source_model.clear_domain();

  // Where each layer's statistics are read: a BN layer's input, any other layer's output.
  std::vector<std::size_t> ends;
  for (const auto& name : layer_names) {
    const std::size_t i = source_model.require_index(name);
    ends.push_back(std::holds_alternative<BatchNormLayer>(source_model.layers()[i].layer) ? i : i + 1);
  }

  std::mt19937_64 rng(probe_seed);
  PilotResult result;
  std::vector<int> batch_domain;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    const auto& data = domains[d];
    const std::size_t batches = data.size() / batch_size;
    if (batches < kMinPilotBatches) {
      throw PreconditionError("pilot_separability: domain '" + data.domain_id + "' yields " + std::to_string(batches) +
                              " mini-batches of " + std::to_string(batch_size) + ", need at least " +
                              std::to_string(kMinPilotBatches));
    }
    std::vector<std::size_t> perm(data.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const std::span<const std::size_t> rows(perm.data() + b * batch_size, batch_size);
      const Tensor x = data.inputs.gather_rows(rows);
      for (std::size_t l = 0; l < layer_names.size(); ++l) {
        const Tensor h = source_model.forward_eval(x, 0, ends[l]);
        const Moments m = reduce_moments(h, feature_reduction_axes(h));
        BnStatVector v{layer_names[l], data.domain_id, b, {}};
        v.values.assign(m.mean.data().begin(), m.mean.data().end());
        v.values.insert(v.values.end(), m.variance.data().begin(), m.variance.data().end());
        result.vectors.push_back(std::move(v));
      }
      batch_domain.push_back(static_cast<int>(d));
    }
  }

  const std::size_t n = batch_domain.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t n_train = (n * 4) / 5;
  std::vector<std::size_t> train_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test_rows(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  result.train_count = train_rows.size();
  result.test_count = test_rows.size();

  for (std::size_t l = 0; l < layer_names.size(); ++l) {
    const std::size_t width = result.vectors[l].values.size();
    Tensor features({n, width});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& v = result.vectors[i * layer_names.size() + l].values;
      std::copy(v.begin(), v.end(), features.data().begin() + static_cast<std::ptrdiff_t>(i * width));
    }
    // z-score with training-split statistics
    const Moments m = reduce_moments(features.gather_rows(train_rows), {0});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double sd = std::sqrt(m.variance[j]);
        features.at(i, j) = sd > 1e-12 ? (features.at(i, j) - m.mean[j]) / sd : 0.0;
      }

    DomainDataset all{"pilot", features, batch_domain, domains.size()};
    std::mt19937_64 init_rng(probe_seed + l);
    Model probe({width});
    probe.add("probe", LinearLayer::create(width, domains.size(), init_rng));
    TrainConfig cfg;
    cfg.base_lr = 0.1;
    cfg.lr_drop_every = 1000;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.validation_fraction = 0.0;
    cfg.seed = probe_seed + l;
    const Model trained = train(std::move(probe), all.subset(train_rows), cfg).model;
    result.accuracy[layer_names[l]] = evaluate(trained, all.subset(test_rows)).accuracy;
  }
  return result;
}

SensitivityTable sensitivity_sweep(const Model& model, const DomainDataset& target,
                                   const std::vector<std::size_t>& batch_counts, std::size_t batch_size,
                                   std::size_t trials, std::uint64_t seed, const EstimationOptions& options) {
  if (trials == 0) throw PreconditionError("sensitivity_sweep needs at least one trial");
  if (batch_size == 0) throw PreconditionError("sensitivity_sweep needs a positive batch size");
  if (!target.labeled()) throw PreconditionError("sensitivity_sweep evaluates on the target and needs its labels");
  Model source_model = model;
  source_model.clear_domain();
  EstimationOptions est = options;
  est.batch_size = batch_size;

  SensitivityTable table;
  table.baseline_accuracy = evaluate(source_model, target).accuracy;
  const std::string domain = target.domain_id;

  for (std::size_t count : batch_counts) {
    SensitivityRow row;
    row.batch_count = count;
    std::vector<double> acc;
    if (count == 0) {
      // Deterministic: one evaluation stands for every trial.
      acc.push_back(evaluate(adapt(source_model, target, domain, est).model, target).accuracy);
    } else {
      const std::size_t want = count * batch_size;
      row.with_replacement = want > target.size();
      for (std::size_t t = 0; t < trials; ++t) {
        std::seed_seq sq{seed, static_cast<std::uint64_t>(count), static_cast<std::uint64_t>(t)};
        std::mt19937_64 rng(sq);
        std::vector<std::size_t> rows;
        if (row.with_replacement) {
          std::uniform_int_distribution<std::size_t> pick(0, target.size() - 1);
          for (std::size_t i = 0; i < want; ++i) rows.push_back(pick(rng));
        } else {
          rows.resize(target.size());
          std::iota(rows.begin(), rows.end(), 0);
          std::shuffle(rows.begin(), rows.end(), rng);
          rows.resize(want);
        }
        const DomainDataset sample = target.subset(rows).without_labels();
        acc.push_back(evaluate(adapt(source_model, sample, domain, est).model, target).accuracy);
      }
    }
    row.trials = acc.size();
    row.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
    if (acc.size() > 1) {
      double ss = 0.0;
      for (double a : acc) ss += (a - row.mean_accuracy) * (a - row.mean_accuracy);
      row.std_accuracy = std::sqrt(ss / static_cast<double>(acc.size() - 1));
    }
    table.rows.push_back(row);
  }
  return table;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw PreconditionError("spearman_rho needs two equal-length series (n >= 2)");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::string divergence_to_csv(const std::vector<DivergenceReport>& reports) {
  std::ostringstream out;
  out.precision(12);
  out << "layer,condition,feature,divergence\n";
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.divergences.size(); ++i)
      out << r.layer_name << ',' << condition_name(r.condition) << ',' << r.features[i] << ',' << r.divergences[i]
          << '\n';
  return out.str();
}

std::string stat_vectors_to_csv(const std::vector<BnStatVector>& vectors) {
  std::ostringstream out;
  out.precision(12);
  out << "layer,domain,batch,values...\n";
  for (const auto& v : vectors) {
    out << v.layer_name << ',' << v.domain_id << ',' << v.batch_index;
    for (double x : v.values) out << ',' << x;
    out << '\n';
  }
  return out.str();
}

std::string sensitivity_to_csv(const SensitivityTable& table) {
  std::ostringstream out;
  out.precision(10);
  out << "batches,mean_accuracy,std_accuracy,trials,with_replacement\n";
  out << "baseline," << table.baseline_accuracy << ",0,1,0\n";
  for (const auto& r : table.rows) {
    out << (r.batch_count == 0 ? std::string("full") : std::to_string(r.batch_count)) << ',' << r.mean_accuracy << ','
        << r.std_accuracy << ',' << r.trials << ',' << (r.with_replacement ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace adabn
