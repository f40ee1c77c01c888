#include "adabn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adabn/adabn.hpp"
#include "adabn/errors.hpp"

namespace adabn {

void TrainConfig::validate() const {
  if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be nonnegative");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) throw ConfigError("lr_drop_factor must lie in (0, 1]");
  if (lr_drop_every == 0) throw ConfigError("lr_drop_every must be positive");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batchnorm needs batch statistics)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  for (const auto& [name, s] : per_layer_lr_scale)
    if (!(s > 0.0)) throw ConfigError("per_layer_lr_scale for '" + name + "' must be positive");
}

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.base_lr * std::pow(cfg.lr_drop_factor, static_cast<double>(epoch / cfg.lr_drop_every));
}

std::string TrainLog::to_tsv() const {
  std::ostringstream out;
  out.precision(10);
  out << "epoch\tlr\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy\n";
  out << "init\t0\t\t\t" << initial_val_loss << '\t' << initial_val_accuracy << '\n';
  for (const auto& e : epochs) {
    out << e.epoch << '\t' << e.lr << '\t' << e.train_loss << '\t' << e.train_accuracy << '\t' << e.val_loss << '\t'
        << e.val_accuracy << '\n';
  }
  return out.str();
}

std::vector<MiniBatch> same_domain_batches(const std::vector<std::vector<std::size_t>>& pools, std::size_t batch_size,
                                           std::mt19937_64& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::vector<MiniBatch>> per_domain(pools.size());
  for (std::size_t d = 0; d < pools.size(); ++d) {
    std::vector<std::size_t> rows = pools[d];
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t b = 0; b < rows.size(); b += batch_size) {
      const std::size_t e = std::min(rows.size(), b + batch_size);
      if (e - b == 1 && !per_domain[d].empty()) {
        per_domain[d].back().rows.push_back(rows[b]);
      } else {
        per_domain[d].push_back({d, std::vector<std::size_t>(rows.begin() + static_cast<std::ptrdiff_t>(b),
                                                             rows.begin() + static_cast<std::ptrdiff_t>(e))});
      }
    }
  }
  std::vector<MiniBatch> out;
  for (std::size_t round = 0;; ++round) {
    bool any = false;
    for (auto& batches : per_domain) {
      if (round < batches.size()) {
        out.push_back(std::move(batches[round]));
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

void sgd_step(Model& model, const std::vector<LayerGrads>& grads, double lr, const TrainConfig& cfg) {
  if (grads.size() != model.layers().size()) throw ContractError("sgd_step: one gradient entry per layer expected");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& nl = model.layers()[i];
    if (cfg.frozen_layers.count(nl.name)) continue;
    double scale = 1.0;
    if (auto it = cfg.per_layer_lr_scale.find(nl.name); it != cfg.per_layer_lr_scale.end()) scale = it->second;
    const double step = lr * scale;
    auto params = parameters(nl.layer);
    if (params.size() != grads[i].params.size()) throw ContractError("sgd_step: gradient/parameter count mismatch");
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto dst = params[p]->data();
      auto g = grads[i].params[p].data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] -= step * g[k];
    }
  }
}

namespace {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

Split split_rows(std::size_t n, double fraction, std::mt19937_64& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  Split s;
  s.validation.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(s.validation.begin(), s.validation.end());
  if (s.validation.empty()) s.validation = s.train;
  return s;
}

struct Pooled {
  double loss = 0.0;
  double accuracy = 0.0;
};

Pooled pooled_metrics(const Model& model, const std::vector<DomainDataset>& parts) {
  double loss = 0.0, correct = 0.0, n = 0.0;
  for (const auto& p : parts) {
    const Metrics m = evaluate(model, p);
    loss += m.mean_loss * static_cast<double>(m.count);
    correct += m.accuracy * static_cast<double>(m.count);
    n += static_cast<double>(m.count);
  }
  return {loss / n, correct / n};
}

void check_layer_names(const Model& model, const TrainConfig& cfg) {
  for (const auto& name : cfg.frozen_layers)
    if (!model.index_of(name)) throw ConfigError("frozen layer '" + name + "' does not exist in the model");
  for (const auto& [name, _] : cfg.per_layer_lr_scale)
    if (!model.index_of(name)) throw ConfigError("per_layer_lr_scale names unknown layer '" + name + "'");
}

}  // namespace

TrainResult train(Model model, std::span<const DomainDataset> data, const TrainConfig& cfg) {
  cfg.validate();
  check_layer_names(model, cfg);
  if (data.empty()) throw PreconditionError("train: no datasets given");
  for (const auto& d : data) {
    d.validate();
    if (!d.labeled()) throw PreconditionError("train: dataset '" + d.domain_id + "' is unlabeled");
    if (d.sample_shape() != model.input_shape()) {
      throw DimensionError("train: dataset '" + d.domain_id + "' samples are " + shape_to_string(d.sample_shape()) +
                           ", model expects " + shape_to_string(model.input_shape()));
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<std::size_t>> pools;
  std::vector<DomainDataset> validation;
  for (const auto& d : data) {
    Split s = split_rows(d.size(), cfg.validation_fraction, rng);
    validation.push_back(d.subset(s.validation));
    pools.push_back(std::move(s.train));
  }

  TrainResult result;
  model.set_mode(BnMode::kEval);
  const Pooled init = pooled_metrics(model, validation);
  result.log.initial_val_loss = init.loss;
  result.log.initial_val_accuracy = init.accuracy;

  std::vector<LayerCache> caches;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    model.set_mode(BnMode::kTrain);
    double loss_sum = 0.0, correct = 0.0, seen = 0.0;
    for (const auto& batch : same_domain_batches(pools, cfg.batch_size, rng)) {
      if (batch.rows.size() < 2) continue;
      const DomainDataset& d = data[batch.domain];
      const Tensor x = d.inputs.gather_rows(batch.rows);
      std::vector<int> y;
      y.reserve(batch.rows.size());
      for (auto r : batch.rows) y.push_back((*d.labels)[r]);

      const Tensor logits = model.forward(x, &caches);
      const SoftmaxCrossEntropy ce = softmax_cross_entropy(logits, y);
      sgd_step(model, model.backward(ce.grad_logits, caches), lr, cfg);

      const double nb = static_cast<double>(y.size());
      loss_sum += ce.loss * nb;
      seen += nb;
      for (std::size_t i = 0; i < y.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.dim(1); ++j)
          if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (static_cast<int>(best) == y[i]) correct += 1.0;
      }
    }
    model.set_mode(BnMode::kEval);
    const Pooled val = pooled_metrics(model, validation);
    result.log.epochs.push_back({epoch, lr, seen > 0 ? loss_sum / seen : 0.0, seen > 0 ? correct / seen : 0.0,
                                 val.loss, val.accuracy});
  }
  model.set_mode(BnMode::kEval);
  result.model = std::move(model);
  return result;
}

TrainResult train(Model model, const DomainDataset& data, const TrainConfig& cfg) {
  return train(std::move(model), std::span<const DomainDataset>(&data, 1), cfg);
}

Model fine_tune(const Model& model, const DomainDataset& labeled_target, const TrainConfig& cfg) {
  if (cfg.epochs == 0) return model;
  const std::string domain = model.active_domain();
  TrainResult r = train(model, labeled_target, cfg);
  if (domain.empty()) return std::move(r.model);
  DomainDataset unlabeled = labeled_target.without_labels();
  unlabeled.domain_id = domain;
  return adapt(r.model, unlabeled, domain).model;
}

std::vector<int> predict_labels(const Model& model, const Tensor& inputs, std::size_t batch_size) {
  std::vector<int> out;
  const std::size_t n = inputs.dim(0);
  out.reserve(n);
  for (std::size_t b = 0; b < n; b += batch_size) {
    const Tensor logits = model.predict(inputs.slice_rows(b, std::min(n, b + batch_size)));
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.dim(1); ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

Metrics evaluate(const Model& model, const DomainDataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw PreconditionError("evaluate: empty dataset");
  data.validate();
  if (!data.labeled()) throw PreconditionError("evaluate: dataset '" + data.domain_id + "' is unlabeled");
  if (batch_size == 0) throw PreconditionError("evaluate: batch_size must be positive");
  const auto& labels = *data.labels;
  const std::size_t n = data.size();
  std::vector<double> class_total(data.class_count, 0.0), class_correct(data.class_count, 0.0);
  double loss = 0.0, correct = 0.0;
  for (std::size_t b = 0; b < n; b += batch_size) {
    const std::size_t e = std::min(n, b + batch_size);
    const Tensor logits = model.predict(data.inputs.slice_rows(b, e));
    const std::span<const int> y(labels.data() + b, e - b);
    loss += softmax_cross_entropy(logits, y).loss * static_cast<double>(e - b);
    for (std::size_t i = 0; i < y.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.dim(1); ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      const auto c = static_cast<std::size_t>(y[i]);
      class_total[c] += 1.0;
      if (best == c) {
        class_correct[c] += 1.0;
        correct += 1.0;
      }
    }
  }
  Metrics m;
  m.count = n;
  m.accuracy = correct / static_cast<double>(n);
  m.mean_loss = loss / static_cast<double>(n);
  for (std::size_t c = 0; c < data.class_count; ++c) {
    if (class_total[c] > 0) {
      m.per_class_accuracy.emplace_back(class_correct[c] / class_total[c]);
    } else {
      m.per_class_accuracy.emplace_back(std::nullopt);
    }
  }
  return m;
}

}  // namespace adabn
