#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "adabn/dataset.hpp"
#include "adabn/model.hpp"

namespace adabn {

struct TrainConfig {
  double base_lr = 0.01;
  double lr_drop_factor = 0.1;
  std::size_t lr_drop_every = 40;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::set<std::string> frozen_layers;
  std::map<std::string, double> per_layer_lr_scale;
  std::uint64_t seed = 0;
  // Fraction of each domain held out (by seeded permutation) for validation.
  double validation_fraction = 0.1;

  void validate() const;
};

// base_lr * drop_factor ^ floor(epoch / drop_every)
double learning_rate_at(const TrainConfig& cfg, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainLog {
  double initial_val_loss = 0.0;
  double initial_val_accuracy = 0.0;
  std::vector<EpochRecord> epochs;

  // Tab-separated, header line
  // "epoch\tlr\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy", then one
  // line per epoch. Epoch "init" reports the validation slice before training.
  std::string to_tsv() const;
};

struct TrainResult {
  Model model;
  TrainLog log;
};

struct MiniBatch {
  std::size_t domain = 0;
  std::vector<std::size_t> rows;
};

// One epoch of mini-batches in which every batch holds rows of a single
// domain. Each pool is shuffled, cut into batches of `batch_size` (a trailing
// singleton joins the previous batch), and domains are visited round robin.
std::vector<MiniBatch> same_domain_batches(const std::vector<std::vector<std::size_t>>& pools, std::size_t batch_size,
                                           std::mt19937_64& rng);

// Plain SGD on every non-frozen layer: p -= lr * scale(layer) * grad.
void sgd_step(Model& model, const std::vector<LayerGrads>& grads, double lr, const TrainConfig& cfg);

// Mini-batch SGD with softmax cross-entropy. With several datasets, each
// mini-batch is drawn from exactly one of them.
TrainResult train(Model model, std::span<const DomainDataset> data, const TrainConfig& cfg);
TrainResult train(Model model, const DomainDataset& data, const TrainConfig& cfg);

// Supervised fine-tuning on labeled target data. If the model has a domain
// installed, that domain's statistics are re-estimated on `labeled_target`
// afterwards so that they match the updated weights.
Model fine_tune(const Model& model, const DomainDataset& labeled_target, const TrainConfig& cfg);

struct Metrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<std::optional<double>> per_class_accuracy;  // nullopt for absent classes
};

// Eval-mode metrics using the model's installed statistics (a domain when one
// is applied, running statistics otherwise).
Metrics evaluate(const Model& model, const DomainDataset& data, std::size_t batch_size = 256);

std::vector<int> predict_labels(const Model& model, const Tensor& inputs, std::size_t batch_size = 256);

}  // namespace adabn
