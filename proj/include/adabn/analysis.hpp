#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adabn/adabn.hpp"
#include "adabn/dataset.hpp"
#include "adabn/model.hpp"

namespace adabn {

// Symmetric KL divergence between N(mu_i, var_i) and N(mu_j, var_j):
//   KL(i||j) = log(s_j / s_i) + (s_i^2 + (mu_i - mu_j)^2) / (2 s_j^2) - 1/2
//   D = KL(i||j) + KL(j||i)
double symmetric_kl(double mu_i, double var_i, double mu_j, double var_j);

enum class DivergenceCondition { kBeforeAdapt, kAfterAdapt };
std::string_view condition_name(DivergenceCondition c);

struct DivergenceReport {
  std::string layer_name;
  DivergenceCondition condition = DivergenceCondition::kBeforeAdapt;
  std::vector<std::size_t> features;  // indices of the features kept
  std::vector<double> divergences;    // one per kept feature
  std::size_t excluded_features = 0;  // variance below kMinFeatureVariance on either side
  double mean = 0.0;
};

inline constexpr double kMinFeatureVariance = 1e-12;

// First and last BN layer of the model.
std::vector<std::string> default_probe_layers(const Model& model);

// Fits per-feature Gaussians to the outputs of each named layer (channels are
// the features of 4-D outputs) on source and target data and reports the
// per-feature symmetric KL. The "before" condition runs both domains through
// the model with its running statistics. When `bank` is given, an "after"
// report per layer follows, with target data run through the model adapted
// to `target_domain` (defaults to tgt.domain_id).
std::vector<DivergenceReport> feature_divergence_profile(const Model& model, const DomainDataset& src,
                                                         const DomainDataset& tgt,
                                                         const std::vector<std::string>& layer_names,
                                                         const BnStatsBank* bank = nullptr,
                                                         std::string_view target_domain = {});

// Mean and variance of every feature of one layer for one mini-batch,
// concatenated as [means..., variances...].
struct BnStatVector {
  std::string layer_name;
  std::string domain_id;
  std::size_t batch_index = 0;
  std::vector<double> values;
};

struct PilotResult {
  std::map<std::string, double> accuracy;  // held-out probe accuracy per layer
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  std::vector<BnStatVector> vectors;
};

inline constexpr std::size_t kMinPilotBatches = 20;

// Mini-batch BN statistics (of each BN layer's input; outputs for other layer
// kinds) under the model's running statistics, classified by domain with a
// linear softmax probe trained by SGD on a seeded 80/20 split.
PilotResult pilot_separability(const Model& model, std::span<const DomainDataset> domains,
                               const std::vector<std::string>& layer_names, std::size_t batch_size,
                               std::uint64_t probe_seed);

struct SensitivityRow {
  std::size_t batch_count = 0;  // 0 = the whole target set
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;     // sample standard deviation over trials
  std::size_t trials = 0;
  bool with_replacement = false;  // requested more samples than the target holds
};

struct SensitivityTable {
  double baseline_accuracy = 0.0;  // unadapted model on the target
  std::vector<SensitivityRow> rows;
};

// For every count n, `trials` times: draw n mini-batches of the target,
// estimate statistics from them only, apply, and evaluate on the whole
// target. A count of 0 adapts on the full target set in its stored order.
SensitivityTable sensitivity_sweep(const Model& model, const DomainDataset& target,
                                   const std::vector<std::size_t>& batch_counts, std::size_t batch_size,
                                   std::size_t trials, std::uint64_t seed, const EstimationOptions& options = {});

// Spearman rank correlation (average ranks for ties).
double spearman_rho(std::span<const double> x, std::span<const double> y);

std::string divergence_to_csv(const std::vector<DivergenceReport>& reports);
std::string stat_vectors_to_csv(const std::vector<BnStatVector>& vectors);
std::string sensitivity_to_csv(const SensitivityTable& table);

}  // namespace adabn
