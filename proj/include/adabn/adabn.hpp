#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adabn/dataset.hpp"
#include "adabn/model.hpp"

namespace adabn {

// Streaming per-feature mean / second-moment estimator (Welford). Mergeable,
// so estimation can be sharded and combined (Chan et al. pairwise update).
class WelfordAccumulator {
 public:
  explicit WelfordAccumulator(std::size_t width = 0);

  // One observation with one value per feature.
  void add(std::span<const double> sample);
  // Rows of [n x p], or every (sample, pixel) position of [n x c x h x w]
  // with channels as features.
  void update(const Tensor& batch);
  void merge(const WelfordAccumulator& other);

  std::size_t width() const { return mean_.size(); }
  std::uint64_t count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& m2() const { return m2_; }

  // Population variance m2 / count. Requires count >= 1.
  Tensor variance() const;
  BnStats finalize() const;

 private:
  std::uint64_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

WelfordAccumulator welford_update(WelfordAccumulator acc, const Tensor& batch);

// (bn layer name, domain id) -> statistics.
class BnStatsBank {
 public:
  using Key = std::pair<std::string, std::string>;

  void put(std::string layer, std::string domain, BnStats stats);
  const BnStats* find(std::string_view layer, std::string_view domain) const;
  bool has_domain(std::string_view domain) const;
  std::vector<std::string> domains() const;
  std::size_t size() const { return entries_.size(); }
  const std::map<Key, BnStats>& entries() const { return entries_; }

  // Every entry must name a BN layer of `model`, match its width, and carry
  // nonnegative variances.
  void validate_against(const Model& model) const;

  friend bool operator==(const BnStatsBank&, const BnStatsBank&) = default;

 private:
  std::map<Key, BnStats> entries_;
};

enum class EstimationMode {
  // BN layer k is estimated with layers 1..k-1 already using the new statistics.
  kSequential,
  // Every layer is estimated in one pass with the model's running statistics.
  kSimultaneous,
};

struct EstimationOptions {
  EstimationMode mode = EstimationMode::kSequential;
  std::size_t batch_size = 64;
  // Stop after this BN layer.
  std::optional<std::string> up_to_layer;
};

struct DomainEstimate {
  std::vector<std::pair<std::string, BnStats>> layers;  // in model order
  std::vector<std::string> warnings;
};

// Below this many samples the estimate is returned with a warning.
inline constexpr std::size_t kLowSampleWarning = 64;

// Estimates per-BN-layer statistics of `data` (labels ignored) with
// eval-mode forward passes streamed in mini-batches.
DomainEstimate estimate_domain_stats(const Model& model, const DomainDataset& data,
                                     const EstimationOptions& options = {});

void store_estimate(BnStatsBank& bank, const std::string& domain_id, const DomainEstimate& estimate);

// Bank entries holding the model's running statistics (the source domain as
// seen by a plain eval-mode model).
void store_running_stats(BnStatsBank& bank, const Model& model, const std::string& domain_id);

// Copy of `model` whose BN layers normalize with the bank's `domain_id`
// statistics. Learnable parameters and running statistics are untouched.
Model apply_domain(const Model& model, const BnStatsBank& bank, std::string_view domain_id);

struct AdaptResult {
  Model model;
  BnStatsBank bank;
  std::vector<std::string> warnings;
};

// estimate_domain_stats followed by apply_domain. The returned bank is
// `bank` plus the new domain's entries.
AdaptResult adapt(const Model& model, const DomainDataset& target, const std::string& domain_id,
                  const EstimationOptions& options = {}, BnStatsBank bank = {});

}  // namespace adabn
