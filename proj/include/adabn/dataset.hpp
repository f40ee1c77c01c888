#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adabn/tensor.hpp"

namespace adabn {

// Samples from one domain. `inputs` is [N x ...]; labels, when present, lie in
// [0, class_count).
struct DomainDataset {
  std::string domain_id;
  Tensor inputs;
  std::optional<std::vector<int>> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
  Shape sample_shape() const;
  std::size_t features_per_sample() const;
  bool labeled() const { return labels.has_value(); }

  DomainDataset subset(std::span<const std::size_t> rows) const;
  DomainDataset without_labels() const;
  // Throws DimensionError / PreconditionError on a broken invariant.
  void validate() const;

  friend bool operator==(const DomainDataset&, const DomainDataset&) = default;
};

// Gaussian class clusters with unit within-class variance. Centers are fixed
// (independent of the seed) so that datasets drawn with different seeds share
// the same labeling function: class c sits at separation/sqrt(2) * (1 + c / dim)
// along axis c mod dim. For class_count <= dim every pair of centers is exactly
// `separation` apart.
DomainDataset make_blobs(std::size_t class_count, std::size_t per_class, std::size_t dim, double separation,
                         std::uint64_t seed, std::string domain_id = "blobs");

// Ten-class seven-segment digit glyphs rendered into [N x 1 x s x s] images
// with random translation, stroke intensity and background speckle. Pixel
// values lie in [0, 1].
DomainDataset make_digits_grid(std::size_t per_class, std::size_t image_size, std::uint64_t seed,
                               std::string domain_id = "digits");

// Covariate shift x' = scale * R(x) + shift + noise applied to the flattened
// per-sample features. `input_shift` and `input_scale` have length 1
// (broadcast) or the per-sample feature count; R rotates the plane of
// features 0 and 1 by `rotation_angle`.
struct ShiftSpec {
  std::vector<double> input_shift{0.0};
  std::vector<double> input_scale{1.0};
  std::optional<double> rotation_angle;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

DomainDataset shift_domain(const DomainDataset& src, const ShiftSpec& spec, std::string new_domain_id);

// Harsher, class-conditional shift: sample i moves by class_offsets[label_i]
// (each of length 1 or the feature count). Changes P(y | x), so per-feature
// re-standardization cannot undo it in general.
DomainDataset shift_domain_class_conditional(const DomainDataset& src,
                                             const std::vector<std::vector<double>>& class_offsets,
                                             std::string new_domain_id);

// Concatenates several datasets into one (used for pooled baselines).
DomainDataset concat_datasets(std::span<const DomainDataset> parts, std::string domain_id);

// Binary dataset file, little-endian:
//   "ADBNDATA" | u32 version | u32 flags (bit 0: labels) | u64 len + domain_id
//   | u64 class_count | u64 rank | u64 extents[rank] | f64 payload
//   | i64 labels[N] (if flag bit 0)
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void save_dataset(const DomainDataset& data, const std::filesystem::path& path, bool overwrite = false);
DomainDataset load_dataset(const std::filesystem::path& path);

// One row per sample: label (empty when unlabeled) then the flattened features.
std::string dataset_to_csv(const DomainDataset& data);

}  // namespace adabn
