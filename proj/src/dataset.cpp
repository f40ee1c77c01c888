#include "adabn/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include "adabn/binary_io.hpp"
#include "adabn/errors.hpp"

namespace adabn {

Shape DomainDataset::sample_shape() const {
  if (inputs.empty()) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

std::size_t DomainDataset::features_per_sample() const { return size() ? inputs.size() / size() : 0; }

DomainDataset DomainDataset::subset(std::span<const std::size_t> rows) const {
  DomainDataset out;
  out.domain_id = domain_id;
  out.class_count = class_count;
  out.inputs = inputs.gather_rows(rows);
  if (labels) {
    std::vector<int> l;
    l.reserve(rows.size());
    for (auto r : rows) l.push_back((*labels)[r]);
    out.labels = std::move(l);
  }
  return out;
}

DomainDataset DomainDataset::without_labels() const {
  DomainDataset out = *this;
  out.labels.reset();
  return out;
}

void DomainDataset::validate() const {
  if (size() == 0 || inputs.rank() < 2) throw PreconditionError("dataset '" + domain_id + "' has no samples");
  if (labels) {
    if (labels->size() != size()) {
      throw DimensionError("dataset '" + domain_id + "': " + std::to_string(labels->size()) + " labels for " +
                           std::to_string(size()) + " samples");
    }
    for (int l : *labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
        throw PreconditionError("dataset '" + domain_id + "': label " + std::to_string(l) + " outside [0, " +
                                std::to_string(class_count) + ")");
      }
    }
  }
}

DomainDataset make_blobs(std::size_t class_count, std::size_t per_class, std::size_t dim, double separation,
                         std::uint64_t seed, std::string domain_id) {
  if (class_count == 0 || per_class == 0 || dim == 0) throw PreconditionError("make_blobs: counts must be positive");
  if (!(separation > 0.0)) throw PreconditionError("make_blobs: separation must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = class_count * per_class;
  Tensor x({n, dim});
  std::vector<int> labels(n);
  const double radius = separation / std::sqrt(2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % class_count;
    labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < dim; ++j) x.at(i, j) = noise(rng);
    x.at(i, c % dim) += radius * (1.0 + static_cast<double>(c / dim));
  }
  return {std::move(domain_id), std::move(x), std::move(labels), class_count};
}

namespace {

// Segment order a b c d e f g.
constexpr std::array<std::array<bool, 7>, 10> kSegments{{
    {true, true, true, true, true, true, false},      // 0
    {false, true, true, false, false, false, false},  // 1
    {true, true, false, true, true, false, true},     // 2
    {true, true, true, true, false, false, true},     // 3
    {false, true, true, false, false, true, true},    // 4
    {true, false, true, true, false, true, true},     // 5
    {true, false, true, true, true, true, true},      // 6
    {true, true, true, false, false, false, false},   // 7
    {true, true, true, true, true, true, true},       // 8
    {true, true, true, true, false, true, true},      // 9
}};

void fill_rect(Tensor& img, std::size_t n, int top, int left, int height, int width, double value) {
  const int s = static_cast<int>(img.dim(2));
  for (int r = std::max(top, 0); r < std::min(top + height, s); ++r)
    for (int c = std::max(left, 0); c < std::min(left + width, s); ++c)
      img.at(n, 0, static_cast<std::size_t>(r), static_cast<std::size_t>(c)) =
          std::max(img.at(n, 0, static_cast<std::size_t>(r), static_cast<std::size_t>(c)), value);
}

}  // namespace

DomainDataset make_digits_grid(std::size_t per_class, std::size_t image_size, std::uint64_t seed,
                               std::string domain_id) {
  if (per_class == 0) throw PreconditionError("make_digits_grid: per_class must be positive");
  if (image_size < 8) throw PreconditionError("make_digits_grid: image_size must be at least 8");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> jitter(-1, 1);
  std::uniform_real_distribution<double> stroke(0.7, 1.0);
  std::uniform_real_distribution<double> speckle(0.0, 0.1);

  const int s = static_cast<int>(image_size);
  const int t = std::max(1, s / 12);
  const int h = s - 4;
  const int w = std::max(4, s / 2);
  const std::size_t n = 10 * per_class;
  Tensor img({n, 1, image_size, image_size}, 0.0);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int digit = static_cast<int>(i % 10);
    labels[i] = digit;
    const int y0 = 2 + jitter(rng);
    const int x0 = (s - w) / 2 + jitter(rng);
    const double v = stroke(rng);
    const auto& seg = kSegments[static_cast<std::size_t>(digit)];
    const int half = h / 2;
    if (seg[0]) fill_rect(img, i, y0, x0, t, w, v);
    if (seg[1]) fill_rect(img, i, y0, x0 + w - t, half + 1, t, v);
    if (seg[2]) fill_rect(img, i, y0 + half, x0 + w - t, h - half, t, v);
    if (seg[3]) fill_rect(img, i, y0 + h - t, x0, t, w, v);
    if (seg[4]) fill_rect(img, i, y0 + half, x0, h - half, t, v);
    if (seg[5]) fill_rect(img, i, y0, x0, half + 1, t, v);
    if (seg[6]) fill_rect(img, i, y0 + half - t / 2, x0, t, w, v);
    for (std::size_t r = 0; r < image_size; ++r)
      for (std::size_t c = 0; c < image_size; ++c) {
        double& px = img.at(i, 0, r, c);
        px = std::clamp(px + speckle(rng), 0.0, 1.0);
      }
  }
  return {std::move(domain_id), std::move(img), std::move(labels), 10};
}

namespace {

double broadcast_at(const std::vector<double>& v, std::size_t j) { return v.size() == 1 ? v[0] : v[j]; }

void check_broadcast(const std::vector<double>& v, std::size_t features, const char* what) {
  if (v.size() != 1 && v.size() != features) {
    throw DimensionError(std::string("shift_domain: ") + what + " has length " + std::to_string(v.size()) +
                         ", expected 1 or " + std::to_string(features));
  }
}

}  // namespace

DomainDataset shift_domain(const DomainDataset& src, const ShiftSpec& spec, std::string new_domain_id) {
  src.validate();
  const std::size_t f = src.features_per_sample();
  check_broadcast(spec.input_shift, f, "input_shift");
  check_broadcast(spec.input_scale, f, "input_scale");
  for (double s : spec.input_scale)
    if (!(s > 0.0)) throw PreconditionError("shift_domain: scales must be positive");
  if (!(spec.noise_sigma >= 0.0)) throw PreconditionError("shift_domain: noise_sigma must be nonnegative");
  if (spec.rotation_angle && f < 2) throw DimensionError("shift_domain: rotation needs at least two features");

  DomainDataset out = src;
  out.domain_id = std::move(new_domain_id);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto x = out.inputs.data();
  const double cs = spec.rotation_angle ? std::cos(*spec.rotation_angle) : 1.0;
  const double sn = spec.rotation_angle ? std::sin(*spec.rotation_angle) : 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double* row = x.data() + i * f;
    if (spec.rotation_angle) {
      const double a = row[0], b = row[1];
      row[0] = cs * a - sn * b;
      row[1] = sn * a + cs * b;
    }
    for (std::size_t j = 0; j < f; ++j) {
      row[j] = broadcast_at(spec.input_scale, j) * row[j] + broadcast_at(spec.input_shift, j);
      if (spec.noise_sigma > 0.0) row[j] += spec.noise_sigma * noise(rng);
    }
  }
  return out;
}

DomainDataset shift_domain_class_conditional(const DomainDataset& src,
                                             const std::vector<std::vector<double>>& class_offsets,
                                             std::string new_domain_id) {
  src.validate();
  if (!src.labeled()) throw PreconditionError("class-conditional shift needs labels");
  if (class_offsets.size() != src.class_count) {
    throw DimensionError("class-conditional shift: " + std::to_string(class_offsets.size()) + " offsets for " +
                         std::to_string(src.class_count) + " classes");
  }
  const std::size_t f = src.features_per_sample();
  for (const auto& o : class_offsets) check_broadcast(o, f, "class offset");
  DomainDataset out = src;
  out.domain_id = std::move(new_domain_id);
  auto x = out.inputs.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& off = class_offsets[static_cast<std::size_t>((*src.labels)[i])];
    for (std::size_t j = 0; j < f; ++j) x[i * f + j] += broadcast_at(off, j);
  }
  return out;
}

DomainDataset concat_datasets(std::span<const DomainDataset> parts, std::string domain_id) {
  if (parts.empty()) throw PreconditionError("concat_datasets: nothing to concatenate");
  const Shape sample = parts[0].sample_shape();
  std::vector<double> values;
  std::vector<int> labels;
  bool labeled = true;
  std::size_t n = 0, classes = 0;
  for (const auto& p : parts) {
    if (p.sample_shape() != sample) throw DimensionError("concat_datasets: sample shapes differ");
    values.insert(values.end(), p.inputs.data().begin(), p.inputs.data().end());
    labeled = labeled && p.labeled();
    if (p.labeled()) labels.insert(labels.end(), p.labels->begin(), p.labels->end());
    n += p.size();
    classes = std::max(classes, p.class_count);
  }
  Shape shape{n};
  shape.insert(shape.end(), sample.begin(), sample.end());
  DomainDataset out{std::move(domain_id), Tensor(std::move(shape), std::move(values)), std::nullopt, classes};
  if (labeled) out.labels = std::move(labels);
  return out;
}

namespace {
constexpr std::string_view kDatasetMagic = "ADBNDATA";
}

void save_dataset(const DomainDataset& data, const std::filesystem::path& path, bool overwrite) {
  data.validate();
  io::ByteWriter w;
  w.raw(kDatasetMagic);
  w.u32(kDatasetFormatVersion);
  w.u32(data.labeled() ? 1u : 0u);
  w.str(data.domain_id);
  w.u64(data.class_count);
  w.tensor(data.inputs);
  if (data.labels)
    for (int l : *data.labels) w.i64(l);
  io::write_file(path, w.bytes(), overwrite);
}

DomainDataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  if (bytes.size() < kDatasetMagic.size() || r.raw(kDatasetMagic.size(), "magic") != kDatasetMagic) {
    throw FormatError("'" + path.string() + "' is not a dataset file (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetFormatVersion) {
    throw UnsupportedVersionError("dataset format version " + std::to_string(version) + " is not supported (reader is " +
                                  std::to_string(kDatasetFormatVersion) + ")");
  }
  const std::uint32_t flags = r.u32("flags");
  DomainDataset d;
  d.domain_id = r.str("domain id");
  d.class_count = static_cast<std::size_t>(r.u64("class count"));
  d.inputs = r.tensor("inputs");
  if (flags & 1u) {
    std::vector<int> labels(d.size());
    for (auto& l : labels) l = static_cast<int>(r.i64("labels"));
    d.labels = std::move(labels);
  }
  if (r.remaining() != 0) throw FormatError("'" + path.string() + "' has trailing bytes");
  try {
    d.validate();
  } catch (const Error& e) {
    throw ValidationError(std::string("invalid dataset: ") + e.what());
  }
  return d;
}

std::string dataset_to_csv(const DomainDataset& data) {
  std::ostringstream out;
  out.precision(17);
  const std::size_t f = data.features_per_sample();
  out << "label";
  for (std::size_t j = 0; j < f; ++j) out << ",x" << j;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels) out << (*data.labels)[i];
    for (std::size_t j = 0; j < f; ++j) out << ',' << data.inputs[i * f + j];
    out << '\n';
  }
  return out.str();
}

}  // namespace adabn
