#include "funnel/datashift.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "funnel/errors.hpp"
#include "funnel/rng.hpp"

namespace funnel {

namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw FormatError("'" + path.string() + "': truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

struct RotationTrig {
  double cos;
  double sin;
};

// Exact values for the right angles keep the 90 degree case a pure
// permutation.
RotationTrig trig_for(double degrees) {
  if (degrees == 0.0) return {1.0, 0.0};
  if (degrees == 90.0) return {0.0, 1.0};
  if (degrees == 180.0) return {-1.0, 0.0};
  if (degrees == 270.0 || degrees == -90.0) return {0.0, -1.0};
  const double rad = degrees * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.count = indices.size();
  out.dim = dim;
  out.height = height;
  out.width = width;
  out.features.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t idx : indices) {
    if (idx >= count) throw DimensionError("Dataset::subset: index out of range");
    const auto r = row(idx);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[idx]);
  }
  return out;
}

Batch Dataset::as_batch() const { return Batch{count, dim, features, labels}; }

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (read_be32(img, 0, images_path) != kImageMagic) {
    throw FormatError("'" + images_path.string() + "': bad image magic (expected 2051)");
  }
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  if (rows == 0 || cols == 0) throw FormatError("'" + images_path.string() + "': zero image size");
  const std::size_t pixel_count = n * rows * cols;
  if (img.size() != 16 + pixel_count) {
    throw FormatError("'" + images_path.string() + "': expected " + std::to_string(16 + pixel_count) +
                      " bytes, found " + std::to_string(img.size()));
  }

  if (read_be32(lab, 0, labels_path) != kLabelMagic) {
    throw FormatError("'" + labels_path.string() + "': bad label magic (expected 2049)");
  }
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (lab.size() != 8 + label_count) {
    throw FormatError("'" + labels_path.string() + "': expected " +
                      std::to_string(8 + label_count) + " bytes, found " +
                      std::to_string(lab.size()));
  }
  if (label_count != n) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images, " +
                      std::to_string(label_count) + " labels");
  }

  Dataset ds;
  ds.count = n;
  ds.height = rows;
  ds.width = cols;
  ds.dim = rows * cols;
  ds.features.resize(pixel_count);
  for (std::size_t i = 0; i < pixel_count; ++i) {
    ds.features[i] = static_cast<double>(img[16 + i]) / 255.0;
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = lab[8 + i];
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (!ds.is_image()) throw InputError("write_idx: dataset has no image frame");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw DataError("write_idx: cannot open output files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(ds.count));
  write_be32(img, static_cast<std::uint32_t>(ds.height));
  write_be32(img, static_cast<std::uint32_t>(ds.width));
  for (double v : ds.features) {
    img.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(ds.count));
  for (int y : ds.labels) lab.put(static_cast<char>(y));
}

Dataset make_shift_variant(const Dataset& ds, int rotation_deg, std::uint64_t seed) {
  if (rotation_deg != 0 && rotation_deg != 45 && rotation_deg != 90) {
    throw InputError("make_shift_variant: unsupported rotation " + std::to_string(rotation_deg) +
                     " (supported: 0, 45, 90)");
  }
  if (!ds.is_image()) throw InputError("make_shift_variant: dataset has no image frame");

  const std::size_t h = ds.height;
  const std::size_t w = ds.width;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const RotationTrig trig = trig_for(rotation_deg);

  Dataset out = ds;
  std::vector<double> background(ds.dim);
  for (std::size_t n = 0; n < ds.count; ++n) {
    Rng rng(seed, StreamPurpose::transform, n);
    const auto src = ds.row(n);
    for (std::size_t i = 0; i < ds.dim; ++i) {
      background[i] = src[i] < kBackgroundThreshold ? rng.uniform() : src[i];
    }
    double* dst = out.features.data() + n * ds.dim;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        // Inverse map: output point, in y-up coordinates about the center,
        // rotated clockwise lands on its source.
        const double x = static_cast<double>(c) - cx;
        const double y = cy - static_cast<double>(r);
        const double sx = x * trig.cos + y * trig.sin;
        const double sy = -x * trig.sin + y * trig.cos;
        const double src_c = std::round(sx + cx);
        const double src_r = std::round(cy - sy);
        if (src_r < 0.0 || src_c < 0.0 || src_r > static_cast<double>(h - 1) ||
            src_c > static_cast<double>(w - 1)) {
          dst[r * w + c] = rng.uniform();
        } else {
          dst[r * w + c] =
              background[static_cast<std::size_t>(src_r) * w + static_cast<std::size_t>(src_c)];
        }
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::size_t parts,
                                                    std::uint64_t seed) {
  if (parts == 0) throw InputError("split: parts must be >= 1");
  if (n < parts) throw InputError("split: fewer examples than parts");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed, StreamPurpose::split);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<std::vector<std::size_t>> out(parts);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t size = n / parts + (p < n % parts ? 1 : 0);
    out[p].assign(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                  perm.begin() + static_cast<std::ptrdiff_t>(offset + size));
    offset += size;
  }
  return out;
}

std::vector<Dataset> disjoint_split(const Dataset& ds, std::size_t parts, std::uint64_t seed) {
  std::vector<Dataset> out;
  for (const auto& idx : split_indices(ds.count, parts, seed)) out.push_back(ds.subset(idx));
  return out;
}

ShiftSchedule::ShiftSchedule(std::vector<ShiftSegment> segments, std::size_t batch_size,
                             std::uint64_t seed)
    : segments_(std::move(segments)), batch_size_(batch_size), seed_(seed) {
  if (segments_.empty()) throw ConfigError("shift schedule: no segments");
  if (batch_size_ < 1) throw ConfigError("shift schedule: batch_size must be >= 1");
  for (const auto& s : segments_) {
    if (s.steps < 1) throw ConfigError("shift schedule: every segment needs steps >= 1");
    total_ += s.steps;
  }
}

std::size_t ShiftSchedule::segment_at(std::int64_t step) const {
  if (step < 0) throw InputError("shift schedule: negative step");
  std::int64_t end = 0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    end += segments_[i].steps;
    if (step < end) return i;
  }
  throw ExhaustedError("shift schedule: step " + std::to_string(step) + " is past the " +
                       std::to_string(total_) + " scheduled steps");
}

std::int64_t ShiftSchedule::segment_start(std::size_t i) const {
  if (i >= segments_.size()) throw InputError("shift schedule: segment index out of range");
  std::int64_t start = 0;
  for (std::size_t j = 0; j < i; ++j) start += segments_[j].steps;
  return start;
}

Batch next_batch(const ShiftSchedule& schedule, std::span<const Dataset> variants,
                 std::int64_t step) {
  const std::size_t seg = schedule.segment_at(step);
  const std::size_t v = schedule.segments()[seg].variant;
  if (v >= variants.size()) throw InputError("next_batch: schedule references a missing variant");
  const Dataset& ds = variants[v];
  if (ds.count == 0) throw InputError("next_batch: empty variant");

  Rng rng(schedule.seed(), StreamPurpose::data_sampling, static_cast<std::uint64_t>(step));
  Batch batch;
  batch.rows = schedule.batch_size();
  batch.cols = ds.dim;
  batch.features.reserve(batch.rows * batch.cols);
  batch.labels.reserve(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i) {
    const std::size_t idx = rng.below(ds.count);
    const auto r = ds.row(idx);
    batch.features.insert(batch.features.end(), r.begin(), r.end());
    batch.labels.push_back(ds.labels[idx]);
  }
  return batch;
}

void rotate_pairs(std::span<double> x, double degrees) {
  const RotationTrig trig = trig_for(degrees);
  for (std::size_t i = 0; i + 1 < x.size(); i += 2) {
    const double a = x[i];
    const double b = x[i + 1];
    x[i] = trig.cos * a - trig.sin * b;
    x[i + 1] = trig.sin * a + trig.cos * b;
  }
}

ShiftStream synthetic_shift_stream(const SyntheticStreamOptions& options, std::uint64_t seed) {
  if (options.dim < 2) throw ConfigError("synthetic stream: dim must be >= 2");
  if (options.classes < 2) throw ConfigError("synthetic stream: classes must be >= 2");
  if (options.rotations_deg.empty()) throw ConfigError("synthetic stream: no segments");
  if (options.train_per_variant < 1 || options.eval_per_variant < 1) {
    throw ConfigError("synthetic stream: variants need at least one example");
  }

  Rng mean_rng(seed, StreamPurpose::synthetic, 0);
  std::vector<double> means(options.classes * options.dim);
  for (std::size_t c = 0; c < options.classes; ++c) {
    double norm_sq = 0.0;
    for (std::size_t j = 0; j < options.dim; ++j) {
      const double v = mean_rng.normal();
      means[c * options.dim + j] = v;
      norm_sq += v * v;
    }
    const double scale = options.separation / std::sqrt(norm_sq);
    for (std::size_t j = 0; j < options.dim; ++j) means[c * options.dim + j] *= scale;
  }

  auto sample = [&](std::size_t count, double degrees, std::uint64_t stream) {
    Rng rng(seed, StreamPurpose::synthetic, stream);
    Dataset ds;
    ds.count = count;
    ds.dim = options.dim;
    ds.features.resize(count * options.dim);
    ds.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto y = static_cast<std::size_t>(rng.below(options.classes));
      ds.labels[i] = static_cast<int>(y);
      std::span<double> x(ds.features.data() + i * options.dim, options.dim);
      for (std::size_t j = 0; j < options.dim; ++j) {
        x[j] = means[y * options.dim + j] + options.noise * rng.normal();
      }
      rotate_pairs(x, degrees);
    }
    return ds;
  };

  std::vector<Dataset> train;
  std::vector<Dataset> eval;
  std::vector<ShiftSegment> segments;
  for (std::size_t j = 0; j < options.rotations_deg.size(); ++j) {
    const double deg = options.rotations_deg[j];
    train.push_back(sample(options.train_per_variant, deg, 1 + 2 * j));
    eval.push_back(sample(options.eval_per_variant, deg, 2 + 2 * j));
    segments.push_back({j, options.steps_per_segment});
  }
  return ShiftStream{std::move(train), std::move(eval), options.rotations_deg,
                     ShiftSchedule(std::move(segments), options.batch_size, seed)};
}

}  // namespace funnel
