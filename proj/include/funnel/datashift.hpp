#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "funnel/problems.hpp"

namespace funnel {

// Labeled examples stored row-major. Image datasets also carry their frame
// size; features are then pixels in [0, 1].
struct Dataset {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::size_t height = 0;  // 0 for non-image data
  std::size_t width = 0;
  std::vector<double> features;
  std::vector<int> labels;

  [[nodiscard]] std::span<const double> row(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
  [[nodiscard]] bool is_image() const { return height > 0 && width > 0; }
  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;
  // The whole dataset as one batch.
  [[nodiscard]] Batch as_batch() const;
};

// Parses an IDX image file (magic 2051, u8 pixels scaled by 1/255) and its
// IDX label file (magic 2049). Throws DataError if a file cannot be read and
// FormatError on a bad magic, truncation or count mismatch.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Writes the IDX pair for an image dataset; pixels are rounded to u8.
void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

inline constexpr double kBackgroundThreshold = 1e-2;

// Random-background rotated copy of an image dataset. Pixels below
// kBackgroundThreshold become uniform noise, then each image is rotated
// counter-clockwise about its center with nearest-neighbour sampling; output
// pixels whose source falls outside the frame are fresh noise. Supported
// angles: 0, 45, 90. Pure in (ds, rotation_deg, seed).
Dataset make_shift_variant(const Dataset& ds, int rotation_deg, std::uint64_t seed);

// Random permutation of [0, n) cut into `parts` near-equal pieces; the first
// n % parts pieces get one extra index.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::size_t parts,
                                                    std::uint64_t seed);
std::vector<Dataset> disjoint_split(const Dataset& ds, std::size_t parts, std::uint64_t seed);

struct ShiftSegment {
  std::size_t variant = 0;
  std::int64_t steps = 0;
};

class ShiftSchedule {
 public:
  ShiftSchedule(std::vector<ShiftSegment> segments, std::size_t batch_size, std::uint64_t seed);

  [[nodiscard]] const std::vector<ShiftSegment>& segments() const { return segments_; }
  [[nodiscard]] std::size_t batch_size() const { return batch_size_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::int64_t total_steps() const { return total_; }
  // Index of the segment containing `step`; throws ExhaustedError past the end.
  [[nodiscard]] std::size_t segment_at(std::int64_t step) const;
  // First step of segment `i`.
  [[nodiscard]] std::int64_t segment_start(std::size_t i) const;

 private:
  std::vector<ShiftSegment> segments_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::int64_t total_ = 0;
};

// batch_size examples drawn uniformly with replacement from the variant of the
// segment containing `step`. Pure in (schedule seed, step).
Batch next_batch(const ShiftSchedule& schedule, std::span<const Dataset> variants,
                 std::int64_t step);

// Training variants, matching held-out evaluation variants, and the schedule
// that walks through them.
struct ShiftStream {
  std::vector<Dataset> train;
  std::vector<Dataset> eval;
  std::vector<double> rotations_deg;
  ShiftSchedule schedule;
};

struct SyntheticStreamOptions {
  std::size_t dim = 32;
  std::size_t classes = 10;
  std::vector<double> rotations_deg{90.0, 0.0, 45.0};
  std::int64_t steps_per_segment = 3000;
  std::size_t batch_size = 256;
  std::size_t train_per_variant = 6000;
  std::size_t eval_per_variant = 2000;
  double separation = 3.0;  // norm of every class mean
  double noise = 1.0;       // isotropic standard deviation
};

// Gaussian class blobs; segment j's examples are rotated by rotations_deg[j]
// in every coordinate plane (0,1), (2,3), ... Same task with rotated inputs.
ShiftStream synthetic_shift_stream(const SyntheticStreamOptions& options, std::uint64_t seed);

// Counter-clockwise rotation by `degrees` applied to each consecutive
// coordinate pair; a trailing odd coordinate is left unchanged.
void rotate_pairs(std::span<double> x, double degrees);

}  // namespace funnel
