#pragma once

#include <cstdint>
#include <random>

namespace funnel {

// Streams are keyed by (seed, purpose, index) so that adding a new consumer
// never shifts the draws seen by an existing one.
enum class StreamPurpose : std::uint64_t {
  data_sampling = 1,
  transform = 2,
  init = 3,
  split = 4,
  synthetic = 5,
  fuzz = 6,
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index = 0);

// std::mt19937_64 output is fixed by the standard; the distributions below are
// written out so results do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index = 0)
      : engine_(derive_seed(seed, purpose, index)) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n), rejection sampled.
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace funnel
