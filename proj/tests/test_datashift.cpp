#include <algorithm>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "funnel/datashift.hpp"
#include "funnel/errors.hpp"
#include "funnel/rng.hpp"

namespace fs = std::filesystem;
using funnel::Dataset;

namespace {

const fs::path kFixtures{FUNNEL_FIXTURES};

Dataset image_dataset(std::size_t n, std::size_t side, double fill) {
  Dataset ds;
  ds.count = n;
  ds.height = ds.width = side;
  ds.dim = side * side;
  ds.features.assign(n * ds.dim, fill);
  ds.labels.assign(n, 0);
  return ds;
}

}  // namespace

TEST_SUITE("datashift") {
  TEST_CASE("IDX fixture round trip") {
    const auto ds = funnel::load_idx(kFixtures / "tiny-images.idx3-ubyte", kFixtures / "tiny-labels.idx1-ubyte");
    REQUIRE(ds.count == 2);
    CHECK(ds.height == 28);
    CHECK(ds.width == 28);
    CHECK(ds.labels == std::vector{3, 7});
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t r = 0; r < 28; ++r) {
        for (std::size_t c = 0; c < 28; ++c) {
          const double expected = static_cast<double>((37 * i + 28 * r + c) % 256) / 255.0;
          REQUIRE(ds.row(i)[r * 28 + c] == expected);
        }
      }
    }

    const fs::path tmp = fs::temp_directory_path() / "funnel_idx_roundtrip";
    fs::create_directories(tmp);
    funnel::write_idx(ds, tmp / "img", tmp / "lab");
    const auto again = funnel::load_idx(tmp / "img", tmp / "lab");
    CHECK(again.features == ds.features);
    CHECK(again.labels == ds.labels);
    fs::remove_all(tmp);
  }

  TEST_CASE("IDX errors") {
    CHECK_THROWS_AS(funnel::load_idx(kFixtures / "bad-magic-images.idx3-ubyte", kFixtures / "tiny-labels.idx1-ubyte"),
                    funnel::FormatError);
    CHECK_THROWS_AS(funnel::load_idx(kFixtures / "truncated-images.idx3-ubyte", kFixtures / "tiny-labels.idx1-ubyte"),
                    funnel::FormatError);
    CHECK_THROWS_AS(funnel::load_idx(kFixtures / "tiny-images.idx3-ubyte", kFixtures / "three-labels.idx1-ubyte"),
                    funnel::FormatError);
    CHECK_THROWS_AS(funnel::load_idx(kFixtures / "missing.idx", kFixtures / "tiny-labels.idx1-ubyte"),
                    funnel::DataError);
    // Labels file passed as images.
    CHECK_THROWS_AS(funnel::load_idx(kFixtures / "tiny-labels.idx1-ubyte", kFixtures / "tiny-labels.idx1-ubyte"),
                    funnel::FormatError);
  }

  TEST_CASE("shift variants") {
    SUBCASE("zero rotation on a bright image is the identity") {
      Dataset ds = image_dataset(3, 28, 0.0);
      funnel::Rng rng(1);
      for (double& v : ds.features) v = rng.uniform(0.02, 1.0);
      CHECK(funnel::make_shift_variant(ds, 0, 9).features == ds.features);
    }
    SUBCASE("90 degrees is the rot90 index permutation") {
      Dataset ds = image_dataset(2, 28, 0.0);
      funnel::Rng rng(2);
      for (double& v : ds.features) v = rng.uniform(0.02, 1.0);
      const auto out = funnel::make_shift_variant(ds, 90, 4);
      // Independent permutation: counter-clockwise quarter turn, out[r][c] = in[c][27 - r].
      for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t r = 0; r < 28; ++r) {
          for (std::size_t c = 0; c < 28; ++c) {
            REQUIRE(out.row(n)[r * 28 + c] == ds.row(n)[c * 28 + (27 - r)]);
          }
        }
      }
    }
    SUBCASE("all-zero image becomes uniform noise") {
      const Dataset ds = image_dataset(2, 28, 0.0);
      for (int deg : {0, 45, 90}) {
        const auto out = funnel::make_shift_variant(ds, deg, 5);
        if (deg != 45) {
          // 0 and 90 degrees are bijections, so every draw is distinct.
          std::set<double> distinct(out.features.begin(), out.features.end());
          CHECK(distinct.size() == out.features.size());
        }
        for (double v : out.features) {
          CHECK(v > 0.0);
          CHECK(v < 1.0);
        }
      }
    }
    SUBCASE("45 degrees fills exposed corners with noise and keeps the center") {
      Dataset ds = image_dataset(1, 28, 0.5);
      const auto out = funnel::make_shift_variant(ds, 45, 6);
      CHECK(out.features[0] != 0.5);  // corner maps outside the frame
      CHECK(out.features[14 * 28 + 14] == 0.5);
      for (double v : out.features) CHECK((v >= 0.0 && v <= 1.0));
    }
    SUBCASE("pure in its inputs") {
      const auto ds = funnel::load_idx(kFixtures / "tiny-images.idx3-ubyte", kFixtures / "tiny-labels.idx1-ubyte");
      CHECK(funnel::make_shift_variant(ds, 45, 10).features == funnel::make_shift_variant(ds, 45, 10).features);
      CHECK(funnel::make_shift_variant(ds, 45, 10).features != funnel::make_shift_variant(ds, 45, 11).features);
      CHECK(funnel::make_shift_variant(ds, 45, 10).labels == ds.labels);
    }
    CHECK_THROWS_AS(funnel::make_shift_variant(image_dataset(1, 28, 0.0), 30, 1), funnel::InputError);
  }

  TEST_CASE("disjoint split") {
    auto parts = funnel::split_indices(60000, 3, 1);
    CHECK(parts[0].size() == 20000);
    CHECK(parts[1].size() == 20000);
    CHECK(parts[2].size() == 20000);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const std::size_t n = 3 + seed * 7;
      const auto split = funnel::split_indices(n, 3, seed);
      std::vector<std::size_t> all;
      for (const auto& p : split) {
        CHECK(p.size() >= n / 3);
        CHECK(p.size() <= n / 3 + 1);
        all.insert(all.end(), p.begin(), p.end());
      }
      std::sort(all.begin(), all.end());
      CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
      CHECK(all.size() == n);
      CHECK(all.back() == n - 1);
      CHECK(funnel::split_indices(n, 3, seed) == split);
    }
    CHECK_THROWS_AS(funnel::split_indices(2, 3, 0), funnel::InputError);
    const auto ds = funnel::load_idx(kFixtures / "tiny-images.idx3-ubyte", kFixtures / "tiny-labels.idx1-ubyte");
    const auto halves = funnel::disjoint_split(ds, 2, 0);
    CHECK(halves[0].count + halves[1].count == 2);
    CHECK(halves[0].labels[0] != halves[1].labels[0]);
  }

  TEST_CASE("schedule and batches") {
    std::vector<Dataset> variants;
    for (int v = 0; v < 3; ++v) {
      Dataset ds;
      ds.count = 50;
      ds.dim = 2;
      for (int i = 0; i < 50; ++i) {
        ds.features.push_back(v);
        ds.features.push_back(i);
        ds.labels.push_back(v);
      }
      variants.push_back(ds);
    }
    const funnel::ShiftSchedule sched({{0, 100}, {1, 100}, {2, 100}}, 8, 42);
    CHECK(sched.total_steps() == 300);
    CHECK(sched.segment_at(0) == 0);
    CHECK(sched.segment_at(99) == 0);
    CHECK(sched.segment_at(100) == 1);
    CHECK(sched.segment_at(299) == 2);
    CHECK(sched.segment_start(2) == 200);
    CHECK_THROWS_AS(static_cast<void>(sched.segment_at(300)), funnel::ExhaustedError);
    CHECK_THROWS_AS(funnel::next_batch(sched, variants, 300), funnel::ExhaustedError);

    const auto b0 = funnel::next_batch(sched, variants, 0);
    CHECK(b0.rows == 8);
    CHECK(b0.cols == 2);
    CHECK(std::all_of(b0.labels.begin(), b0.labels.end(), [](int y) { return y == 0; }));
    const auto b100 = funnel::next_batch(sched, variants, 100);
    CHECK(std::all_of(b100.labels.begin(), b100.labels.end(), [](int y) { return y == 1; }));
    CHECK(funnel::next_batch(sched, variants, 57).features == funnel::next_batch(sched, variants, 57).features);
    CHECK(funnel::next_batch(sched, variants, 57).features != funnel::next_batch(sched, variants, 58).features);

    CHECK_THROWS_AS(funnel::ShiftSchedule({{0, 0}}, 8, 1), funnel::ConfigError);
    CHECK_THROWS_AS(funnel::ShiftSchedule({}, 8, 1), funnel::ConfigError);
    CHECK_THROWS_AS(funnel::ShiftSchedule({{0, 1}}, 0, 1), funnel::ConfigError);
  }

  TEST_CASE("synthetic stream") {
    funnel::SyntheticStreamOptions opts;
    opts.dim = 8;
    opts.classes = 4;
    opts.rotations_deg = {0.0, 90.0};
    opts.train_per_variant = 4000;
    opts.eval_per_variant = 100;
    opts.noise = 0.5;
    const auto stream = funnel::synthetic_shift_stream(opts, 3);
    REQUIRE(stream.train.size() == 2);
    CHECK(stream.schedule.segments().size() == 2);

    // Per-class empirical means of segment 1 are those of segment 0 rotated
    // by 90 degrees in every plane.
    auto class_means = [&](const Dataset& ds) {
      std::vector<double> sums(opts.classes * opts.dim, 0.0);
      std::vector<double> counts(opts.classes, 0.0);
      for (std::size_t i = 0; i < ds.count; ++i) {
        const auto y = static_cast<std::size_t>(ds.labels[i]);
        counts[y] += 1.0;
        for (std::size_t j = 0; j < opts.dim; ++j) sums[y * opts.dim + j] += ds.row(i)[j];
      }
      for (std::size_t c = 0; c < opts.classes; ++c) {
        for (std::size_t j = 0; j < opts.dim; ++j) sums[c * opts.dim + j] /= counts[c];
      }
      return sums;
    };
    const auto m0 = class_means(stream.train[0]);
    const auto m1 = class_means(stream.train[1]);
    for (std::size_t c = 0; c < opts.classes; ++c) {
      std::vector<double> rotated(m0.begin() + c * opts.dim, m0.begin() + (c + 1) * opts.dim);
      funnel::rotate_pairs(rotated, 90.0);
      for (std::size_t j = 0; j < opts.dim; ++j) CHECK(std::abs(rotated[j] - m1[c * opts.dim + j]) < 0.1);
    }

    const auto again = funnel::synthetic_shift_stream(opts, 3);
    CHECK(again.train[1].features == stream.train[1].features);
    CHECK(again.eval[0].labels == stream.eval[0].labels);
    CHECK(funnel::synthetic_shift_stream(opts, 4).train[0].features != stream.train[0].features);
  }
}
