#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "funnel/datashift.hpp"
#include "funnel/funnel.hpp"
#include "funnel/preconditioner.hpp"
#include "funnel/problems.hpp"
#include "funnel/rng.hpp"
#include "json.hpp"

namespace funnel {

struct ProblemSpec {
  std::string name = "quadratic";  // quadratic | rosenbrock | logistic_regression
  std::size_t dim = 2;             // 0 lets logistic regression take it from the data
  std::size_t classes = 10;
};

enum class DataSource { none, idx, synthetic };

struct ScheduleEntry {
  double rotation = 0.0;
  std::int64_t steps = 0;
};

struct DataSpec {
  DataSource source = DataSource::none;
  std::filesystem::path images;
  std::filesystem::path labels;
  // Optional held-out IDX pair; without it a slice of each training part is held out.
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  double holdout_fraction = 0.1;
  std::vector<ScheduleEntry> schedule;
  std::size_t batch_size = 1;
  // synthetic source only
  std::size_t train_per_variant = 6000;
  std::size_t eval_per_variant = 2000;
  double separation = 3.0;
  double noise = 1.0;
};

struct RunSpec {
  std::int64_t steps = 0;  // 0: the whole shift schedule
  std::vector<std::uint64_t> seeds{0};
  std::int64_t trace_stride = 1;
  std::size_t gain_samples = 0;
};

struct ExperimentConfig {
  ProblemSpec problem;
  DataSpec data;
  PreconditionerKind inner;
  // Disabled runs take a bare heavy-ball step with funnel.eta / funnel.mu.
  bool funnel_enabled = true;
  FunnelConfig funnel;
  RunSpec run;
  std::filesystem::path out_dir;

  // Throws ConfigError. Does not touch the filesystem.
  void validate() const;
};

// Strict: unknown keys and wrong types are ConfigErrors.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct GroupGainStats {
  double scale = 0.0;
  double gain_mean = 0.0;
  double gain_min = 0.0;
  double gain_max = 0.0;
  std::vector<double> sampled;
};

struct TraceRecord {
  std::int64_t step = 0;  // index of the iteration just taken
  std::size_t segment = 0;
  double loss = 0.0;      // training-batch loss at the pre-update parameters
  std::optional<double> top1;  // held-out accuracy after the update
  std::vector<GroupGainStats> groups;  // empty when the funnel is disabled
};

struct RunSummary {
  std::uint64_t seed = 0;
  std::string status = "ok";  // ok | numerical_failure
  std::string message;
  std::int64_t steps_completed = 0;
  double final_loss = 0.0;
  std::optional<double> final_top1;
  std::optional<double> best_top1;
  // Held-out accuracy at the last step of each segment.
  std::vector<double> segment_final_top1;
  // For each segment after the first: steps until accuracy is back within 2
  // points of the pre-shift level, measured on trace records; -1 if never.
  std::vector<std::int64_t> recovery_steps;
  double wall_seconds = 0.0;

  [[nodiscard]] nlohmann::json to_json() const;
};

struct RunResult {
  RunSummary summary;
  std::vector<TraceRecord> trace;
};

inline constexpr double kRecoveryMargin = 0.02;

// Builds the shift stream for the configured data source, or nullopt for
// data-free problems. Throws DataError on unreadable or malformed files.
std::optional<ShiftStream> prepare_data(const ExperimentConfig& config, std::uint64_t seed);

ProblemPtr make_problem(const ExperimentConfig& config, const ShiftStream* data);

struct RunOptions {
  bool write_files = true;  // trace/summary under config.out_dir
  bool keep_trace = true;
  std::string file_tag;     // defaults to "seed<N>"
};

// One seeded training run. Throws NumericalError after writing a diagnostic
// record when the loss stops being finite.
RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                         const RunOptions& options = {}, const ShiftStream* data = nullptr);

// Runs every configured seed.
std::vector<RunResult> run_all_seeds(const ExperimentConfig& config, const RunOptions& options = {});

// Evenly spaced coordinates floor(j n / k), j < min(k, n).
std::vector<std::size_t> sampled_gain_indices(std::size_t n, std::size_t k);
std::string trace_header(const GroupShapes& shapes, bool with_funnel, std::size_t gain_samples);
std::string format_trace_row(const TraceRecord& record);
std::string format_real(double v);

struct Stat {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};
Stat summarize(std::span<const double> values);

struct SweepCell {
  double gamma_p = 0.0;
  double gamma_s = 0.0;
  std::vector<RunSummary> runs;  // ordered like the seed list, failures included
  std::vector<std::string> errors;

  [[nodiscard]] std::size_t ok_count() const;
  [[nodiscard]] Stat final_loss() const;
  [[nodiscard]] Stat final_top1() const;
  [[nodiscard]] Stat best_top1() const;
  [[nodiscard]] Stat segment_top1(std::size_t segment) const;
};

struct SweepOptions {
  unsigned threads = 0;  // 0: hardware concurrency
  bool write_files = true;
  bool keep_traces = false;
};

// Cartesian product of gains x scales x seeds. Cells are independent; a failed
// run is recorded in its cell without stopping the sweep. Writes
// sweep_summary.csv and one sub-directory per cell under base.out_dir.
std::vector<SweepCell> run_sweep(const ExperimentConfig& base, std::span<const double> gamma_p,
                                 std::span<const double> gamma_s,
                                 std::span<const std::uint64_t> seeds, const SweepOptions& options = {});

std::string sweep_table_csv(std::span<const SweepCell> cells);

struct GradcheckCase {
  ProblemPtr problem;
  std::function<ParamGroups(Rng&)> point;
  std::function<Batch(Rng&)> batch;
};

struct GradcheckEntry {
  std::string name;
  int draws = 0;
  double max_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double threshold = 1e-5;

  [[nodiscard]] bool passed() const;
  void print(std::ostream& out) const;
};

std::vector<GradcheckCase> builtin_gradcheck_cases();
GradcheckReport run_gradcheck(std::span<const GradcheckCase> cases, int draws = 100,
                              std::uint64_t seed = 1234, double threshold = 1e-5);
GradcheckReport run_gradcheck();

}  // namespace funnel
