#include "funnel/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "funnel/errors.hpp"

namespace funnel {

namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that typos
// surface as errors instead of silently falling back to defaults.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    out = convert<T>(j_.at(key), path_ + "." + key);
  }

  [[nodiscard]] const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.contains(item.key())) throw ConfigError(path_ + ": unknown key '" + item.key() + "'");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a path string");
      return std::filesystem::path(v.get<std::string>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(where + ": expected a nonnegative integer");
      }
      return v.get<T>();
    } else {
      static_assert(std::is_integral_v<T>);
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      return v.get<T>();
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

bool is_classification(const ProblemSpec& p) { return p.name == "logistic_regression"; }

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string cell_dir_name(double gp, double gs) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "gp_%.3g_gs_%.3g", gp, gs);
  return buf;
}

std::optional<double> finite_or_none(double v) {
  return std::isfinite(v) ? std::optional<double>(v) : std::nullopt;
}

GroupGainStats group_stats(const FunnelGroupState& gs, double scale, std::size_t gain_samples) {
  GroupGainStats out;
  out.scale = scale;
  const auto& p = gs.p.vector();
  if (!p.empty()) {
    out.gain_min = *std::min_element(p.begin(), p.end());
    out.gain_max = *std::max_element(p.begin(), p.end());
    out.gain_mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
  }
  for (std::size_t idx : sampled_gain_indices(p.size(), gain_samples)) out.sampled.push_back(p[idx]);
  return out;
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  const auto& p = problem;
  if (p.name != "quadratic" && p.name != "rosenbrock" && p.name != "logistic_regression") {
    throw ConfigError("problem.name: unknown problem '" + p.name + "'");
  }
  if (p.name == "quadratic" && p.dim < 1) throw ConfigError("problem.dim must be >= 1");
  if (p.name == "rosenbrock" && p.dim < 2) throw ConfigError("problem.dim must be >= 2 for rosenbrock");
  if (is_classification(p)) {
    if (p.classes < 2) throw ConfigError("problem.classes must be >= 2");
    if (data.source == DataSource::none) throw ConfigError("logistic_regression needs a data section");
  }

  std::int64_t scheduled = 0;
  if (data.source != DataSource::none) {
    if (data.schedule.empty()) throw ConfigError("data.schedule must list at least one segment");
    for (const auto& s : data.schedule) {
      if (s.steps < 1) throw ConfigError("data.schedule: every segment needs steps >= 1");
      if (data.source == DataSource::idx && s.rotation != 0.0 && s.rotation != 45.0 && s.rotation != 90.0) {
        throw ConfigError("data.schedule: idx rotations must be 0, 45 or 90");
      }
      scheduled += s.steps;
    }
    if (data.batch_size < 1) throw ConfigError("data.batch_size must be >= 1");
    if (data.source == DataSource::idx) {
      if (data.images.empty() || data.labels.empty()) throw ConfigError("data.images and data.labels are required");
      if (data.test_images.empty() != data.test_labels.empty()) {
        throw ConfigError("data.test_images and data.test_labels go together");
      }
      if (data.test_images.empty() && !(data.holdout_fraction > 0.0 && data.holdout_fraction < 1.0)) {
        throw ConfigError("data.holdout_fraction must be in (0, 1)");
      }
    } else {
      if (data.train_per_variant < 1 || data.eval_per_variant < 1) {
        throw ConfigError("data.train_per_variant and data.eval_per_variant must be >= 1");
      }
      if (!(data.noise >= 0.0) || !(data.separation >= 0.0)) throw ConfigError("data.noise and data.separation must be >= 0");
      if (is_classification(p) && p.dim < 2) throw ConfigError("problem.dim must be >= 2 for synthetic data");
    }
  }

  if (run.steps < 0) throw ConfigError("run.steps must be >= 1");
  if (data.source == DataSource::none && run.steps < 1) throw ConfigError("run.steps must be >= 1");
  if (data.source != DataSource::none && run.steps > scheduled) {
    throw ConfigError("run.steps (" + std::to_string(run.steps) + ") exceeds the " +
                      std::to_string(scheduled) + " scheduled steps");
  }
  if (run.seeds.empty()) throw ConfigError("run.seeds must not be empty");
  if (run.trace_stride < 1) throw ConfigError("run.trace_stride must be >= 1");
  inner.validate();
  funnel.validate();
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  ObjectReader root(j, "config");

  if (const json* pj = root.child("problem")) {
    ObjectReader r(*pj, "problem");
    r.read("name", c.problem.name);
    r.read("dim", c.problem.dim);
    r.read("classes", c.problem.classes);
    r.finish();
  }

  if (const json* dj = root.child("data")) {
    ObjectReader r(*dj, "data");
    std::string source = "none";
    r.read("source", source);
    if (source == "idx") {
      c.data.source = DataSource::idx;
    } else if (source == "synthetic") {
      c.data.source = DataSource::synthetic;
    } else if (source == "none") {
      c.data.source = DataSource::none;
    } else {
      throw ConfigError("data.source: expected idx or synthetic, got '" + source + "'");
    }
    r.read("images", c.data.images);
    r.read("labels", c.data.labels);
    r.read("test_images", c.data.test_images);
    r.read("test_labels", c.data.test_labels);
    r.read("holdout_fraction", c.data.holdout_fraction);
    r.read("batch_size", c.data.batch_size);
    r.read("train_per_variant", c.data.train_per_variant);
    r.read("eval_per_variant", c.data.eval_per_variant);
    r.read("separation", c.data.separation);
    r.read("noise", c.data.noise);
    if (const json* sj = r.child("schedule")) {
      if (!sj->is_array()) throw ConfigError("data.schedule: expected an array");
      for (std::size_t i = 0; i < sj->size(); ++i) {
        ObjectReader sr((*sj)[i], "data.schedule[" + std::to_string(i) + "]");
        ScheduleEntry e;
        sr.read("rotation", e.rotation);
        sr.read("steps", e.steps);
        sr.finish();
        c.data.schedule.push_back(e);
      }
    }
    r.finish();
  }

  if (const json* ij = root.child("inner")) {
    ObjectReader r(*ij, "inner");
    std::string kind(to_string(c.inner.tag));
    r.read("kind", kind);
    c.inner.tag = parse_preconditioner_tag(kind);
    r.read("epsilon", c.inner.epsilon);
    r.read("second_moment_decay", c.inner.second_moment_decay);
    r.read("first_moment_decay", c.inner.first_moment_decay);
    r.read("ema_decay", c.inner.ema_decay);
    r.finish();
  }

  if (const json* fj = root.child("funnel")) {
    ObjectReader r(*fj, "funnel");
    r.read("enabled", c.funnel_enabled);
    r.read("eta", c.funnel.eta);
    r.read("mu", c.funnel.mu);
    r.read("beta", c.funnel.beta);
    r.read("gamma_p", c.funnel.gamma_p);
    r.read("gamma_s", c.funnel.gamma_s);
    r.read("normalized", c.funnel.normalized);
    r.read("clip_max", c.funnel.clip_max);
    std::string scope(to_string(c.funnel.scale_scope));
    r.read("scale_scope", scope);
    c.funnel.scale_scope = parse_scale_scope(scope);
    std::string variant(to_string(c.funnel.variant));
    r.read("variant", variant);
    c.funnel.variant = parse_funnel_variant(variant);
    r.read("max_abs_exponent", c.funnel.clamp.max_abs_exponent);
    r.finish();
  }

  if (const json* rj = root.child("run")) {
    ObjectReader r(*rj, "run");
    r.read("steps", c.run.steps);
    if (const json* sj = r.child("seeds")) {
      if (!sj->is_array()) throw ConfigError("run.seeds: expected an array");
      c.run.seeds.clear();
      for (const auto& s : *sj) c.run.seeds.push_back(ObjectReader::convert<std::uint64_t>(s, "run.seeds"));
    }
    r.read("trace_stride", c.run.trace_stride);
    r.read("gain_samples", c.run.gain_samples);
    r.finish();
  }

  if (const json* oj = root.child("out")) {
    ObjectReader r(*oj, "out");
    r.read("dir", c.out_dir);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------- data

std::optional<ShiftStream> prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
  const DataSpec& d = config.data;
  if (d.source == DataSource::none) return std::nullopt;

  std::vector<ShiftSegment> segments;
  std::vector<double> rotations;
  for (std::size_t i = 0; i < d.schedule.size(); ++i) {
    segments.push_back({i, d.schedule[i].steps});
    rotations.push_back(d.schedule[i].rotation);
  }

  if (d.source == DataSource::synthetic) {
    SyntheticStreamOptions opts;
    opts.dim = config.problem.dim;
    opts.classes = config.problem.classes;
    opts.rotations_deg = rotations;
    opts.batch_size = d.batch_size;
    opts.train_per_variant = d.train_per_variant;
    opts.eval_per_variant = d.eval_per_variant;
    opts.separation = d.separation;
    opts.noise = d.noise;
    ShiftStream stream = synthetic_shift_stream(opts, seed);
    // Segment lengths may differ from one another.
    stream.schedule = ShiftSchedule(segments, d.batch_size, seed);
    return stream;
  }

  for (const auto& path : {d.images, d.labels, d.test_images, d.test_labels}) {
    if (!path.empty() && !std::filesystem::exists(path)) {
      throw DataError("data file '" + path.string() + "' does not exist");
    }
  }
  const Dataset full = load_idx(d.images, d.labels);
  const std::size_t parts = d.schedule.size();
  const auto train_parts = disjoint_split(full, parts, derive_seed(seed, StreamPurpose::split, 0));

  std::vector<Dataset> train;
  std::vector<Dataset> eval;
  std::optional<std::vector<Dataset>> test_parts;
  if (!d.test_images.empty()) {
    test_parts = disjoint_split(load_idx(d.test_images, d.test_labels), parts,
                                derive_seed(seed, StreamPurpose::split, 1));
  }
  for (std::size_t i = 0; i < parts; ++i) {
    const int deg = static_cast<int>(rotations[i]);
    const Dataset& part = train_parts[i];
    if (test_parts) {
      train.push_back(make_shift_variant(part, deg, derive_seed(seed, StreamPurpose::transform, 2 * i)));
      eval.push_back(make_shift_variant((*test_parts)[i], deg,
                                        derive_seed(seed, StreamPurpose::transform, 2 * i + 1)));
    } else {
      const auto n_eval = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(d.holdout_fraction * static_cast<double>(part.count))));
      if (n_eval >= part.count) throw DataError("idx data: too few examples to hold out an evaluation slice");
      std::vector<std::size_t> eval_idx(n_eval);
      std::vector<std::size_t> train_idx(part.count - n_eval);
      std::iota(eval_idx.begin(), eval_idx.end(), std::size_t{0});
      std::iota(train_idx.begin(), train_idx.end(), n_eval);
      train.push_back(make_shift_variant(part.subset(train_idx), deg,
                                         derive_seed(seed, StreamPurpose::transform, 2 * i)));
      eval.push_back(make_shift_variant(part.subset(eval_idx), deg,
                                        derive_seed(seed, StreamPurpose::transform, 2 * i + 1)));
    }
  }
  return ShiftStream{std::move(train), std::move(eval), rotations,
                     ShiftSchedule(segments, d.batch_size, seed)};
}

ProblemPtr make_problem(const ExperimentConfig& config, const ShiftStream* data) {
  const auto& p = config.problem;
  if (p.name == "quadratic") return diagonal_quadratic_problem(p.dim);
  if (p.name == "rosenbrock") return rosenbrock_problem(p.dim);
  if (!data || data->train.empty()) throw ConfigError("logistic_regression needs data");
  const std::size_t d = data->train.front().dim;
  if (p.dim != 0 && p.dim != d) {
    throw ConfigError("problem.dim = " + std::to_string(p.dim) + " but the data has " +
                      std::to_string(d) + " features");
  }
  for (const auto& ds : data->train) {
    for (int y : ds.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= p.classes) {
        throw DataError("label " + std::to_string(y) + " outside [0, problem.classes)");
      }
    }
  }
  return logistic_regression_problem(d, p.classes);
}

// ---------------------------------------------------------------- traces

std::vector<std::size_t> sampled_gain_indices(std::size_t n, std::size_t k) {
  const std::size_t count = std::min(n, k);
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t j = 0; j < count; ++j) out.push_back(j * n / count);
  return out;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8e", v);
  return buf;
}

std::string trace_header(const GroupShapes& shapes, bool with_funnel, std::size_t gain_samples) {
  std::string h = "step,segment_id,loss,top1";
  if (!with_funnel) return h;
  for (const auto& s : shapes) {
    h += ",scale:" + s.name + ",gain_mean:" + s.name + ",gain_min:" + s.name + ",gain_max:" + s.name;
  }
  for (const auto& s : shapes) {
    for (std::size_t idx : sampled_gain_indices(s.size, gain_samples)) {
      h += ",gain:" + s.name + ":" + std::to_string(idx);
    }
  }
  return h;
}

std::string format_trace_row(const TraceRecord& r) {
  std::string row = std::to_string(r.step) + "," + std::to_string(r.segment) + "," + format_real(r.loss) +
                    "," + (r.top1 ? format_real(*r.top1) : std::string("nan"));
  for (const auto& g : r.groups) {
    row += "," + format_real(g.scale) + "," + format_real(g.gain_mean) + "," + format_real(g.gain_min) + "," +
           format_real(g.gain_max);
  }
  for (const auto& g : r.groups) {
    for (double v : g.sampled) row += "," + format_real(v);
  }
  return row;
}

nlohmann::json RunSummary::to_json() const {
  json j;
  j["seed"] = seed;
  j["status"] = status;
  if (!message.empty()) j["message"] = message;
  j["steps_completed"] = steps_completed;
  j["final_loss"] = finite_or_none(final_loss) ? json(final_loss) : json(nullptr);
  j["final_top1"] = final_top1 ? json(*final_top1) : json(nullptr);
  j["best_top1"] = best_top1 ? json(*best_top1) : json(nullptr);
  j["segment_final_top1"] = segment_final_top1;
  j["recovery_steps"] = recovery_steps;
  j["wall_seconds"] = wall_seconds;
  return j;
}

// ---------------------------------------------------------------- runs

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options,
                         const ShiftStream* data) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();

  std::optional<ShiftStream> owned;
  if (!data && config.data.source != DataSource::none) {
    owned = prepare_data(config, seed);
    data = &*owned;
  }
  const ProblemPtr problem = make_problem(config, data);
  const GroupShapes shapes = problem->shapes();
  const std::int64_t steps = config.run.steps > 0 ? config.run.steps : data->schedule.total_steps();
  const bool classification = is_classification(config.problem);

  std::vector<Batch> eval_batches;
  if (data && classification) {
    for (const auto& ds : data->eval) eval_batches.push_back(ds.as_batch());
  }

  std::ofstream trace_out;
  const std::string tag = options.file_tag.empty() ? seed_tag(seed) : options.file_tag;
  if (options.write_files && !config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    const auto path = config.out_dir / ("trace_" + tag + ".csv");
    trace_out.open(path, std::ios::binary);
    if (!trace_out) throw DataError("cannot write '" + path.string() + "'");
    trace_out << trace_header(shapes, config.funnel_enabled, config.run.gain_samples) << '\n';
  }

  ParamGroups w = problem->initial_params();
  Preconditioner inner(config.inner, shapes);
  std::optional<FunnelState> fstate;
  std::optional<HeavyBall> bare;
  if (config.funnel_enabled) {
    fstate = funnel_init(config.funnel, shapes);
  } else {
    bare.emplace(shapes, config.funnel.eta, config.funnel.mu);
  }

  RunResult result;
  RunSummary& summary = result.summary;
  summary.seed = seed;
  // (step, segment, top1) of every record, for the recovery statistic.
  std::vector<TraceRecord> light;

  auto eval_top1 = [&](std::size_t segment) -> std::optional<double> {
    if (eval_batches.empty()) return std::nullopt;
    return problem->top1(w, eval_batches[data->schedule.segments()[segment].variant]);
  };

  auto finish_files = [&] {
    summary.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (options.write_files && !config.out_dir.empty()) {
      trace_out.flush();
      write_json(config.out_dir / ("summary_" + tag + ".json"), summary.to_json());
    }
  };

  for (std::int64_t t = 0; t < steps; ++t) {
    const std::size_t segment = data ? data->schedule.segment_at(t) : 0;
    const Batch batch = data ? next_batch(data->schedule, data->train, t) : Batch{};
    const auto [loss, g] = problem->value_and_grad(w, batch);

    std::string failure;
    if (!std::isfinite(loss)) {
      failure = "non-finite loss";
    } else {
      try {
        const ParamGroups g_tilde = inner.precondition(g);
        if (fstate) {
          funnel_step(*fstate, config.funnel, g, g_tilde, w);
        } else {
          bare->step(g_tilde, w);
          if (!w.all_finite()) failure = "parameters became non-finite";
        }
      } catch (const InputError& e) {
        failure = e.what();
      } catch (const NumericalError& e) {
        failure = e.what();
      }
    }
    if (!failure.empty()) {
      TraceRecord diag{t, segment, std::nan(""), std::nullopt, {}};
      if (fstate) {
        for (std::size_t gi = 0; gi < shapes.size(); ++gi) {
          diag.groups.push_back(group_stats(fstate->groups[gi], fstate->scale_of(gi), config.run.gain_samples));
        }
      }
      if (trace_out.is_open()) trace_out << format_trace_row(diag) << '\n';
      if (options.keep_trace) result.trace.push_back(diag);
      summary.status = "numerical_failure";
      summary.message = failure + " at step " + std::to_string(t);
      summary.steps_completed = t;
      summary.final_loss = loss;
      finish_files();
      throw NumericalError("seed " + std::to_string(seed) + ": " + summary.message);
    }
    summary.steps_completed = t + 1;
    summary.final_loss = loss;

    const bool segment_end = data && (t + 1 == data->schedule.segment_start(segment) +
                                                   data->schedule.segments()[segment].steps);
    const bool record = t % config.run.trace_stride == 0 || t + 1 == steps || segment_end;
    if (!record) continue;

    TraceRecord rec{t, segment, loss, eval_top1(segment), {}};
    if (fstate) {
      for (std::size_t gi = 0; gi < shapes.size(); ++gi) {
        rec.groups.push_back(group_stats(fstate->groups[gi], fstate->scale_of(gi), config.run.gain_samples));
      }
    }
    if (rec.top1) {
      summary.final_top1 = rec.top1;
      summary.best_top1 = std::max(summary.best_top1.value_or(0.0), *rec.top1);
      if (segment_end) summary.segment_final_top1.push_back(*rec.top1);
    }
    if (trace_out.is_open()) trace_out << format_trace_row(rec) << '\n';
    light.push_back({rec.step, rec.segment, rec.loss, rec.top1, {}});
    if (options.keep_trace) result.trace.push_back(std::move(rec));
  }

  if (data && classification) {
    for (std::size_t seg = 1; seg < summary.segment_final_top1.size(); ++seg) {
      const double target = summary.segment_final_top1[seg - 1] - kRecoveryMargin;
      const std::int64_t start = data->schedule.segment_start(seg);
      std::int64_t steps_needed = -1;
      for (const auto& r : light) {
        if (r.segment == seg && r.top1 && *r.top1 >= target) {
          steps_needed = r.step - start + 1;
          break;
        }
      }
      summary.recovery_steps.push_back(steps_needed);
    }
  }
  finish_files();
  return result;
}

std::vector<RunResult> run_all_seeds(const ExperimentConfig& config, const RunOptions& options) {
  std::vector<RunResult> out;
  for (std::uint64_t seed : config.run.seeds) out.push_back(run_experiment(config, seed, options));
  return out;
}

// ---------------------------------------------------------------- sweeps

Stat summarize(std::span<const double> values) {
  Stat s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::size_t SweepCell::ok_count() const {
  return static_cast<std::size_t>(
      std::count_if(runs.begin(), runs.end(), [](const RunSummary& r) { return r.status == "ok"; }));
}

namespace {

template <class F>
Stat collect(const std::vector<RunSummary>& runs, F&& pick) {
  std::vector<double> vals;
  for (const auto& r : runs) {
    if (r.status != "ok") continue;
    if (auto v = pick(r)) vals.push_back(*v);
  }
  return summarize(vals);
}

}  // namespace

Stat SweepCell::final_loss() const {
  return collect(runs, [](const RunSummary& r) { return std::optional<double>(r.final_loss); });
}
Stat SweepCell::final_top1() const {
  return collect(runs, [](const RunSummary& r) { return r.final_top1; });
}
Stat SweepCell::best_top1() const {
  return collect(runs, [](const RunSummary& r) { return r.best_top1; });
}
Stat SweepCell::segment_top1(std::size_t segment) const {
  return collect(runs, [segment](const RunSummary& r) {
    return segment < r.segment_final_top1.size() ? std::optional<double>(r.segment_final_top1[segment])
                                                 : std::nullopt;
  });
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& base, std::span<const double> gamma_p,
                                 std::span<const double> gamma_s, std::span<const std::uint64_t> seeds,
                                 const SweepOptions& options) {
  if (gamma_p.empty() || gamma_s.empty() || seeds.empty()) throw ConfigError("sweep: grids and seeds must be nonempty");
  base.validate();

  // Data depends only on the seed, so every cell shares one copy per seed.
  std::vector<std::optional<ShiftStream>> data(seeds.size());
  std::vector<std::string> data_errors(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    try {
      data[i] = prepare_data(base, seeds[i]);
    } catch (const Error& e) {
      data_errors[i] = e.what();
    }
  }

  std::vector<SweepCell> cells;
  std::vector<ExperimentConfig> cell_configs;
  for (double gp : gamma_p) {
    for (double gs : gamma_s) {
      SweepCell cell;
      cell.gamma_p = gp;
      cell.gamma_s = gs;
      cell.runs.resize(seeds.size());
      cells.push_back(std::move(cell));
      ExperimentConfig c = base;
      c.funnel.gamma_p = gp;
      c.funnel.gamma_s = gs;
      if (!base.out_dir.empty()) c.out_dir = base.out_dir / cell_dir_name(gp, gs);
      cell_configs.push_back(std::move(c));
    }
  }

  const std::size_t tasks = cells.size() * seeds.size();
  std::vector<std::string> task_errors(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t task = next++; task < tasks; task = next++) {
      const std::size_t ci = task / seeds.size();
      const std::size_t si = task % seeds.size();
      RunSummary& slot = cells[ci].runs[si];
      slot.seed = seeds[si];
      if (!data_errors[si].empty()) {
        slot.status = "data_error";
        slot.message = data_errors[si];
        task_errors[task] = data_errors[si];
        continue;
      }
      try {
        RunOptions ro;
        ro.write_files = options.write_files;
        ro.keep_trace = options.keep_traces;
        slot = run_experiment(cell_configs[ci], seeds[si], ro, data[si] ? &*data[si] : nullptr).summary;
      } catch (const std::exception& e) {
        slot.status = dynamic_cast<const NumericalError*>(&e) ? "numerical_failure" : "error";
        slot.message = e.what();
        task_errors[task] = e.what();
      }
    }
  };
  unsigned threads = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, tasks));
  std::vector<std::thread> pool;
  for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  for (std::size_t task = 0; task < tasks; ++task) {
    if (!task_errors[task].empty()) cells[task / seeds.size()].errors.push_back(task_errors[task]);
  }
  if (options.write_files && !base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    std::ofstream out(base.out_dir / "sweep_summary.csv", std::ios::binary);
    if (!out) throw DataError("cannot write sweep summary");
    out << sweep_table_csv(cells);
  }
  return cells;
}

std::string sweep_table_csv(std::span<const SweepCell> cells) {
  std::string out =
      "gamma_p,gamma_s,runs,ok,final_loss_mean,final_loss_std,final_top1_mean,final_top1_std,"
      "best_top1_mean,best_top1_std\n";
  for (const auto& c : cells) {
    const Stat fl = c.final_loss();
    const Stat ft = c.final_top1();
    const Stat bt = c.best_top1();
    auto stat = [](const Stat& s) {
      return s.count ? format_real(s.mean) + "," + format_real(s.stddev) : std::string("nan,nan");
    };
    out += format_real(c.gamma_p) + "," + format_real(c.gamma_s) + "," + std::to_string(c.runs.size()) + "," +
           std::to_string(c.ok_count()) + "," + stat(fl) + "," + stat(ft) + "," + stat(bt) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- gradcheck

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

void GradcheckReport::print(std::ostream& out) const {
  for (const auto& e : entries) {
    out << (e.passed ? "PASS " : "FAIL ") << e.name << " draws=" << e.draws
        << " max_rel_error=" << format_real(e.max_error) << " threshold=" << format_real(threshold) << '\n';
  }
  out << (passed() ? "gradcheck passed" : "gradcheck FAILED") << '\n';
}

std::vector<GradcheckCase> builtin_gradcheck_cases() {
  std::vector<GradcheckCase> cases;

  constexpr std::size_t n = 5;
  Rng build(77);
  std::vector<double> basis(n * n);
  for (double& v : basis) v = build.normal();
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) a[i * n + j] += basis[k * n + i] * basis[k * n + j];
    }
    a[i * n + i] += 0.1;
  }
  std::vector<double> b(n);
  for (double& v : b) v = build.normal();
  auto uniform_point = [](std::size_t dim) {
    return [dim](Rng& rng) {
      ParamGroups w({ParamGroup{"w", std::vector<double>(dim)}});
      for (double& v : w[0].values) v = rng.uniform(-2.0, 2.0);
      return w;
    };
  };
  auto no_batch = [](Rng&) { return Batch{}; };
  cases.push_back({quadratic_problem(a, b), uniform_point(n), no_batch});
  cases.push_back({rosenbrock_problem(5), uniform_point(5), no_batch});

  constexpr std::size_t d = 6;
  constexpr std::size_t k = 4;
  const auto lr = logistic_regression_problem(d, k);
  cases.push_back({lr,
                   [lr](Rng& rng) {
                     ParamGroups w = lr->initial_params();
                     for (auto& g : w) {
                       for (double& v : g.values) v = 0.5 * rng.normal();
                     }
                     return w;
                   },
                   [](Rng& rng) {
                     Batch batch{8, d, {}, {}};
                     for (std::size_t i = 0; i < 8 * d; ++i) batch.features.push_back(rng.normal());
                     for (std::size_t i = 0; i < 8; ++i) batch.labels.push_back(static_cast<int>(rng.below(k)));
                     return batch;
                   }});
  return cases;
}

GradcheckReport run_gradcheck(std::span<const GradcheckCase> cases, int draws, std::uint64_t seed,
                              double threshold) {
  GradcheckReport report;
  report.threshold = threshold;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    const auto& c = cases[ci];
    Rng rng(seed, StreamPurpose::fuzz, ci);
    GradcheckEntry entry{c.problem->name(), draws, 0.0, false};
    for (int i = 0; i < draws; ++i) {
      const ParamGroups w = c.point(rng);
      const Batch batch = c.batch(rng);
      const double err = max_relative_error(c.problem->grad(w, batch), finite_difference_grad(*c.problem, w, batch));
      entry.max_error = std::isnan(err) ? INFINITY : std::max(entry.max_error, err);
    }
    entry.passed = entry.max_error < threshold;
    report.entries.push_back(entry);
  }
  return report;
}

GradcheckReport run_gradcheck() {
  const auto cases = builtin_gradcheck_cases();
  return run_gradcheck(cases);
}

}  // namespace funnel
