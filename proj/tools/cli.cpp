#include "cli.hpp"

#include <CLI11.hpp>
#include <ostream>

#include "funnel/errors.hpp"
#include "funnel/harness.hpp"

namespace funnel::cli {

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const DataError*>(&e)) return kDataError;
  if (dynamic_cast<const NumericalError*>(&e)) return kNumericalFailure;
  return kConfigError;
}

void print_summary(std::ostream& out, const RunSummary& s) {
  out << "seed " << s.seed << ": status=" << s.status << " steps=" << s.steps_completed
      << " final_loss=" << format_real(s.final_loss);
  if (s.final_top1) out << " final_top1=" << format_real(*s.final_top1);
  if (s.best_top1) out << " best_top1=" << format_real(*s.best_top1);
  out << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Funnel step-size adaptation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  auto* run_cmd = app.add_subcommand("run", "Train with one config, one trace per seed");
  run_cmd->add_option("--config", config_path, "JSON experiment config")->required();
  run_cmd->add_option("--seed", seed, "Run only this seed");
  run_cmd->add_option("--out", out_dir, "Output directory (overrides out.dir)");

  std::vector<double> gamma_p;
  std::vector<double> gamma_s;
  std::vector<std::uint64_t> seeds;
  unsigned threads = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid over gain and scale learning rates");
  sweep_cmd->add_option("--config", config_path, "JSON experiment config")->required();
  sweep_cmd->add_option("--gamma-p", gamma_p, "Comma-separated gain learning rates")->required()->delimiter(',');
  sweep_cmd->add_option("--gamma-s", gamma_s, "Comma-separated scale learning rates")->required()->delimiter(',');
  sweep_cmd->add_option("--seeds", seeds, "Comma-separated seeds (default: config seeds)")->delimiter(',');
  sweep_cmd->add_option("--out", out_dir, "Output directory (overrides out.dir)");
  sweep_cmd->add_option("--threads", threads, "Worker threads (0: all cores)");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kConfigError;
  }

  try {
    if (grad_cmd->parsed()) {
      const GradcheckReport report = run_gradcheck();
      report.print(out);
      return report.passed() ? kSuccess : kGradcheckFailure;
    }

    ExperimentConfig config = load_config(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;

    if (run_cmd->parsed()) {
      if (seed) config.run.seeds = {*seed};
      int code = kSuccess;
      for (std::uint64_t s : config.run.seeds) {
        try {
          print_summary(out, run_experiment(config, s).summary);
        } catch (const NumericalError& e) {
          err << "numerical failure: " << e.what() << '\n';
          code = kNumericalFailure;
        }
      }
      return code;
    }

    if (sweep_cmd->parsed()) {
      if (seeds.empty()) seeds = config.run.seeds;
      SweepOptions options;
      options.threads = threads;
      const auto cells = run_sweep(config, gamma_p, gamma_s, seeds, options);
      out << sweep_table_csv(cells);
      for (const auto& c : cells) {
        for (const auto& e : c.errors) err << "cell (" << c.gamma_p << ", " << c.gamma_s << "): " << e << '\n';
      }
      return kSuccess;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kConfigError;
}

}  // namespace funnel::cli
