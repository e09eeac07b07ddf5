// ftlab: experiment runner and reporting front-end.
//
//   ftlab run CONFIG [--training.lr 5e-4 ...]
//   ftlab sweep CONFIG --axis method --values FullFT,LoRA,BitFit
//   ftlab analyze RUN_DIR... --out REPORT_DIR
//   ftlab theory --d 100 --k 0 --eta auto
//   ftlab schedule --total 3000 --mode adversarial
//   ftlab decompose
//
// Exit codes: 0 ok, 2 configuration error, 3 divergence, 4 I/O or parse
// error, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "ftlab/error.hpp"
#include "ftlab/experiment.hpp"
#include "ftlab/io.hpp"
#include "ftlab/theory.hpp"

namespace fs = std::filesystem;
using namespace ftlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitIo = 4;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::string cache = ".ftlab-cache";
  bool no_cache = false;
  bool quiet = false;
};

RunOptions run_options(const Globals& g) {
  RunOptions o;
  if (!g.no_cache) o.cache_dir = fs::path(g.cache);
  if (!g.quiet) o.log = &std::cerr;
  return o;
}

// Reads the config document and applies global flags and `--section.key
// value` overrides.
Json config_document(const std::string& path, const Globals& g, const std::vector<std::string>& extras) {
  Json doc = load_config_document(path);
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("arguments", "unexpected argument '" + arg + "'");
    arg = arg.substr(2);
    std::string value;
    if (const auto eq = arg.find('='); eq != std::string::npos) {
      value = arg.substr(eq + 1);
      arg = arg.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError(arg, "missing value");
      value = extras[++i];
    }
    if (arg.find('.') == std::string::npos && arg != "label")
      throw ConfigError(arg, "unknown option (config overrides use --section.key)");
    set_config_value(doc, arg, value);
  }
  if (g.seed) doc["seed"] = *g.seed;
  if (!g.out.empty()) set_config_value(doc, "output.dir", Json(g.out).dump());
  return doc;
}

int cmd_run(const std::string& config, const Globals& g, const std::vector<std::string>& extras) {
  const ExperimentConfig cfg = config_from_json(config_document(config, g, extras));
  const RunOutcome out = run_experiment(cfg, run_options(g));
  std::cout << out.dir.string() << "\n";
  if (out.result.diverged) {
    std::cerr << "ftlab: run diverged at step " << out.result.diverged_step << "; partial outputs in "
              << out.dir.string() << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config, const std::string& axis, const std::vector<std::string>& values,
              const Globals& g, const std::vector<std::string>& extras) {
  Globals local = g;
  const std::string out = g.out.empty() ? "sweeps/" + axis : g.out;
  local.out.clear();
  const Json doc = config_document(config, local, extras);
  const auto members = expand_sweep(doc, parse_sweep_axis(axis), values, out);
  const std::size_t diverged = run_sweep(members, out, g.jobs, run_options(g));
  std::cout << (fs::path(out) / "summary.csv").string() << "\n";
  if (diverged > 0) {
    std::cerr << "ftlab: " << diverged << " of " << members.size() << " runs diverged\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int cmd_analyze(const std::vector<std::string>& dirs, const Globals& g) {
  const fs::path out = g.out.empty() ? fs::path("report") : fs::path(g.out);
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const auto runs = analyze_runs(paths, out);
  for (const auto& r : runs) {
    std::printf("%-28s %-10s auc %.4f  frontier %zu pts", r.run.c_str(), r.method.c_str(), r.auc, r.frontier.size());
    if (r.peak)
      std::printf("  peak %s %.3f @%zu -> %.3f%s", r.key.c_str(), r.peak->peak_value, r.peak->peak_step,
                  r.peak->final_value, r.peak->declined() ? " (declined)" : "");
    std::printf("\n");
  }
  std::cout << out.string() << "\n";
  return kExitOk;
}

int cmd_theory(std::size_t d, std::size_t k, const std::string& eta_arg, double eps, double target,
               const std::string& layout, std::size_t mc, std::uint64_t seed) {
  theory::TheoryParams p;
  p.d = d;
  p.k = k;
  if (layout == "shared")
    p.layout = theory::Layout::Shared;
  else if (layout != "disjoint")
    throw ConfigError("theory.layout", "expected disjoint or shared");
  if (eta_arg == "auto") {
    p.eta = theory::eta_lower_bound(k, d, target);
  } else {
    try {
      p.eta = std::stod(eta_arg);
    } catch (const std::exception&) {
      throw ConfigError("theory.eta", "expected a number or 'auto'");
    }
  }
  p.validate();
  std::printf("d = %zu, k = %zu, layout = %s\n", d, k, layout.c_str());
  std::printf("eta = %.4f\n", p.eta);
  std::printf("closed-form accuracy = %.4f\n", theory::ft_accuracy_closed(p));
  if (eps > 0.0) std::printf("closed-form robust accuracy (eps = %g) = %.4f\n", eps, theory::adv_accuracy_closed(p, eps));
  if (mc > 0) {
    const auto clf = theory::make_classifier(p);
    const auto est = theory::monte_carlo_accuracy(clf, p, mc, 0.0, seed);
    std::printf("monte-carlo accuracy (n = %zu) = %.4f +- %.4f\n", est.n, est.accuracy, est.std_error);
    if (eps > 0.0) {
      const auto rob = theory::monte_carlo_accuracy(clf, p, mc, eps, seed);
      std::printf("monte-carlo robust accuracy (pgd) = %.4f +- %.4f\n", rob.accuracy, rob.std_error);
    }
  }
  return kExitOk;
}

int cmd_schedule(std::size_t total, const std::string& mode) {
  const auto steps = eval_steps(total, parse_schedule_mode(mode));
  for (std::size_t i = 0; i < steps.size(); ++i) std::printf("%s%zu", i ? " " : "", steps[i]);
  std::printf("\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robustness-accuracy tracking for fine-tuning strategies"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_extras();  // config overrides bubble up from run and sweep

  Globals g;
  app.add_option("--seed", g.seed, "Override the fine-tuning seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--jobs", g.jobs, "Parallel runs for sweeps")->check(CLI::PositiveNumber);
  app.add_option("--cache", g.cache, "Pretrained-host cache directory");
  app.add_flag("--no-cache", g.no_cache, "Always pretrain from scratch");
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  std::string config;
  auto* run = app.add_subcommand("run", "Pretrain (cached), attach, fine-tune with tracking");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  run->allow_extras();
  run->footer("Any config key can be overridden with --section.key VALUE.");

  std::string axis;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "One run per value along an axis plus a summary");
  sweep->add_option("config", config, "Base experiment config (JSON)")->required();
  sweep->add_option("--axis", axis, "lr | rank | reduction_factor | method | separation | seed")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');
  sweep->allow_extras();

  std::vector<std::string> dirs;
  auto* analyze = app.add_subcommand("analyze", "Pareto frontiers, AUC table, peaks and plot data");
  analyze->add_option("runs", dirs, "Run directories")->required();

  std::size_t d = 100, k = 0, mc = 0;
  std::string eta = "auto", layout = "disjoint";
  double eps = 0.0, target = 0.99;
  std::uint64_t theory_seed = 0;
  auto* th = app.add_subcommand("theory", "Closed forms (and Monte-Carlo checks) of the linear feature model");
  th->add_option("--d", d, "Weak features used by the pretrained weights");
  th->add_option("--k", k, "Weak features added by fine-tuning");
  th->add_option("--eta", eta, "Weak-feature mean shift, or 'auto' for the target-accuracy bound");
  th->add_option("--eps", eps, "L-inf attack budget");
  th->add_option("--target", target, "Target accuracy for --eta auto");
  th->add_option("--layout", layout, "disjoint | shared");
  th->add_option("--mc", mc, "Monte-Carlo sample count (0 to skip)");
  th->add_option("--mc-seed", theory_seed, "Monte-Carlo seed");

  std::size_t total = 0;
  std::string mode = "adversarial";
  auto* sched = app.add_subcommand("schedule", "Print evaluation steps");
  sched->add_option("--total", total, "Total fine-tuning steps")->required();
  sched->add_option("--mode", mode, "adversarial | ood");

  app.add_subcommand("decompose", "Print the location x mechanism registry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    std::vector<std::string> extras = app.remaining();
    for (auto* sub : {run, sweep}) {
      const auto more = sub->remaining();
      extras.insert(extras.end(), more.begin(), more.end());
    }
    if (!extras.empty() && !*run && !*sweep) throw ConfigError("arguments", "unexpected argument '" + extras[0] + "'");
    if (*run) return cmd_run(config, g, extras);
    if (*sweep) return cmd_sweep(config, axis, values, g, extras);
    if (*analyze) return cmd_analyze(dirs, g);
    if (*th) return cmd_theory(d, k, eta, eps, target, layout, mc, theory_seed);
    if (*sched) return cmd_schedule(total, mode);
    std::cout << decomposition_csv();
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "ftlab: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "ftlab: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const ParseError& e) {
    std::cerr << "ftlab: parse error: " << e.what() << "\n";
    return kExitIo;
  } catch (const IoError& e) {
    std::cerr << "ftlab: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "ftlab: " << e.what() << "\n";
    return kExitOther;
  }
}
