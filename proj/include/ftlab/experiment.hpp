#pragma once

// Experiment orchestration: pretrain (cached) -> attach -> tracked
// fine-tuning -> run directory; parameter sweeps; cross-run analysis.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ftlab/analysis.hpp"
#include "ftlab/config.hpp"

namespace ftlab {

struct RunOptions {
  // Directory of cached pretrained hosts; nullopt disables caching.
  std::optional<std::filesystem::path> cache_dir;
  std::ostream* log = nullptr;  // progress lines; null for silence
};

// Hex digest of everything the pretrained host depends on.
std::string pretrain_key(const ExperimentConfig& cfg);

// Upstream-trained host with the upstream head, loaded from the cache when
// present and written there otherwise.
VisionTransformer pretrained_host(const ExperimentConfig& cfg, const Task& task, const RunOptions& opts = {});

// Host copy with a fresh downstream head and the configured attachment.
PeftModel prepare_finetune(const VisionTransformer& host, const ExperimentConfig& cfg);

// "adv_acc" in adversarial mode, "ood_mean" in ood mode.
std::string robustness_key(ScheduleMode mode);

struct RunOutcome {
  std::filesystem::path dir;
  TrackResult result;
  std::size_t trainable_parameters = 0;
  std::size_t total_parameters = 0;
};

// Writes manifest.json, track.csv and checkpoints/ under cfg.output.dir.
RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

// Re-evaluates one record's checkpoint using only the run directory.
TrackRecord reevaluate_checkpoint(const std::filesystem::path& run_dir, const std::string& checkpoint_id);

enum class SweepAxis { Lr, Rank, ReductionFactor, Method, Separation, Seed };
SweepAxis parse_sweep_axis(const std::string& name);
std::string to_string(SweepAxis axis);
std::string sweep_key(SweepAxis axis);  // dotted config key

struct SweepMember {
  std::string value;
  std::filesystem::path dir;
  ExperimentConfig config;
};

// One config per value, each writing to <out>/<axis>-<value>.
std::vector<SweepMember> expand_sweep(const Json& base, SweepAxis axis, const std::vector<std::string>& values,
                                      const std::filesystem::path& out);

// Runs members on `jobs` workers and writes <out>/summary.csv. Returns the
// number of diverged runs.
std::size_t run_sweep(const std::vector<SweepMember>& members, const std::filesystem::path& out, std::size_t jobs,
                      const RunOptions& opts = {});

struct RunAnalysis {
  std::string run;  // directory name
  std::string label;
  std::string method;
  std::uint64_t seed = 0;
  std::string key;
  std::vector<TrackRecord> records;
  Frontier frontier;
  double auc = 0.0;
  SlopeProfile slopes;
  std::optional<Peak> peak;
};

RunAnalysis analyze_run(const std::filesystem::path& run_dir);

// Writes pareto.csv, auc_table.csv, peaks.csv and plotdata/ under `out`.
std::vector<RunAnalysis> analyze_runs(const std::vector<std::filesystem::path>& run_dirs,
                                      const std::filesystem::path& out);

}  // namespace ftlab
