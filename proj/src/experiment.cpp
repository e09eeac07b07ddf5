#include "ftlab/experiment.hpp"

#include <atomic>
#include <cctype>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "ftlab/error.hpp"
#include "ftlab/io.hpp"
#include "ftlab/random.hpp"

namespace ftlab {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kHostInitStream = 0x686f7374;
constexpr std::uint64_t kPretrainStream = 0x70726574;
constexpr std::uint64_t kHeadStream = 0x68656164;
constexpr std::uint64_t kAttachStream = 0x61747463;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu", step);
  return buf;
}

std::vector<std::string> ood_domains(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.tracking.mode == ScheduleMode::Ood)
    for (const auto& s : cfg.tracking.shifts) out.push_back(s.name());
  return out;
}

std::string fmt(double v) { return format_double(v); }

std::string short_fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

Json read_manifest(const fs::path& run_dir) {
  try {
    return Json::parse(read_text(run_dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError((run_dir / "manifest.json").string() + ": malformed manifest");
  }
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_') ? c : '_';
  return out;
}

}  // namespace

std::string pretrain_key(const ExperimentConfig& cfg) {
  const Json j{{"model", to_json(cfg.upstream_model())},
               {"pretrain", config_to_json(cfg)["pretrain"]},
               {"task", config_to_json(cfg)["task"]}};
  return hex64(fnv1a(j.dump()));
}

VisionTransformer pretrained_host(const ExperimentConfig& cfg, const Task& task, const RunOptions& opts) {
  const std::string key = pretrain_key(cfg);
  std::optional<fs::path> cached;
  if (opts.cache_dir) {
    cached = *opts.cache_dir / ("host-" + key + ".ckpt");
    if (fs::exists(*cached)) {
      VisionTransformer host = load_host(*cached);
      if (host.config() == cfg.upstream_model()) {
        if (opts.log) *opts.log << "[pretrain] cache hit " << cached->string() << "\n";
        return host;
      }
    }
  }
  VisionTransformer host(cfg.upstream_model(), derive_seed(cfg.pretrain.seed, {kHostInitStream}));
  PretrainConfig pc = cfg.pretrain;
  pc.seed = derive_seed(cfg.pretrain.seed, {kPretrainStream});
  if (opts.log) *opts.log << "[pretrain] " << pc.steps << " steps on " << task.upstream.size() << " upstream samples\n";
  const auto losses = pretrain(host, task.upstream, pc);
  if (opts.log && !losses.empty()) *opts.log << "[pretrain] final batch loss " << short_fmt(losses.back()) << "\n";
  if (cached) save_host(*cached, host, Json{{"key", key}});
  return host;
}

PeftModel prepare_finetune(const VisionTransformer& host, const ExperimentConfig& cfg) {
  VisionTransformer base = host.snapshot();
  base.reset_head(cfg.task.num_classes_downstream, derive_seed(cfg.seed, {kHeadStream}));
  return PeftModel(base, cfg.peft, derive_seed(cfg.seed, {kAttachStream}));
}

std::string robustness_key(ScheduleMode mode) { return mode == ScheduleMode::Adversarial ? "adv_acc" : "ood_mean"; }

RunOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  RunOutcome out;
  out.dir = cfg.output.dir;
  std::error_code ec;
  fs::create_directories(out.dir, ec);
  if (ec) throw IoError("cannot create run directory " + out.dir.string() + ": " + ec.message());
  fs::remove_all(out.dir / "checkpoints", ec);

  const Task task = make_task(cfg.task);
  if (opts.log)
    for (const auto& w : task.warnings) *opts.log << "[task] warning: " << w << "\n";
  if (cfg.output.export_data) {
    const Json meta{{"task", config_to_json(cfg)["task"]}};
    export_dataset(out.dir / "data" / "upstream", task.upstream, meta);
    export_dataset(out.dir / "data" / "train", task.train, meta);
    export_dataset(out.dir / "data" / "test", task.test, meta);
  }

  const VisionTransformer host = pretrained_host(cfg, task, opts);
  PeftModel model = prepare_finetune(host, cfg);
  out.trainable_parameters = model.trainable_parameters();
  out.total_parameters = model.total_parameters();
  if (opts.log)
    *opts.log << "[run] " << to_string(cfg.peft.method) << ": " << out.trainable_parameters << " of "
              << out.total_parameters << " parameters trainable\n";

  const TrackConfig tc = cfg.track_config();
  const std::string key = robustness_key(cfg.tracking.mode);
  auto on_record = [&](TrackRecord& rec, const PeftModel& snap) {
    if (cfg.output.checkpoints) {
      rec.checkpoint_id = checkpoint_name(rec.step);
      save_checkpoint(out.dir / "checkpoints" / (rec.checkpoint_id + ".ckpt"), snap, Json{{"step", rec.step}});
    }
    if (opts.log)
      *opts.log << "[run] step " << rec.step << " train " << short_fmt(rec.train_acc) << " test "
                << short_fmt(rec.test_acc) << " " << key << " " << short_fmt(rec.value(key)) << "\n";
  };
  out.result = run_tracked(model, task.train, task.test, tc, on_record);
  if (out.result.diverged && opts.log)
    *opts.log << "[run] diverged at step " << out.result.diverged_step << "; partial log kept\n";

  write_track_csv(out.dir / "track.csv", out.result.records, ood_domains(cfg));
  const Json manifest{{"format", "ftlab-run-1"},
                      {"config", config_to_json(cfg)},
                      {"pretrain_key", pretrain_key(cfg)},
                      {"robustness_key", key},
                      {"ood_domains", ood_domains(cfg)},
                      {"schedule", tc.schedule.steps(tc.total_steps)},
                      {"trainable_parameters", out.trainable_parameters},
                      {"total_parameters", out.total_parameters},
                      {"trainable_names", model.trainable_names()},
                      {"eval_indices", out.result.eval_indices},
                      {"train_eval_indices", out.result.train_eval_indices},
                      {"records", out.result.records.size()},
                      {"diverged", out.result.diverged},
                      {"diverged_step", out.result.diverged_step},
                      {"task_warnings", task.warnings}};
  write_text(out.dir / "manifest.json", manifest.dump(2) + "\n");
  return out;
}

TrackRecord reevaluate_checkpoint(const fs::path& run_dir, const std::string& checkpoint_id) {
  const Json manifest = read_manifest(run_dir);
  const ExperimentConfig cfg = config_from_json(manifest.at("config"));
  Json meta;
  const PeftModel model = load_checkpoint(run_dir / "checkpoints" / (checkpoint_id + ".ckpt"), &meta);
  const Task task = make_task(cfg.task);
  TrackRecord rec;
  rec.step = meta.at("step").get<std::size_t>();
  rec.checkpoint_id = checkpoint_id;
  evaluate_record(rec, model, task.train, task.test, cfg.track_config(),
                  manifest.at("train_eval_indices").get<std::vector<std::size_t>>(),
                  manifest.at("eval_indices").get<std::vector<std::size_t>>());
  return rec;
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "lr") return SweepAxis::Lr;
  if (name == "rank") return SweepAxis::Rank;
  if (name == "reduction_factor") return SweepAxis::ReductionFactor;
  if (name == "method") return SweepAxis::Method;
  if (name == "separation") return SweepAxis::Separation;
  if (name == "seed") return SweepAxis::Seed;
  throw ConfigError("sweep.axis", "unknown axis '" + name + "' (lr, rank, reduction_factor, method, separation, seed)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Lr: return "lr";
    case SweepAxis::Rank: return "rank";
    case SweepAxis::ReductionFactor: return "reduction_factor";
    case SweepAxis::Method: return "method";
    case SweepAxis::Separation: return "separation";
    case SweepAxis::Seed: return "seed";
  }
  return "?";
}

std::string sweep_key(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Lr: return "training.lr";
    case SweepAxis::Rank: return "peft.rank";
    case SweepAxis::ReductionFactor: return "peft.reduction_factor";
    case SweepAxis::Method: return "peft.method";
    case SweepAxis::Separation: return "task.separation";
    case SweepAxis::Seed: return "seed";
  }
  return "?";
}

std::vector<SweepMember> expand_sweep(const Json& base, SweepAxis axis, const std::vector<std::string>& values,
                                      const fs::path& out) {
  if (values.empty()) throw ConfigError("sweep.values", "at least one value is required");
  std::vector<SweepMember> members;
  std::set<std::string> dirs;
  for (const auto& v : values) {
    Json doc = base;
    set_config_value(doc, sweep_key(axis), v);
    SweepMember m;
    m.value = v;
    m.dir = out / (to_string(axis) + "-" + sanitize(v));
    if (!dirs.insert(m.dir.string()).second) throw ConfigError("sweep.values", "duplicate value '" + v + "'");
    set_config_value(doc, "output.dir", Json(m.dir.string()).dump());
    m.config = config_from_json(doc);
    members.push_back(std::move(m));
  }
  return members;
}

std::size_t run_sweep(const std::vector<SweepMember>& members, const fs::path& out, std::size_t jobs,
                      const RunOptions& opts) {
  RunOptions shared = opts;
  if (!shared.cache_dir) shared.cache_dir = out / ".pretrain-cache";

  // Pretrain every distinct host once before the workers start.
  std::set<std::string> keys;
  for (const auto& m : members)
    if (keys.insert(pretrain_key(m.config)).second) pretrained_host(m.config, make_task(m.config.task), shared);

  std::vector<std::optional<RunOutcome>> outcomes(members.size());
  std::vector<std::exception_ptr> errors(members.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < members.size(); i = next++) {
      RunOptions local = shared;
      local.log = nullptr;
      try {
        outcomes[i] = run_experiment(members[i].config, local);
        if (opts.log) {
          std::lock_guard lock(log_mutex);
          *opts.log << "[sweep] finished " << members[i].dir.string()
                    << (outcomes[i]->result.diverged ? " (diverged)" : "") << "\n";
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, members.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::string csv =
      "value,run_dir,method,trainable_parameters,trainable_fraction,final_step,final_test_acc,final_robustness,"
      "peak_step,peak_robustness,declined,auc,diverged\n";
  std::size_t diverged = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& o = *outcomes[i];
    diverged += o.result.diverged ? 1 : 0;
    csv += members[i].value + "," + members[i].dir.string() + "," + to_string(members[i].config.peft.method) + "," +
           std::to_string(o.trainable_parameters) + "," +
           fmt(static_cast<double>(o.trainable_parameters) / static_cast<double>(o.total_parameters)) + ",";
    if (o.result.records.empty()) {
      csv += ",,,,,,," + std::string(o.result.diverged ? "1" : "0") + "\n";
      continue;
    }
    const RunAnalysis a = analyze_run(members[i].dir);
    const auto& last = a.records.back();
    csv += std::to_string(last.step) + "," + fmt(last.test_acc) + "," + fmt(last.value(a.key)) + ",";
    if (a.peak)
      csv += std::to_string(a.peak->peak_step) + "," + fmt(a.peak->peak_value) + "," +
             (a.peak->declined() ? "1" : "0") + ",";
    else
      csv += ",,,";
    csv += fmt(a.auc) + "," + (o.result.diverged ? "1" : "0") + "\n";
  }
  write_text(out / "summary.csv", csv);
  return diverged;
}

RunAnalysis analyze_run(const fs::path& run_dir) {
  const Json manifest = read_manifest(run_dir);
  RunAnalysis a;
  a.run = run_dir.filename().string();
  if (a.run.empty()) a.run = run_dir.parent_path().filename().string();
  try {
    const Json& cfg = manifest.at("config");
    a.label = cfg.at("label").get<std::string>();
    a.method = cfg.at("peft").at("method").get<std::string>();
    a.seed = cfg.at("seed").get<std::uint64_t>();
    a.key = manifest.at("robustness_key").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError((run_dir / "manifest.json").string() + ": missing field: " + e.what());
  }
  a.records = read_track_csv(run_dir / "track.csv");
  if (a.records.empty()) throw ParseError((run_dir / "track.csv").string(), 2, "no records");
  std::vector<ParetoPoint> points;
  for (const auto& r : a.records) points.push_back({r.test_acc, r.value(a.key), r.step, a.run});
  a.frontier = pareto_frontier(points);
  a.auc = auc(a.frontier);
  a.slopes = frontier_slope_profile(a.frontier);
  if (a.records.size() >= 3) a.peak = detect_peak(a.records, a.key);
  return a;
}

std::vector<RunAnalysis> analyze_runs(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw ConfigError("runs", "at least one run directory is required");
  std::vector<RunAnalysis> runs;
  for (const auto& d : run_dirs) runs.push_back(analyze_run(d));

  std::string pareto = "run,label,method,seed,step,accuracy,robustness\n";
  std::string peaks =
      "run,label,method,seed,key,peak_step,peak_value,final_step,final_value,declined,test_acc_at_peak,final_test_acc\n";
  std::string traj = "run,label,method,seed,step,train_acc,test_acc,robustness,train_loss\n";
  std::string slopes = "run,label,method,seed,segments,max_abs_slope,curve_length\n";
  std::map<std::string, std::string> frontier_by_method;
  // label -> method -> (sum, count)
  std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> aucs;

  for (const auto& a : runs) {
    const std::string id = a.run + "," + a.label + "," + a.method + "," + std::to_string(a.seed);
    auto& fm = frontier_by_method[a.method];
    if (fm.empty()) fm = "run,label,seed,step,accuracy,robustness\n";
    for (const auto& p : a.frontier) {
      pareto += id + "," + std::to_string(p.step) + "," + fmt(p.accuracy) + "," + fmt(p.robustness) + "\n";
      fm += a.run + "," + a.label + "," + std::to_string(a.seed) + "," + std::to_string(p.step) + "," +
            fmt(p.accuracy) + "," + fmt(p.robustness) + "\n";
    }
    for (const auto& r : a.records)
      traj += id + "," + std::to_string(r.step) + "," + fmt(r.train_acc) + "," + fmt(r.test_acc) + "," +
              fmt(r.value(a.key)) + "," + fmt(r.train_loss) + "\n";
    slopes += id + "," + std::to_string(a.slopes.slopes.size()) + "," + fmt(a.slopes.max_abs_slope) + "," +
              fmt(a.slopes.curve_length) + "\n";
    if (a.peak) {
      const auto& last = a.records.back();
      peaks += id + "," + a.key + "," + std::to_string(a.peak->peak_step) + "," + fmt(a.peak->peak_value) + "," +
               std::to_string(last.step) + "," + fmt(a.peak->final_value) + "," + (a.peak->declined() ? "1" : "0") +
               "," + fmt(a.records[a.peak->peak_index].test_acc) + "," + fmt(last.test_acc) + "\n";
    }
    auto& cell = aucs[a.label][a.method];
    cell.first += a.auc;
    cell.second += 1;
  }

  std::string table = "label,method,runs,auc,relative_auc_pct\n";
  std::set<std::string> methods;
  for (const auto& [label, by_method] : aucs) {
    std::map<std::string, double> means;
    for (const auto& [m, c] : by_method) {
      means[m] = c.first / static_cast<double>(c.second);
      methods.insert(m);
    }
    std::map<std::string, double> rel;
    double total = 0.0;
    for (const auto& [m, v] : means) total += v;
    if (means.size() >= 2 && total > 0.0) rel = relative_auc(means);
    for (const auto& [m, v] : means)
      table += label + "," + m + "," + std::to_string(by_method.at(m).second) + "," + fmt(v) + "," +
               (rel.count(m) ? fmt(rel.at(m)) : std::string()) + "\n";
  }
  // Methods as rows, task labels as columns.
  std::string matrix = "method";
  for (const auto& [label, _] : aucs) matrix += "," + label;
  matrix += "\n";
  for (const auto& m : methods) {
    matrix += m;
    for (const auto& [label, by_method] : aucs) {
      matrix += ",";
      auto it = by_method.find(m);
      if (it != by_method.end()) matrix += fmt(it->second.first / static_cast<double>(it->second.second));
    }
    matrix += "\n";
  }

  write_text(out / "pareto.csv", pareto);
  write_text(out / "auc_table.csv", table);
  write_text(out / "peaks.csv", peaks);
  write_text(out / "plotdata" / "trajectories.csv", traj);
  write_text(out / "plotdata" / "frontier_slopes.csv", slopes);
  write_text(out / "plotdata" / "auc_matrix.csv", matrix);
  for (const auto& [m, text] : frontier_by_method) write_text(out / "plotdata" / ("frontier_" + m + ".csv"), text);
  return runs;
}

}  // namespace ftlab
