#include "ftlab/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ftlab/error.hpp"
#include "ftlab/ops.hpp"
#include "ftlab/random.hpp"

namespace ftlab {

std::string to_string(ScheduleMode m) { return m == ScheduleMode::Adversarial ? "adversarial" : "ood"; }

ScheduleMode parse_schedule_mode(const std::string& name) {
  if (name == "adversarial") return ScheduleMode::Adversarial;
  if (name == "ood") return ScheduleMode::Ood;
  throw ConfigError("schedule.mode", "expected 'adversarial' or 'ood', got '" + name + "'");
}

Schedule Schedule::standard(ScheduleMode mode) {
  if (mode == ScheduleMode::Adversarial) return {mode, {{0, 700, 50}, {700, 3000, 1000}, {3000, kUnbounded, 6000}}};
  return {mode,
          {{0, 1000, 200}, {1000, 3000, 2000}, {3000, 10000, 4000}, {10000, 30000, 6000}, {30000, kUnbounded, 20000}}};
}

Schedule Schedule::uniform(std::size_t stride, ScheduleMode mode) { return {mode, {{0, kUnbounded, stride}}}; }

void Schedule::validate() const {
  if (ranges.empty()) throw ConfigError("schedule.ranges", "must not be empty");
  std::size_t expect = 0;
  for (const auto& r : ranges) {
    if (r.start != expect) throw ConfigError("schedule.ranges", "ranges must be contiguous from 0");
    if (r.stride == 0) throw ConfigError("schedule.ranges", "strides must be positive");
    if (r.end <= r.start) throw ConfigError("schedule.ranges", "each range must be non-empty");
    expect = r.end;
  }
  if (expect != kUnbounded) throw ConfigError("schedule.ranges", "last range must be unbounded");
}

std::vector<std::size_t> Schedule::steps(std::size_t total_steps) const {
  validate();
  std::vector<std::size_t> out{0};
  for (const auto& r : ranges) {
    const std::size_t hi = std::min(r.end, total_steps);
    for (std::size_t s = (r.start / r.stride + 1) * r.stride; s <= hi; s += r.stride)
      if (s > r.start) out.push_back(s);
    if (r.end >= total_steps) break;
  }
  if (out.back() != total_steps) out.push_back(total_steps);
  return out;
}

std::vector<std::size_t> eval_steps(std::size_t total_steps, ScheduleMode mode) {
  return Schedule::standard(mode).steps(total_steps);
}

double TrackRecord::value(const std::string& key) const {
  if (key == "train_acc") return train_acc;
  if (key == "test_acc") return test_acc;
  if (key == "train_loss") return train_loss;
  if (key == "adv_acc") {
    if (!adv_acc) throw AnalysisError("record at step " + std::to_string(step) + " has no adversarial accuracy");
    return *adv_acc;
  }
  if (key == "ood_mean") {
    if (ood.empty()) throw AnalysisError("record at step " + std::to_string(step) + " has no OOD accuracies");
    double total = 0.0;
    for (const auto& [name, v] : ood) total += v;
    return total / static_cast<double>(ood.size());
  }
  if (key.rfind("ood_", 0) == 0) {
    auto it = ood.find(key.substr(4));
    if (it != ood.end()) return it->second;
  }
  throw AnalysisError("unknown record key '" + key + "'");
}

void TrackConfig::validate() const {
  schedule.validate();
  if (batch_size < 1) throw ConfigError("training.batch_size", "must be at least 1");
  if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr)) throw ConfigError("training.lr", "must be finite and >= 0");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("training.weight_decay", "must be >= 0");
  if (eval_subset < 1) throw ConfigError("tracking.eval_subset", "must be at least 1");
  if (train_eval_subset < 1) throw ConfigError("tracking.train_eval_subset", "must be at least 1");
  if (schedule.mode == ScheduleMode::Adversarial) attack.validate();
  if (schedule.mode == ScheduleMode::Ood) {
    if (shifts.empty()) throw ConfigError("tracking.shifts", "ood mode needs at least one domain shift");
    for (const auto& s : shifts) s.validate();
  }
}

namespace {

constexpr std::uint64_t kTrainStream = 0x747261696e;
constexpr std::uint64_t kEvalStream = 0x6576616c;

// First `count` entries of a seeded permutation of [0, n).
std::vector<std::size_t> pick_subset(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (count >= n) return idx;
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double mean_loss(const Classifier& f, const Dataset& d, std::size_t batch = 256) {
  double total = 0.0;
  for (std::size_t begin = 0; begin < d.size(); begin += batch) {
    const std::size_t end = std::min(d.size(), begin + batch);
    std::span<const int> labels(d.labels.data() + begin, end - begin);
    total += ops::cross_entropy(f(d.images(begin, end)), labels).item() * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(d.size());
}

}  // namespace

void evaluate_record(TrackRecord& rec, const PeftModel& snapshot, const Dataset& train, const Dataset& test,
                     const TrackConfig& cfg, const std::vector<std::size_t>& train_indices,
                     const std::vector<std::size_t>& eval_indices) {
  Classifier f = snapshot.classifier();
  const Dataset train_eval = train.subset(train_indices);
  rec.train_acc = accuracy(f, train_eval);
  rec.train_loss = mean_loss(f, train_eval);
  rec.test_acc = accuracy(f, test);
  const Dataset eval = test.subset(eval_indices);
  if (cfg.schedule.mode == ScheduleMode::Adversarial) {
    AttackConfig attack = cfg.attack;
    attack.seed = derive_seed(cfg.seed, {kEvalStream, rec.step});
    rec.adv_acc = robust_accuracy(f, eval, attack);
  } else {
    for (const auto& shift : cfg.shifts) rec.ood[shift.name()] = accuracy(f, apply_shift(eval, shift));
  }
}

TrackResult run_tracked(PeftModel& model, const Dataset& train, const Dataset& test, const TrackConfig& cfg,
                        const RecordCallback& on_record) {
  cfg.validate();
  if (train.size() == 0 || test.size() == 0) throw DataError("tracking needs non-empty train and test sets");
  if (train.num_classes != model.base().config().num_classes)
    throw ConfigError("task.num_classes_downstream", "model head has " +
                                                         std::to_string(model.base().config().num_classes) +
                                                         " classes, dataset has " + std::to_string(train.num_classes));
  TrackResult result;
  const auto schedule = cfg.schedule.steps(cfg.total_steps);
  result.eval_indices = pick_subset(test.size(), cfg.eval_subset, derive_seed(cfg.seed, {kEvalStream, 1}));
  result.train_eval_indices =
      pick_subset(train.size(), cfg.train_eval_subset, derive_seed(cfg.seed, {kEvalStream, 2}));
  const auto& train_indices = result.train_eval_indices;

  auto record = [&](std::size_t step) {
    PeftModel snap = model.snapshot();
    TrackRecord rec;
    rec.step = step;
    evaluate_record(rec, snap, train, test, cfg, train_indices, result.eval_indices);
    if (on_record) on_record(rec, snap);
    result.records.push_back(std::move(rec));
  };

  auto trainable = model.trainable();
  AdamW opt(cfg.optimizer);
  Rng rng(derive_seed(cfg.seed, {kTrainStream}));
  Classifier f = model.classifier();
  std::vector<std::size_t> batch(std::min(cfg.batch_size, train.size()));
  std::size_t next = 0;
  for (std::size_t step = 0;; ++step) {
    if (next < schedule.size() && schedule[next] == step) {
      try {
        record(step);
      } catch (const AttackError&) {
        // Finite weights whose outputs overflow: the run has diverged.
        result.diverged = true;
        result.diverged_step = step;
        break;
      }
      ++next;
    }
    if (step == cfg.total_steps) break;
    for (auto& i : batch) i = uniform_index(rng, train.size());
    try {
      train_step(f, trainable, train.images(batch), train.labels_of(batch), opt);
    } catch (const DivergenceError&) {
      result.diverged = true;
      result.diverged_step = step + 1;
      break;
    }
  }
  return result;
}

Peak detect_peak(const std::vector<TrackRecord>& records, const std::string& key) {
  if (records.size() < 3) throw AnalysisError("peak detection needs at least 3 records");
  Peak p;
  p.peak_value = records[0].value(key);
  for (std::size_t i = 1; i < records.size(); ++i) {
    const double v = records[i].value(key);
    if (v > p.peak_value) {
      p.peak_value = v;
      p.peak_index = i;
    }
  }
  p.peak_step = records[p.peak_index].step;
  p.final_value = records.back().value(key);
  return p;
}

}  // namespace ftlab
