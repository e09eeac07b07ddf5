#pragma once

// Evaluation schedules and the tracked fine-tuning loop: train with
// train_step, and at scheduled steps evaluate a frozen snapshot.

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ftlab/attack.hpp"
#include "ftlab/data.hpp"
#include "ftlab/peft.hpp"

namespace ftlab {

enum class ScheduleMode { Adversarial, Ood };

std::string to_string(ScheduleMode m);
ScheduleMode parse_schedule_mode(const std::string& name);  // "adversarial" | "ood"

inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

struct StrideRange {
  std::size_t start;  // exclusive, except that step 0 is always emitted
  std::size_t end;    // inclusive; kUnbounded for the open tail
  std::size_t stride;
  bool operator==(const StrideRange&) const = default;
};

/// Steps are the multiples of each range's stride inside (start, end], plus
/// step 0 and the final step.
struct Schedule {
  ScheduleMode mode = ScheduleMode::Adversarial;
  std::vector<StrideRange> ranges;

  static Schedule standard(ScheduleMode mode);
  static Schedule uniform(std::size_t stride, ScheduleMode mode = ScheduleMode::Adversarial);

  void validate() const;  // contiguous from 0, positive strides, open tail
  std::vector<std::size_t> steps(std::size_t total_steps) const;
};

std::vector<std::size_t> eval_steps(std::size_t total_steps, ScheduleMode mode);

struct TrackRecord {
  std::size_t step = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  std::optional<double> adv_acc;        // adversarial mode
  std::map<std::string, double> ood;   // ood mode, keyed by shift name
  double train_loss = 0.0;             // mean loss on the train evaluation subset
  std::string checkpoint_id;

  // "train_acc", "test_acc", "adv_acc", "train_loss", "ood_<domain>", or
  // "ood_mean" (average over domains).
  double value(const std::string& key) const;
};

struct TrackConfig {
  std::size_t total_steps = 1000;
  std::size_t batch_size = 32;
  AdamWConfig optimizer{1e-3, 1e-2};
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::standard(ScheduleMode::Adversarial);
  AttackConfig attack;
  std::vector<DomainShift> shifts;  // ood mode
  std::size_t eval_subset = 512;    // held-out samples for adversarial / OOD evaluation
  std::size_t train_eval_subset = 512;

  void validate() const;
};

struct TrackResult {
  std::vector<TrackRecord> records;
  std::vector<std::size_t> eval_indices;        // test-set subset used for robustness
  std::vector<std::size_t> train_eval_indices;  // train-set subset for train_acc / train_loss
  bool diverged = false;
  std::size_t diverged_step = 0;
};

// Called once per record with the frozen snapshot it was computed from.
using RecordCallback = std::function<void(TrackRecord& record, const PeftModel& snapshot)>;

// Robustness-side metrics for one record, computed on `snapshot`.
void evaluate_record(TrackRecord& rec, const PeftModel& snapshot, const Dataset& train, const Dataset& test,
                     const TrackConfig& cfg, const std::vector<std::size_t>& train_indices,
                     const std::vector<std::size_t>& eval_indices);

TrackResult run_tracked(PeftModel& model, const Dataset& train, const Dataset& test, const TrackConfig& cfg,
                        const RecordCallback& on_record = {});

struct Peak {
  std::size_t peak_index = 0;
  std::size_t peak_step = 0;
  double peak_value = 0.0;
  double final_value = 0.0;
  bool declined(double tau = 0.02) const { return peak_value - final_value > tau; }
};

// Earliest argmax of `key`; AnalysisError with fewer than 3 records.
Peak detect_peak(const std::vector<TrackRecord>& records, const std::string& key);

}  // namespace ftlab
