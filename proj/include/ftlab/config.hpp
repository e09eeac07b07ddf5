#pragma once

// Experiment configuration: one JSON document with a section per module.
// Parsing is strict: unknown keys and wrong types raise ConfigError naming
// the dotted key.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "ftlab/attack.hpp"
#include "ftlab/data.hpp"
#include "ftlab/model.hpp"
#include "ftlab/peft.hpp"
#include "ftlab/tracking.hpp"

namespace ftlab {

using Json = nlohmann::ordered_json;

struct TrainingConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  std::size_t batch_size = 32;
  std::size_t total_steps = 2000;
};

struct TrackingSection {
  ScheduleMode mode = ScheduleMode::Adversarial;
  // Empty selects the standard stride table for `mode`.
  std::vector<StrideRange> strides;
  std::vector<DomainShift> shifts;
  std::size_t eval_subset = 256;
  std::size_t train_eval_subset = 256;
};

struct OutputSection {
  std::string dir = "runs/default";
  bool checkpoints = true;
  bool export_data = false;
};

struct ExperimentConfig {
  std::string label = "default";  // task label used to group runs in tables
  std::uint64_t seed = 0;         // fine-tuning: attachment init, batches, attacks
  // image_size, channels and num_classes follow the task.
  ModelConfig model{2, 32, 4, 4, 16, 3, 10, 4};
  PretrainConfig pretrain{1500, 32, {1e-3, 1e-2}, 0};  // seed also initializes the host
  PeftSpec peft;
  TaskSpec task;
  AttackConfig attack{8.0 / 255.0, 2.0 / 255.0, 15};
  TrainingConfig training;
  TrackingSection tracking;
  OutputSection output;

  // Host architecture for pretraining (upstream classes) and fine-tuning.
  ModelConfig upstream_model() const;
  ModelConfig downstream_model() const;
  TrackConfig track_config() const;

  void validate() const;
};

ExperimentConfig config_from_json(const Json& doc);
Json config_to_json(const ExperimentConfig& cfg);

// Reads and parses a config file; IoError if unreadable, ConfigError on
// malformed JSON or invalid content.
ExperimentConfig load_config(const std::string& path);
// The raw document, for callers that apply overrides before parsing.
Json load_config_document(const std::string& path);

// Sets a dotted key ("training.lr") in a config document. The value is read
// as JSON when it parses, otherwise as a string.
void set_config_value(Json& doc, const std::string& dotted_key, const std::string& value);

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j);
Json to_json(const PeftSpec& spec);
PeftSpec peft_spec_from_json(const Json& j, const std::string& section = "peft");

}  // namespace ftlab
