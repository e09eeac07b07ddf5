#pragma once

// On-disk artifacts: model checkpoints, the tracking CSV log, and dataset
// exports. Binary files are little-endian doubles behind a JSON header.

#include <filesystem>
#include <string>
#include <vector>

#include "ftlab/config.hpp"
#include "ftlab/dataset.hpp"
#include "ftlab/peft.hpp"
#include "ftlab/tracking.hpp"

namespace ftlab {

// Layout: 8-byte magic "FTLBCKPT", u32 version, u64 header length, JSON
// header {model, peft, meta, tensors:[{name, shape}]}, then every tensor's
// values in header order.
void save_checkpoint(const std::filesystem::path& path, const PeftModel& model, const Json& meta = Json::object());
PeftModel load_checkpoint(const std::filesystem::path& path, Json* meta = nullptr);

// Host-only variant used for the pretraining cache.
void save_host(const std::filesystem::path& path, const VisionTransformer& model, const Json& meta = Json::object());
VisionTransformer load_host(const std::filesystem::path& path);

// `step,train_acc,test_acc,adv_acc,ood_<domain>...,train_loss,checkpoint_id`.
// adv_acc is empty when absent; values use round-trip precision.
void write_track_csv(const std::filesystem::path& path, const std::vector<TrackRecord>& records,
                     const std::vector<std::string>& ood_domains);
std::string track_csv(const std::vector<TrackRecord>& records, const std::vector<std::string>& ood_domains);
// ParseError with the offending line on malformed input; IoError if unreadable.
std::vector<TrackRecord> read_track_csv(const std::filesystem::path& path);
std::vector<TrackRecord> parse_track_csv(const std::string& text, const std::string& source);

// Writes <stem>.bin (pixels then labels as doubles) and <stem>.json
// (shape, class count, per-class counts, `meta`).
void export_dataset(const std::filesystem::path& stem, const Dataset& data, const Json& meta = Json::object());
Dataset import_dataset(const std::filesystem::path& stem);

// Writes `text` atomically (temporary file plus rename).
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Round-trip decimal representation used by every text artifact.
std::string format_double(double v);

}  // namespace ftlab
