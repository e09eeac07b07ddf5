#pragma once

// Synthetic upstream/downstream image tasks built from low-frequency class
// prototypes, and label-preserving domain shifts.

#include <cstdint>
#include <string>
#include <vector>

#include "ftlab/dataset.hpp"

namespace ftlab {

struct TaskSpec {
  std::size_t num_classes_upstream = 10;
  std::size_t num_classes_downstream = 50;
  // Downstream class -> upstream parent; empty selects c / (down / up).
  std::vector<std::size_t> class_tree;
  // RMS amplitude of a parent pattern around mid-gray (higher = easier).
  double separation = 0.2;
  // Child pattern amplitude relative to the parent's.
  double child_scale = 0.3;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  double noise_std = 0.15;
  std::size_t samples_per_class = 40;   // downstream train
  std::size_t test_per_class = 20;      // downstream test
  std::size_t upstream_per_class = 200;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError naming "task.<field>"
  std::size_t parent_of(std::size_t child) const;
};

struct Task {
  Dataset upstream;
  Dataset train;
  Dataset test;
  std::vector<std::string> warnings;
};

// Pure function of the spec: identical specs give bit-identical tasks.
Task make_task(const TaskSpec& spec);

// Prototype images in [0,1] for every upstream (parent) or downstream class.
std::vector<std::vector<double>> class_prototypes(const TaskSpec& spec, bool downstream);

enum class ShiftKind { Identity, Invert, EdgeSketch, StyleNoise, Blur, Contrast };

std::string to_string(ShiftKind k);
ShiftKind parse_shift(const std::string& name);  // ConfigError on unknown names
const std::vector<ShiftKind>& all_shifts();

struct DomainShift {
  ShiftKind kind = ShiftKind::Identity;
  double strength = 1.0;  // in [0, 1]; 0 is the identity for every kind
  std::uint64_t seed = 0;  // StyleNoise fields

  std::string name() const;  // e.g. "edge_sketch"
  void validate() const;
};

// Label-preserving pixel transform, clamped to [0,1].
Dataset apply_shift(const Dataset& data, const DomainShift& shift);

}  // namespace ftlab
