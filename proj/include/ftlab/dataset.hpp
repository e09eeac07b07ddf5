#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ftlab/tensor.hpp"

namespace ftlab {

/// Labeled images stored contiguously as [N x C x H x W] in [0, 1].
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  std::vector<double> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return channels * height * width; }
  std::span<const double> sample(std::size_t i) const { return {pixels.data() + i * sample_size(), sample_size()}; }
  std::span<double> sample(std::size_t i) { return {pixels.data() + i * sample_size(), sample_size()}; }

  Tensor images(std::span<const std::size_t> indices, bool requires_grad = false) const;
  Tensor images(std::size_t begin, std::size_t end, bool requires_grad = false) const;
  std::vector<int> labels_of(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

}  // namespace ftlab
