#include "ftlab/dataset.hpp"

#include "ftlab/error.hpp"

namespace ftlab {

Tensor Dataset::images(std::span<const std::size_t> indices, bool requires_grad) const {
  if (indices.empty()) throw DataError("empty image selection");
  const std::size_t n = sample_size();
  std::vector<double> out;
  out.reserve(indices.size() * n);
  for (auto i : indices) {
    if (i >= size()) throw DataError("sample index " + std::to_string(i) + " out of range");
    auto s = sample(i);
    out.insert(out.end(), s.begin(), s.end());
  }
  return Tensor::from({indices.size(), channels, height, width}, std::move(out), requires_grad);
}

Tensor Dataset::images(std::size_t begin, std::size_t end, bool requires_grad) const {
  if (begin >= end || end > size()) throw DataError("invalid image range");
  std::vector<double> out(pixels.begin() + begin * sample_size(), pixels.begin() + end * sample_size());
  return Tensor::from({end - begin, channels, height, width}, std::move(out), requires_grad);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{channels, height, width, num_classes, {}, {}};
  out.pixels.reserve(indices.size() * sample_size());
  for (auto i : indices) {
    auto s = sample(i);
    out.pixels.insert(out.pixels.end(), s.begin(), s.end());
    out.labels.push_back(labels.at(i));
  }
  return out;
}

}  // namespace ftlab
