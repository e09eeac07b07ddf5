#include "ftlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ftlab/error.hpp"
#include "ftlab/random.hpp"

namespace ftlab {

void TaskSpec::validate() const {
  if (num_classes_upstream < 1) throw ConfigError("task.num_classes_upstream", "must be at least 1");
  if (num_classes_downstream < 2) throw ConfigError("task.num_classes_downstream", "must be at least 2");
  if (class_tree.empty()) {
    if (num_classes_downstream % num_classes_upstream != 0)
      throw ConfigError("task.class_tree", "default tree needs num_classes_upstream to divide num_classes_downstream");
  } else {
    if (class_tree.size() != num_classes_downstream)
      throw ConfigError("task.class_tree", "needs one parent per downstream class");
    for (auto p : class_tree)
      if (p >= num_classes_upstream) throw ConfigError("task.class_tree", "parent index out of range");
  }
  if (!(separation > 0.0) || !std::isfinite(separation)) throw ConfigError("task.separation", "must be positive");
  if (!(child_scale >= 0.0)) throw ConfigError("task.child_scale", "must be >= 0");
  if (!(noise_std >= 0.0)) throw ConfigError("task.noise_std", "must be >= 0");
  if (image_size < 2) throw ConfigError("task.image_size", "must be at least 2");
  if (channels < 1) throw ConfigError("task.channels", "must be at least 1");
  if (samples_per_class < 1) throw ConfigError("task.samples_per_class", "must be at least 1");
  if (test_per_class < 1) throw ConfigError("task.test_per_class", "must be at least 1");
  if (upstream_per_class < 1) throw ConfigError("task.upstream_per_class", "must be at least 1");
}

std::size_t TaskSpec::parent_of(std::size_t child) const {
  if (!class_tree.empty()) return class_tree.at(child);
  return child / (num_classes_downstream / num_classes_upstream);
}

namespace {

constexpr std::uint64_t kParentStream = 0x706172;
constexpr std::uint64_t kChildStream = 0x6368;
constexpr std::uint64_t kSampleStream = 0x736d70;

// Sum of random planar cosines with spatial frequency at most 2 cycles per
// image, independently per channel, scaled to unit RMS.
std::vector<double> low_frequency_pattern(Rng& rng, std::size_t channels, std::size_t size) {
  const std::size_t waves = 4;
  std::vector<double> out(channels * size * size, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t w = 0; w < waves; ++w) {
      int fx = 0, fy = 0;
      while (fx == 0 && fy == 0) {
        fx = static_cast<int>(uniform_index(rng, 5)) - 2;
        fy = static_cast<int>(uniform_index(rng, 3));
      }
      const double phase = 2.0 * std::numbers::pi * uniform01(rng);
      const double amp = standard_normal(rng);
      for (std::size_t u = 0; u < size; ++u)
        for (std::size_t v = 0; v < size; ++v)
          out[(c * size + u) * size + v] +=
              amp * std::cos(2.0 * std::numbers::pi * (fx * double(v) + fy * double(u)) / double(size) + phase);
    }
  double ss = 0.0;
  for (double x : out) ss += x * x;
  const double rms = std::sqrt(ss / double(out.size()));
  if (rms > 0.0)
    for (double& x : out) x /= rms;
  return out;
}

std::vector<std::vector<double>> patterns(const TaskSpec& spec, std::uint64_t stream, std::size_t count) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(spec.seed, {stream, i}));
    out.push_back(low_frequency_pattern(rng, spec.channels, spec.image_size));
  }
  return out;
}

Dataset sample_classes(const TaskSpec& spec, const std::vector<std::vector<double>>& protos, std::size_t per_class,
                       std::uint64_t split) {
  Dataset d;
  d.channels = spec.channels;
  d.height = d.width = spec.image_size;
  d.num_classes = protos.size();
  const std::size_t n = d.sample_size();
  d.pixels.reserve(protos.size() * per_class * n);
  // Interleave classes so every prefix is label-balanced.
  std::vector<Rng> streams;
  for (std::size_t c = 0; c < protos.size(); ++c) streams.emplace_back(derive_seed(spec.seed, {kSampleStream, split, c}));
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < protos.size(); ++c) {
      for (std::size_t j = 0; j < n; ++j)
        d.pixels.push_back(std::clamp(protos[c][j] + spec.noise_std * standard_normal(streams[c]), 0.0, 1.0));
      d.labels.push_back(static_cast<int>(c));
    }
  return d;
}

}  // namespace

std::vector<std::vector<double>> class_prototypes(const TaskSpec& spec, bool downstream) {
  spec.validate();
  auto parents = patterns(spec, kParentStream, spec.num_classes_upstream);
  std::vector<std::vector<double>> out;
  if (!downstream) {
    for (auto& p : parents) {
      for (double& x : p) x = std::clamp(0.5 + spec.separation * x, 0.0, 1.0);
      out.push_back(std::move(p));
    }
    return out;
  }
  auto children = patterns(spec, kChildStream, spec.num_classes_downstream);
  for (std::size_t c = 0; c < spec.num_classes_downstream; ++c) {
    const auto& parent = parents[spec.parent_of(c)];
    std::vector<double> proto(parent.size());
    for (std::size_t j = 0; j < proto.size(); ++j)
      proto[j] = std::clamp(0.5 + spec.separation * (parent[j] + spec.child_scale * children[c][j]), 0.0, 1.0);
    out.push_back(std::move(proto));
  }
  return out;
}

Task make_task(const TaskSpec& spec) {
  spec.validate();
  Task t;
  auto up = class_prototypes(spec, false);
  auto down = class_prototypes(spec, true);
  t.upstream = sample_classes(spec, up, spec.upstream_per_class, 0);
  t.train = sample_classes(spec, down, spec.samples_per_class, 1);
  t.test = sample_classes(spec, down, spec.test_per_class, 2);
  // Flag prototypes that are indistinguishable at pixel precision.
  double closest = INFINITY;
  for (std::size_t a = 0; a < down.size(); ++a)
    for (std::size_t b = a + 1; b < down.size(); ++b) {
      double dist = 0.0;
      for (std::size_t j = 0; j < down[a].size(); ++j) dist = std::max(dist, std::abs(down[a][j] - down[b][j]));
      closest = std::min(closest, dist);
    }
  if (closest < 1e-6)
    t.warnings.push_back("downstream prototypes coincide (max pixel gap " + std::to_string(closest) +
                         "); classes are not separable");
  return t;
}

std::string to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::Identity: return "identity";
    case ShiftKind::Invert: return "invert";
    case ShiftKind::EdgeSketch: return "edge_sketch";
    case ShiftKind::StyleNoise: return "style_noise";
    case ShiftKind::Blur: return "blur";
    case ShiftKind::Contrast: return "contrast";
  }
  return "?";
}

ShiftKind parse_shift(const std::string& name) {
  for (auto k : all_shifts())
    if (to_string(k) == name) return k;
  throw ConfigError("shift.kind", "unknown domain shift '" + name + "'");
}

const std::vector<ShiftKind>& all_shifts() {
  static const std::vector<ShiftKind> kinds{ShiftKind::Identity,   ShiftKind::Invert, ShiftKind::EdgeSketch,
                                            ShiftKind::StyleNoise, ShiftKind::Blur,   ShiftKind::Contrast};
  return kinds;
}

std::string DomainShift::name() const { return to_string(kind); }

void DomainShift::validate() const {
  if (!(strength >= 0.0 && strength <= 1.0)) throw ConfigError("shift.strength", "must lie in [0, 1]");
}

namespace {

using Image = std::span<double>;

void edge_sketch(Image img, std::size_t channels, std::size_t h, std::size_t w, double s) {
  std::vector<double> mag(img.size());
  double peak = 0.0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        auto at = [&](std::size_t uu, std::size_t vv) { return img[(c * h + uu) * w + vv]; };
        const double gx = at(u, std::min(v + 1, w - 1)) - at(u, v > 0 ? v - 1 : 0);
        const double gy = at(std::min(u + 1, h - 1), v) - at(u > 0 ? u - 1 : 0, v);
        const double m = std::hypot(gx, gy);
        mag[(c * h + u) * w + v] = m;
        peak = std::max(peak, m);
      }
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double sketch = 1.0 - (peak > 0.0 ? mag[i] / peak : 0.0);
    img[i] = (1.0 - s) * img[i] + s * sketch;
  }
}

void blur(Image img, std::size_t channels, std::size_t h, std::size_t w, double s) {
  const double sigma = 2.0 * s;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= total;
  std::vector<double> tmp(img.size());
  auto clampi = [](int x, std::size_t n) { return static_cast<std::size_t>(std::clamp(x, 0, static_cast<int>(n) - 1)); };
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * img[(c * h + u) * w + clampi(int(v) + i, w)];
        tmp[(c * h + u) * w + v] = acc;
      }
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp[(c * h + clampi(int(u) + i, h)) * w + v];
        img[(c * h + u) * w + v] = acc;
      }
  }
}

}  // namespace

Dataset apply_shift(const Dataset& data, const DomainShift& shift) {
  shift.validate();
  Dataset out = data;
  const double s = shift.strength;
  if (s == 0.0 || shift.kind == ShiftKind::Identity) return out;
  const std::size_t ch = data.channels, h = data.height, w = data.width;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Image img = out.sample(i);
    switch (shift.kind) {
      case ShiftKind::Invert:
        for (double& x : img) x = (1.0 - s) * x + s * (1.0 - x);
        break;
      case ShiftKind::EdgeSketch: edge_sketch(img, ch, h, w, s); break;
      case ShiftKind::StyleNoise: {
        Rng rng(derive_seed(shift.seed, {0x7374796c, i}));
        auto field = low_frequency_pattern(rng, ch, h);
        for (std::size_t j = 0; j < img.size(); ++j) img[j] += 0.3 * s * field[j];
        break;
      }
      case ShiftKind::Blur:
        if (h != w) throw DataError("blur expects square images");
        blur(img, ch, h, w, s);
        break;
      case ShiftKind::Contrast:
        for (double& x : img) x = 0.5 + (1.0 - s) * (x - 0.5);
        break;
      case ShiftKind::Identity: break;
    }
    for (double& x : img) x = std::clamp(x, 0.0, 1.0);
  }
  return out;
}

}  // namespace ftlab
