#pragma once

// Toy vision transformer: patch embedding, class token and learned position
// embedding, N pre-LN blocks {LN, multi-head attention, LN, FFN} with
// residuals, final LN and a classification head on the class token.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ftlab/dataset.hpp"
#include "ftlab/tensor.hpp"

namespace ftlab {

struct ModelConfig {
  std::size_t depth = 4;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t patch_size = 4;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t num_classes = 10;
  std::size_t ffn_ratio = 4;

  void validate() const;  // throws ConfigError naming the field

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t seq_len() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t ffn_hidden() const { return ffn_ratio * embed_dim; }

  bool operator==(const ModelConfig&) const = default;
};

using NamedTensor = std::pair<std::string, Tensor>;

/// Insertion-ordered name -> tensor table.
class ParamStore {
 public:
  void add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  void set(const std::string& name, Tensor tensor);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  // Deep copy with every tensor's requires_grad set to `requires_grad`.
  ParamStore clone(bool requires_grad = false) const;
  void set_requires_grad(bool flag);

 private:
  std::vector<NamedTensor> entries_;
};

enum class Site { Query, Key, Value, Output, FfnInner };
enum class Sublayer { Attention, Ffn };

/// Extension points where fine-tuning attachments modify the forward pass.
class ForwardHooks {
 public:
  virtual ~ForwardHooks() = default;
  // `base` is x.W + b for the projection at `site`; FfnInner receives the
  // post-activation hidden layer (input == base).
  virtual Tensor projection(std::size_t block, Site site, const Tensor& input, Tensor base) const {
    (void)block;
    (void)site;
    (void)input;
    return base;
  }
  // Output of the attention (after W_O) or FFN sublayer, before the residual add.
  virtual Tensor sublayer(std::size_t block, Sublayer which, Tensor out) const {
    (void)block;
    (void)which;
    return out;
  }
};

// Raster-order patch extraction. images: [C x H x W] or [B x C x H x W];
// result: [B*P x C*p*p] with values ordered (channel, row, col).
Tensor patchify(const Tensor& images, const ModelConfig& cfg);

class VisionTransformer {
 public:
  // Truncated-normal(0.02) weights, zero biases, unit LN gains.
  VisionTransformer(ModelConfig cfg, std::uint64_t seed);
  VisionTransformer(ModelConfig cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Tensor forward(const Tensor& images, const ForwardHooks* hooks = nullptr) const;
  // x: [B*S x D] normalized block input.
  Tensor attention(const Tensor& x, std::size_t block, const ForwardHooks* hooks = nullptr) const;

  // Replaces the classification head with a freshly initialized one.
  void reset_head(std::size_t num_classes, std::uint64_t seed);

  // Independent copy with gradients disabled.
  VisionTransformer snapshot() const;

  static std::string block_prefix(std::size_t block) { return "blocks." + std::to_string(block) + "."; }

 private:
  Tensor project(const Tensor& x, std::size_t block, Site site, const std::string& name,
                 const ForwardHooks* hooks) const;

  ModelConfig cfg_;
  ParamStore params_;
};

// Names of every bias tensor (".bias" suffix), including LN biases.
std::vector<std::string> bias_names(const ParamStore& params);

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive moments with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(std::span<NamedTensor> params);
  std::size_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::pair<std::string, Moments>> state_;
};

using Classifier = std::function<Tensor(const Tensor& images)>;

// One optimizer update over `trainable`; returns the batch loss.
double train_step(const Classifier& forward, std::span<NamedTensor> trainable, const Tensor& images,
                  std::span<const int> labels, AdamW& optimizer);

std::vector<int> predict(const Classifier& forward, const Tensor& images);
double accuracy(const Classifier& forward, const Dataset& data, std::size_t batch_size = 256);

struct PretrainConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  AdamWConfig optimizer{1e-3, 1e-2};
  std::uint64_t seed = 0;
};

// Trains every parameter on `data`; returns the per-step losses.
std::vector<double> pretrain(VisionTransformer& model, const Dataset& data, const PretrainConfig& cfg);

}  // namespace ftlab
