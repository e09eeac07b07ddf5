#pragma once

// Seven fine-tuning strategies attached to a VisionTransformer, plus the
// information-location x mechanism decomposition registry.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ftlab/model.hpp"

namespace ftlab {

enum class Method { FullFT, LinearProbe, LoRA, BitFit, Adapter, Compacter, IA3 };

std::string to_string(Method m);
Method parse_method(const std::string& name);  // ConfigError on unknown names
const std::vector<Method>& all_methods();

enum class InfoLocation { Attn, FFN, Representation, Bias };
enum class Mechanism { ProjectionLayers, MatrixReparam, ElementwiseMult, DirectUpdate };

struct Decomposition {
  std::set<InfoLocation> location;
  std::set<Mechanism> mechanism;
  bool operator==(const Decomposition&) const = default;
};

// Registry row for the five PEFT methods; nullopt for FullFT and LinearProbe,
// which the registry does not cover.
std::optional<Decomposition> decomposition(Method m);
// Header plus one row per PEFT method, 1/0 per column.
std::string decomposition_csv();

enum class Init { Identity, Random };

struct PeftSpec {
  Method method = Method::LoRA;
  std::size_t rank = 4;  // LoRA
  double lora_alpha = 8.0;
  std::size_t reduction_factor = 8;  // Adapter, Compacter
  std::size_t kron_factors = 4;      // Compacter
  // Target sites; empty selects the method's standard set. Tokens: W_Q,
  // W_K, W_V, W_O, FFN.
  std::vector<std::string> locations;
  Init init = Init::Identity;
  // The downstream classification head is trained alongside the method's
  // own tensors. LinearProbe and FullFT ignore this flag.
  bool train_head = true;

  void validate(const ModelConfig& cfg) const;
  std::vector<std::string> effective_locations() const;
};

std::vector<std::string> valid_locations(Method m);
std::vector<std::string> default_locations(Method m);

/// Tensors a method adds to the host and the hooks that route through them.
class Attachment : public ForwardHooks {
 public:
  Attachment(const PeftSpec& spec, const ModelConfig& cfg, std::uint64_t seed);
  Attachment(const PeftSpec& spec, const ModelConfig& cfg, ParamStore params);

  const PeftSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Tensor projection(std::size_t block, Site site, const Tensor& input, Tensor base) const override;
  Tensor sublayer(std::size_t block, Sublayer which, Tensor out) const override;

  // Compacter projection [in x out] = sum_i A_i kron (s_i t_i^T).
  Tensor compacter_weight(const std::string& prefix, std::size_t in, std::size_t out) const;

  Attachment clone(bool requires_grad) const;

  static std::string site_token(Site s);

 private:
  bool has_location(const std::string& token) const;
  Tensor bottleneck(const std::string& prefix, Tensor out) const;

  PeftSpec spec_;
  ModelConfig cfg_;
  std::set<std::string> locations_;
  ParamStore params_;
};

/// Host model plus attachment, with the trainable set resolved.
class PeftModel {
 public:
  // Deep-copies `base`, attaches `spec`, and sets requires_grad so that only
  // the trainable set participates in differentiation.
  PeftModel(const VisionTransformer& base, const PeftSpec& spec, std::uint64_t seed);
  // Rebuilds from stored tensors (checkpoints, snapshots); no copy.
  PeftModel(VisionTransformer base, Attachment attachment);

  const VisionTransformer& base() const { return base_; }
  VisionTransformer& base() { return base_; }
  const Attachment& attachment() const { return attachment_; }
  Attachment& attachment() { return attachment_; }
  const PeftSpec& spec() const { return attachment_.spec(); }

  Tensor forward(const Tensor& images) const;
  Classifier classifier() const;

  // Base tensors under their own names, attachment tensors prefixed "peft.".
  ParamStore all_params() const;
  std::vector<NamedTensor> trainable();
  const std::vector<std::string>& trainable_names() const { return trainable_names_; }
  std::vector<std::string> base_trainable_names() const;

  std::size_t total_parameters() const;
  std::size_t trainable_parameters() const;
  // k / (k + |frozen|) = trainable / total.
  double trainable_fraction() const { return static_cast<double>(trainable_parameters()) / total_parameters(); }

  // Frozen deep copy for evaluation.
  PeftModel snapshot() const;

  // LoRA only: host model with (alpha/r) A B folded into each adapted weight.
  VisionTransformer merged() const;

 private:
  void resolve_trainable();

  VisionTransformer base_;
  Attachment attachment_;
  std::vector<std::string> trainable_names_;
};

}  // namespace ftlab
