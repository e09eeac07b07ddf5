#include "ftlab/peft.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ftlab/error.hpp"
#include "ftlab/ops.hpp"
#include "ftlab/random.hpp"

namespace ftlab {

std::string to_string(Method m) {
  switch (m) {
    case Method::FullFT: return "FullFT";
    case Method::LinearProbe: return "LinearProbe";
    case Method::LoRA: return "LoRA";
    case Method::BitFit: return "BitFit";
    case Method::Adapter: return "Adapter";
    case Method::Compacter: return "Compacter";
    case Method::IA3: return "IA3";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : all_methods())
    if (to_string(m) == name) return m;
  throw ConfigError("peft.method", "unknown fine-tuning method '" + name + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::FullFT,  Method::LinearProbe, Method::LoRA, Method::BitFit,
                                           Method::Adapter, Method::Compacter,   Method::IA3};
  return methods;
}

std::optional<Decomposition> decomposition(Method m) {
  using L = InfoLocation;
  using M = Mechanism;
  switch (m) {
    case Method::LoRA: return Decomposition{{L::Attn}, {M::MatrixReparam}};
    case Method::IA3: return Decomposition{{L::Representation}, {M::ElementwiseMult}};
    case Method::Adapter: return Decomposition{{L::Representation}, {M::ProjectionLayers}};
    case Method::Compacter: return Decomposition{{L::Representation}, {M::ProjectionLayers, M::MatrixReparam}};
    case Method::BitFit: return Decomposition{{L::Attn, L::FFN, L::Bias}, {M::DirectUpdate}};
    case Method::FullFT:
    case Method::LinearProbe: return std::nullopt;
  }
  return std::nullopt;
}

std::string decomposition_csv() {
  std::ostringstream out;
  out << "method,attn,ffn,rep,bias,proj_layers,matrix_reparam,elementwise_mult,direct_update\n";
  for (Method m : {Method::LoRA, Method::IA3, Method::Adapter, Method::Compacter, Method::BitFit}) {
    auto d = *decomposition(m);
    out << to_string(m);
    for (auto l : {InfoLocation::Attn, InfoLocation::FFN, InfoLocation::Representation, InfoLocation::Bias})
      out << ',' << (d.location.count(l) ? 1 : 0);
    for (auto k : {Mechanism::ProjectionLayers, Mechanism::MatrixReparam, Mechanism::ElementwiseMult,
                   Mechanism::DirectUpdate})
      out << ',' << (d.mechanism.count(k) ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

std::vector<std::string> valid_locations(Method m) {
  switch (m) {
    case Method::LoRA: return {"W_Q", "W_K", "W_V", "W_O"};
    case Method::IA3: return {"W_K", "W_V", "FFN"};
    case Method::Adapter:
    case Method::Compacter: return {"W_O", "FFN"};
    default: return {};
  }
}

std::vector<std::string> default_locations(Method m) { return valid_locations(m); }

std::vector<std::string> PeftSpec::effective_locations() const {
  return locations.empty() ? default_locations(method) : locations;
}

void PeftSpec::validate(const ModelConfig& cfg) const {
  const auto valid = valid_locations(method);
  for (const auto& loc : locations)
    if (std::find(valid.begin(), valid.end(), loc) == valid.end())
      throw ConfigError("peft.locations", "unknown location '" + loc + "' for " + to_string(method));
  switch (method) {
    case Method::LoRA:
      if (rank < 1) throw ConfigError("peft.rank", "must be at least 1");
      if (rank > cfg.embed_dim)
        throw ConfigError("peft.rank", "rank " + std::to_string(rank) + " exceeds projection dimension " +
                                           std::to_string(cfg.embed_dim));
      if (!std::isfinite(lora_alpha)) throw ConfigError("peft.lora_alpha", "must be finite");
      break;
    case Method::Adapter:
    case Method::Compacter: {
      if (reduction_factor == 0 || cfg.embed_dim % reduction_factor != 0)
        throw ConfigError("peft.reduction_factor", "must divide embed_dim " + std::to_string(cfg.embed_dim));
      if (method == Method::Compacter) {
        const std::size_t bottleneck = cfg.embed_dim / reduction_factor;
        if (kron_factors == 0 || bottleneck % kron_factors != 0 || cfg.embed_dim % kron_factors != 0)
          throw ConfigError("peft.kron_factors", "must divide both the bottleneck (" + std::to_string(bottleneck) +
                                                     ") and embed_dim (" + std::to_string(cfg.embed_dim) + ")");
      }
      break;
    }
    default: break;
  }
}

namespace {

Tensor normal_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = truncated_normal(rng, std);
  return Tensor::from({rows, cols}, std::move(v));
}

Tensor ones_plus_noise(Rng& rng, std::size_t n, bool random) {
  std::vector<double> v(n, 1.0);
  if (random)
    for (auto& x : v) x += truncated_normal(rng, 0.02);
  return Tensor::from({n}, std::move(v));
}

std::string block_key(std::size_t block) { return std::to_string(block); }

}  // namespace

std::string Attachment::site_token(Site s) {
  switch (s) {
    case Site::Query: return "W_Q";
    case Site::Key: return "W_K";
    case Site::Value: return "W_V";
    case Site::Output: return "W_O";
    case Site::FfnInner: return "FFN";
  }
  return "?";
}

bool Attachment::has_location(const std::string& token) const { return locations_.count(token) > 0; }

Attachment::Attachment(const PeftSpec& spec, const ModelConfig& cfg, std::uint64_t seed) : spec_(spec), cfg_(cfg) {
  spec_.validate(cfg_);
  for (const auto& l : spec_.effective_locations()) locations_.insert(l);
  Rng rng(derive_seed(seed, {0x70656674, static_cast<std::uint64_t>(spec_.method)}));
  const bool random = spec_.init == Init::Random;
  const std::size_t d = cfg_.embed_dim;

  switch (spec_.method) {
    case Method::LoRA: {
      const std::size_t r = spec_.rank;
      for (std::size_t b = 0; b < cfg_.depth; ++b)
        for (const auto& tok : valid_locations(Method::LoRA)) {
          if (!has_location(tok)) continue;
          const auto pre = "lora." + block_key(b) + "." + tok;
          params_.add(pre + ".A", normal_matrix(rng, d, r, 1.0 / std::sqrt(static_cast<double>(d))));
          params_.add(pre + ".B", random ? normal_matrix(rng, r, d, 0.02) : Tensor::zeros({r, d}));
        }
      break;
    }
    case Method::IA3:
      for (std::size_t b = 0; b < cfg_.depth; ++b) {
        const auto pre = "ia3." + block_key(b);
        if (has_location("W_K")) params_.add(pre + ".l_k", ones_plus_noise(rng, d, random));
        if (has_location("W_V")) params_.add(pre + ".l_v", ones_plus_noise(rng, d, random));
        if (has_location("FFN")) params_.add(pre + ".l_ff", ones_plus_noise(rng, cfg_.ffn_hidden(), random));
      }
      break;
    case Method::Adapter: {
      const std::size_t m = d / spec_.reduction_factor;
      for (std::size_t b = 0; b < cfg_.depth; ++b)
        for (const auto& tok : valid_locations(Method::Adapter)) {
          if (!has_location(tok)) continue;
          const auto pre = "adapter." + block_key(b) + "." + tok;
          params_.add(pre + ".ln.gain", Tensor::full({d}, 1.0));
          params_.add(pre + ".ln.bias", Tensor::zeros({d}));
          params_.add(pre + ".down.weight", normal_matrix(rng, d, m, 0.02));
          params_.add(pre + ".down.bias", Tensor::zeros({m}));
          params_.add(pre + ".up.weight", random ? normal_matrix(rng, m, d, 0.02) : Tensor::zeros({m, d}));
          params_.add(pre + ".up.bias", Tensor::zeros({d}));
        }
      break;
    }
    case Method::Compacter: {
      const std::size_t n = spec_.kron_factors, m = d / spec_.reduction_factor;
      // A_i is shared by every projection in every block. With A ~ N(0,1)
      // and s, t ~ N(0, 0.1) the composed weight has std sqrt(n) * 0.01.
      for (std::size_t i = 0; i < n; ++i) params_.add("compacter.A." + std::to_string(i), normal_matrix(rng, n, n, 1.0));
      for (std::size_t b = 0; b < cfg_.depth; ++b)
        for (const auto& tok : valid_locations(Method::Compacter)) {
          if (!has_location(tok)) continue;
          const auto pre = "compacter." + block_key(b) + "." + tok;
          params_.add(pre + ".ln.gain", Tensor::full({d}, 1.0));
          params_.add(pre + ".ln.bias", Tensor::zeros({d}));
          for (std::size_t i = 0; i < n; ++i) {
            const auto idx = std::to_string(i);
            params_.add(pre + ".down.s." + idx, normal_matrix(rng, d / n, 1, 0.1));
            params_.add(pre + ".down.t." + idx, normal_matrix(rng, 1, m / n, 0.1));
          }
          params_.add(pre + ".down.bias", Tensor::zeros({m}));
          for (std::size_t i = 0; i < n; ++i) {
            const auto idx = std::to_string(i);
            params_.add(pre + ".up.s." + idx, random ? normal_matrix(rng, m / n, 1, 0.1) : Tensor::zeros({m / n, 1}));
            params_.add(pre + ".up.t." + idx, normal_matrix(rng, 1, d / n, 0.1));
          }
          params_.add(pre + ".up.bias", Tensor::zeros({d}));
        }
      break;
    }
    case Method::FullFT:
    case Method::LinearProbe:
    case Method::BitFit: break;
  }
}

Attachment::Attachment(const PeftSpec& spec, const ModelConfig& cfg, ParamStore params)
    : spec_(spec), cfg_(cfg), params_(std::move(params)) {
  spec_.validate(cfg_);
  for (const auto& l : spec_.effective_locations()) locations_.insert(l);
  Attachment reference(spec_, cfg_, 0);
  for (const auto& [name, t] : reference.params().entries()) {
    if (!params_.contains(name)) throw DataError("missing attachment tensor " + name);
    if (params_.get(name).shape() != t.shape()) throw DimensionError("attachment tensor " + name + " has wrong shape");
  }
  if (params_.size() != reference.params().size()) throw DataError("unexpected extra attachment tensors");
}

Attachment Attachment::clone(bool requires_grad) const { return Attachment(spec_, cfg_, params_.clone(requires_grad)); }

Tensor Attachment::projection(std::size_t block, Site site, const Tensor& input, Tensor base) const {
  const auto tok = site_token(site);
  if (spec_.method == Method::LoRA && site != Site::FfnInner && has_location(tok)) {
    const auto pre = "lora." + block_key(block) + "." + tok;
    const double s = spec_.lora_alpha / static_cast<double>(spec_.rank);
    Tensor delta = ops::matmul(ops::matmul(input, params_.get(pre + ".A")), params_.get(pre + ".B"));
    return ops::add(base, ops::scale(delta, s));
  }
  if (spec_.method == Method::IA3) {
    const auto pre = "ia3." + block_key(block);
    if (site == Site::Key && has_location("W_K")) return ops::mul_rowwise(base, params_.get(pre + ".l_k"));
    if (site == Site::Value && has_location("W_V")) return ops::mul_rowwise(base, params_.get(pre + ".l_v"));
    if (site == Site::FfnInner && has_location("FFN")) return ops::mul_rowwise(base, params_.get(pre + ".l_ff"));
  }
  return base;
}

Tensor Attachment::compacter_weight(const std::string& prefix, std::size_t in, std::size_t out) const {
  const std::size_t n = spec_.kron_factors;
  Tensor w;
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = std::to_string(i);
    Tensor rank_one = ops::matmul(params_.get(prefix + ".s." + idx), params_.get(prefix + ".t." + idx));
    Tensor term = ops::kron(params_.get("compacter.A." + idx), rank_one);
    w = w.defined() ? ops::add(w, term) : term;
  }
  if (w.shape() != Shape{in, out}) throw DimensionError("compacter weight shape " + shape_str(w.shape()));
  return w;
}

Tensor Attachment::bottleneck(const std::string& prefix, Tensor out) const {
  const std::size_t d = cfg_.embed_dim, m = d / spec_.reduction_factor;
  Tensor h = ops::layer_norm(out, params_.get(prefix + ".ln.gain"), params_.get(prefix + ".ln.bias"));
  Tensor down, up;
  if (spec_.method == Method::Adapter) {
    down = params_.get(prefix + ".down.weight");
    up = params_.get(prefix + ".up.weight");
  } else {
    down = compacter_weight(prefix + ".down", d, m);
    up = compacter_weight(prefix + ".up", m, d);
  }
  Tensor z = ops::gelu(ops::linear(h, down, params_.get(prefix + ".down.bias")));
  return ops::add(out, ops::linear(z, up, params_.get(prefix + ".up.bias")));
}

Tensor Attachment::sublayer(std::size_t block, Sublayer which, Tensor out) const {
  if (spec_.method != Method::Adapter && spec_.method != Method::Compacter) return out;
  const std::string tok = which == Sublayer::Attention ? "W_O" : "FFN";
  if (!has_location(tok)) return out;
  const std::string family = spec_.method == Method::Adapter ? "adapter." : "compacter.";
  return bottleneck(family + block_key(block) + "." + tok, std::move(out));
}

PeftModel::PeftModel(const VisionTransformer& base, const PeftSpec& spec, std::uint64_t seed)
    : base_(base.config(), base.params().clone(false)), attachment_(spec, base.config(), seed) {
  resolve_trainable();
  const auto trainable_base = base_trainable_names();
  for (const auto& name : base_.params().names()) {
    bool on = std::find(trainable_base.begin(), trainable_base.end(), name) != trainable_base.end();
    base_.params().get(name).set_requires_grad(on);
  }
  attachment_.params().set_requires_grad(true);
}

PeftModel::PeftModel(VisionTransformer base, Attachment attachment)
    : base_(std::move(base)), attachment_(std::move(attachment)) {
  resolve_trainable();
}

std::vector<std::string> PeftModel::base_trainable_names() const {
  const auto& spec = attachment_.spec();
  const bool head = spec.train_head || spec.method == Method::LinearProbe;
  std::vector<std::string> names;
  for (const auto& [name, t] : base_.params().entries()) {
    (void)t;
    const bool is_head = name.rfind("head.", 0) == 0;
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    bool on = false;
    switch (spec.method) {
      case Method::FullFT: on = true; break;
      case Method::BitFit: on = is_bias || (head && is_head); break;
      default: on = head && is_head; break;
    }
    if (on) names.push_back(name);
  }
  return names;
}

void PeftModel::resolve_trainable() {
  trainable_names_ = base_trainable_names();
  for (const auto& name : attachment_.params().names()) trainable_names_.push_back("peft." + name);
}

Tensor PeftModel::forward(const Tensor& images) const { return base_.forward(images, &attachment_); }

Classifier PeftModel::classifier() const {
  return [this](const Tensor& images) { return forward(images); };
}

ParamStore PeftModel::all_params() const {
  ParamStore out;
  for (const auto& [name, t] : base_.params().entries()) out.add(name, t);
  for (const auto& [name, t] : attachment_.params().entries()) out.add("peft." + name, t);
  return out;
}

std::vector<NamedTensor> PeftModel::trainable() {
  std::vector<NamedTensor> out;
  for (const auto& name : trainable_names_) {
    if (name.rfind("peft.", 0) == 0)
      out.emplace_back(name, attachment_.params().get(name.substr(5)));
    else
      out.emplace_back(name, base_.params().get(name));
  }
  return out;
}

std::size_t PeftModel::total_parameters() const {
  return base_.params().parameter_count() + attachment_.params().parameter_count();
}

std::size_t PeftModel::trainable_parameters() const {
  auto all = all_params();
  std::size_t n = 0;
  for (const auto& name : trainable_names_) n += all.get(name).numel();
  return n;
}

PeftModel PeftModel::snapshot() const { return PeftModel(base_.snapshot(), attachment_.clone(false)); }

VisionTransformer PeftModel::merged() const {
  if (spec().method != Method::LoRA) throw ContractError("merged() is only defined for LoRA");
  VisionTransformer out = base_.snapshot();
  const double s = spec().lora_alpha / static_cast<double>(spec().rank);
  const std::pair<const char*, const char*> sites[] = {
      {"W_Q", "attn.q"}, {"W_K", "attn.k"}, {"W_V", "attn.v"}, {"W_O", "attn.o"}};
  const auto locs = spec().effective_locations();
  for (std::size_t b = 0; b < out.config().depth; ++b)
    for (const auto& [tok, proj] : sites) {
      if (std::find(locs.begin(), locs.end(), tok) == locs.end()) continue;
      const auto pre = "lora." + std::to_string(b) + "." + tok;
      Tensor delta = ops::matmul(attachment_.params().get(pre + ".A"), attachment_.params().get(pre + ".B"));
      auto w = out.params().get(VisionTransformer::block_prefix(b) + proj + ".weight").mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += s * delta.data()[i];
    }
  return out;
}

}  // namespace ftlab
