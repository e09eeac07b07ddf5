#include "ftlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "ftlab/error.hpp"
#include "ftlab/ops.hpp"
#include "ftlab/random.hpp"

namespace ftlab {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw ConfigError(std::string("model.") + field, "must be a positive integer");
  };
  positive(depth, "depth");
  positive(embed_dim, "embed_dim");
  positive(heads, "heads");
  positive(patch_size, "patch_size");
  positive(image_size, "image_size");
  positive(channels, "channels");
  positive(num_classes, "num_classes");
  positive(ffn_ratio, "ffn_ratio");
  if (embed_dim % heads != 0) throw ConfigError("model.heads", "embed_dim must be divisible by heads");
  if (image_size % patch_size != 0) throw ConfigError("model.patch_size", "image_size must be divisible by patch_size");
}

void ParamStore::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ContractError("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.first == name; });
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw ContractError("unknown parameter " + name);
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& e : entries_)
    if (e.first == name) return e.second;
  throw ContractError("unknown parameter " + name);
}

void ParamStore::set(const std::string& name, Tensor tensor) { get(name) = std::move(tensor); }

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

ParamStore ParamStore::clone(bool requires_grad) const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.add(name, t.clone(requires_grad));
  return out;
}

void ParamStore::set_requires_grad(bool flag) {
  for (auto& e : entries_) e.second.set_requires_grad(flag);
}

Tensor patchify(const Tensor& images, const ModelConfig& cfg) {
  Shape s = images.shape();
  if (s.size() == 3) s.insert(s.begin(), 1);
  if (s.size() != 4) throw DimensionError("patchify: expected [C x H x W] or [B x C x H x W], got " + shape_str(images.shape()));
  const std::size_t batch = s[0], c = s[1], h = s[2], w = s[3];
  if (c != cfg.channels || h != cfg.image_size || w != cfg.image_size)
    throw DimensionError("patchify: image " + shape_str(images.shape()) + " does not match config " +
                         std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_size) + "x" +
                         std::to_string(cfg.image_size));
  const std::size_t p = cfg.patch_size, side = cfg.patches_per_side(), np = cfg.num_patches();
  const std::size_t pd = cfg.patch_dim();
  std::vector<std::size_t> index;
  index.reserve(batch * np * pd);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t pr = 0; pr < side; ++pr)
      for (std::size_t pc = 0; pc < side; ++pc)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t u = 0; u < p; ++u)
            for (std::size_t v = 0; v < p; ++v)
              index.push_back(((b * c + ch) * h + pr * p + u) * w + pc * p + v);
  return ops::gather(images, std::move(index), {batch * np, pd});
}

namespace {

Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = truncated_normal(rng, 0.02);
  return Tensor::from({rows, cols}, std::move(v));
}

// [B*S x D] -> [B*H x S x dh]
std::vector<std::size_t> split_heads_index(std::size_t batch, std::size_t seq, std::size_t heads, std::size_t dh) {
  const std::size_t d = heads * dh;
  std::vector<std::size_t> idx;
  idx.reserve(batch * seq * d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t e = 0; e < dh; ++e) idx.push_back((b * seq + s) * d + h * dh + e);
  return idx;
}

// [B*H x S x dh] -> [B*S x D]
std::vector<std::size_t> merge_heads_index(std::size_t batch, std::size_t seq, std::size_t heads, std::size_t dh) {
  std::vector<std::size_t> idx;
  idx.reserve(batch * seq * heads * dh);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t e = 0; e < dh; ++e) idx.push_back(((b * heads + h) * seq + s) * dh + e);
  return idx;
}

}  // namespace

VisionTransformer::VisionTransformer(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, {0x766974}));
  const std::size_t d = cfg_.embed_dim, hidden = cfg_.ffn_hidden();
  params_.add("patch.weight", init_weight(rng, cfg_.patch_dim(), d));
  params_.add("patch.bias", Tensor::zeros({d}));
  params_.add("cls_token", init_weight(rng, 1, d));
  params_.add("pos_embed", init_weight(rng, cfg_.seq_len(), d));
  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    const auto pre = block_prefix(i);
    params_.add(pre + "ln1.gain", Tensor::full({d}, 1.0));
    params_.add(pre + "ln1.bias", Tensor::zeros({d}));
    for (const char* proj : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      params_.add(pre + proj + ".weight", init_weight(rng, d, d));
      params_.add(pre + proj + ".bias", Tensor::zeros({d}));
    }
    params_.add(pre + "ln2.gain", Tensor::full({d}, 1.0));
    params_.add(pre + "ln2.bias", Tensor::zeros({d}));
    params_.add(pre + "ffn.fc1.weight", init_weight(rng, d, hidden));
    params_.add(pre + "ffn.fc1.bias", Tensor::zeros({hidden}));
    params_.add(pre + "ffn.fc2.weight", init_weight(rng, hidden, d));
    params_.add(pre + "ffn.fc2.bias", Tensor::zeros({d}));
  }
  params_.add("norm.gain", Tensor::full({d}, 1.0));
  params_.add("norm.bias", Tensor::zeros({d}));
  params_.add("head.weight", init_weight(rng, d, cfg_.num_classes));
  params_.add("head.bias", Tensor::zeros({cfg_.num_classes}));
}

VisionTransformer::VisionTransformer(ModelConfig cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  // Verify the census against a reference layout.
  VisionTransformer reference(cfg_, 0);
  for (const auto& [name, t] : reference.params().entries()) {
    if (!params_.contains(name)) throw DataError("missing parameter " + name);
    if (params_.get(name).shape() != t.shape())
      throw DimensionError("parameter " + name + " has shape " + shape_str(params_.get(name).shape()) +
                           ", expected " + shape_str(t.shape()));
  }
  if (params_.size() != reference.params().size()) throw DataError("unexpected extra parameters in model");
}

void VisionTransformer::reset_head(std::size_t num_classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x68656164}));
  cfg_.num_classes = num_classes;
  params_.set("head.weight", init_weight(rng, cfg_.embed_dim, num_classes));
  params_.set("head.bias", Tensor::zeros({num_classes}));
}

VisionTransformer VisionTransformer::snapshot() const { return VisionTransformer(cfg_, params_.clone(false)); }

Tensor VisionTransformer::project(const Tensor& x, std::size_t block, Site site, const std::string& name,
                                  const ForwardHooks* hooks) const {
  const auto pre = block_prefix(block) + name;
  Tensor base = ops::linear(x, params_.get(pre + ".weight"), params_.get(pre + ".bias"));
  return hooks ? hooks->projection(block, site, x, std::move(base)) : base;
}

Tensor VisionTransformer::attention(const Tensor& x, std::size_t block, const ForwardHooks* hooks) const {
  const std::size_t d = cfg_.embed_dim, seq = cfg_.seq_len(), heads = cfg_.heads, dh = cfg_.head_dim();
  if (x.rank() != 2 || x.dim(1) != d || x.dim(0) % seq != 0)
    throw DimensionError("attention: expected [B*" + std::to_string(seq) + " x " + std::to_string(d) + "], got " +
                         shape_str(x.shape()));
  const std::size_t batch = x.dim(0) / seq;
  Tensor q = project(x, block, Site::Query, "attn.q", hooks);
  Tensor k = project(x, block, Site::Key, "attn.k", hooks);
  Tensor v = project(x, block, Site::Value, "attn.v", hooks);
  const Shape split_shape{batch * heads, seq, dh};
  auto split = split_heads_index(batch, seq, heads, dh);
  Tensor qh = ops::gather(q, split, split_shape);
  Tensor kh = ops::gather(k, split, split_shape);
  Tensor vh = ops::gather(v, std::move(split), split_shape);
  Tensor scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor ctx = ops::matmul(ops::softmax(scores), vh);
  Tensor merged = ops::gather(ctx, merge_heads_index(batch, seq, heads, dh), {batch * seq, d});
  return project(merged, block, Site::Output, "attn.o", hooks);
}

Tensor VisionTransformer::forward(const Tensor& images, const ForwardHooks* hooks) const {
  const std::size_t d = cfg_.embed_dim, seq = cfg_.seq_len(), np = cfg_.num_patches();
  Tensor patches = patchify(images, cfg_);
  const std::size_t batch = patches.dim(0) / np;
  Tensor embedded = ops::linear(patches, params_.get("patch.weight"), params_.get("patch.bias"));
  // Row 0 of `stacked` is the class token; interleave it ahead of each sample.
  Tensor stacked = ops::concat({params_.get("cls_token"), embedded});
  std::vector<std::size_t> order;
  order.reserve(batch * seq * d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s) {
      const std::size_t row = s == 0 ? 0 : 1 + b * np + (s - 1);
      for (std::size_t j = 0; j < d; ++j) order.push_back(row * d + j);
    }
  Tensor x = ops::add_rowwise(ops::gather(stacked, std::move(order), {batch * seq, d}), params_.get("pos_embed"));

  for (std::size_t i = 0; i < cfg_.depth; ++i) {
    const auto pre = block_prefix(i);
    Tensor h = ops::layer_norm(x, params_.get(pre + "ln1.gain"), params_.get(pre + "ln1.bias"));
    Tensor a = attention(h, i, hooks);
    if (hooks) a = hooks->sublayer(i, Sublayer::Attention, std::move(a));
    x = ops::add(x, a);
    h = ops::layer_norm(x, params_.get(pre + "ln2.gain"), params_.get(pre + "ln2.bias"));
    Tensor inner = ops::gelu(project(h, i, Site::FfnInner, "ffn.fc1", nullptr));
    if (hooks) inner = hooks->projection(i, Site::FfnInner, inner, inner);
    Tensor f = ops::linear(inner, params_.get(pre + "ffn.fc2.weight"), params_.get(pre + "ffn.fc2.bias"));
    if (hooks) f = hooks->sublayer(i, Sublayer::Ffn, std::move(f));
    x = ops::add(x, f);
  }
  x = ops::layer_norm(x, params_.get("norm.gain"), params_.get("norm.bias"));
  std::vector<std::size_t> cls_rows;
  cls_rows.reserve(batch * d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < d; ++j) cls_rows.push_back(b * seq * d + j);
  Tensor cls = ops::gather(x, std::move(cls_rows), {batch, d});
  return ops::linear(cls, params_.get("head.weight"), params_.get("head.bias"));
}

std::vector<std::string> bias_names(const ParamStore& params) {
  std::vector<std::string> out;
  for (const auto& name : params.names())
    if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0) out.push_back(name);
  return out;
}

void AdamW::step(std::span<NamedTensor> params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, tensor] : params) {
    auto it = std::find_if(state_.begin(), state_.end(), [&](const auto& e) { return e.first == name; });
    if (it == state_.end()) {
      state_.push_back({name, Moments{std::vector<double>(tensor.numel(), 0.0), std::vector<double>(tensor.numel(), 0.0)}});
      it = std::prev(state_.end());
    }
    if (!tensor.has_grad()) continue;
    auto& mom = it->second;
    auto w = tensor.mutable_data();
    auto g = tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1.0 - cfg_.lr * cfg_.weight_decay;
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double train_step(const Classifier& forward, std::span<NamedTensor> trainable, const Tensor& images,
                  std::span<const int> labels, AdamW& optimizer) {
  if (trainable.empty()) throw ConfigError("trainable", "trainable set is empty");
  for (auto& [name, t] : trainable) {
    if (!t.requires_grad()) throw ContractError("trainable tensor " + name + " does not require grad");
    t.zero_grad();
  }
  Tensor loss = ops::cross_entropy(forward(images), labels);
  const double value = loss.item();
  if (!std::isfinite(value)) throw DivergenceError(optimizer.steps_taken() + 1, "non-finite training loss");
  loss.backward();
  optimizer.step(trainable);
  for (const auto& [name, t] : trainable)
    for (double v : t.data())
      if (!std::isfinite(v)) throw DivergenceError(optimizer.steps_taken(), "parameter " + name + " became non-finite");
  return value;
}

std::vector<int> predict(const Classifier& forward, const Tensor& images) {
  Tensor logits = forward(images);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  auto v = logits.data();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

double accuracy(const Classifier& forward, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("accuracy on empty dataset");
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    auto pred = predict(forward, data.images(begin, end));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[begin + i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<double> pretrain(VisionTransformer& model, const Dataset& data, const PretrainConfig& cfg) {
  if (data.num_classes != model.config().num_classes)
    throw ConfigError("pretrain", "dataset has " + std::to_string(data.num_classes) + " classes, model head has " +
                                      std::to_string(model.config().num_classes));
  model.params().set_requires_grad(true);
  std::vector<NamedTensor> trainable(model.params().entries().begin(), model.params().entries().end());
  AdamW opt(cfg.optimizer);
  Rng rng(derive_seed(cfg.seed, {0x707265}));
  Classifier fwd = [&model](const Tensor& x) { return model.forward(x); };
  std::vector<double> losses;
  std::vector<std::size_t> idx(cfg.batch_size);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& i : idx) i = uniform_index(rng, data.size());
    losses.push_back(train_step(fwd, trainable, data.images(idx), data.labels_of(idx), opt));
  }
  model.params().set_requires_grad(false);
  return losses;
}

}  // namespace ftlab
