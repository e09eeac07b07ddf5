#include <cmath>

#include "doctest.h"
#include "ftlab/error.hpp"
#include "ftlab/model.hpp"
#include "ftlab/ops.hpp"
#include "op_suite.hpp"
#include "test_util.hpp"

using namespace ftlab;
using ftlab::testing::gradcheck;
using ftlab::testing::random_tensor;

using namespace ftlab::testing;

TEST_CASE("patchify matches a direct index oracle") {
  ModelConfig cfg = tiny_config();
  Rng rng(1);
  const std::size_t b = 2, c = cfg.channels, s = cfg.image_size, p = cfg.patch_size;
  Tensor img = random_tensor(rng, {b, c, s, s});
  Tensor out = patchify(img, cfg);
  REQUIRE(out.shape() == Shape{b * cfg.num_patches(), cfg.patch_dim()});
  const std::size_t side = s / p;
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t patch = 0; patch < side * side; ++patch)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t u = 0; u < p; ++u)
          for (std::size_t v = 0; v < p; ++v) {
            const std::size_t row = patch / side, col = patch % side;
            double expect = img.at({n, ch, row * p + u, col * p + v});
            CHECK(out.at({n * side * side + patch, (ch * p + u) * p + v}) == expect);
          }
  CHECK_THROWS_AS(patchify(Tensor::zeros({c, s + 1, s}), cfg), DimensionError);
}

TEST_CASE("config validation names the field") {
  ModelConfig cfg = tiny_config();
  cfg.heads = 3;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "model.heads");
  }
  cfg = tiny_config();
  cfg.patch_size = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("attention agrees with a per-head brute-force oracle") {
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 7);
  amplify(m.params(), 20.0);
  Rng rng(2);
  const std::size_t batch = 2, seq = cfg.seq_len(), d = cfg.embed_dim, dh = cfg.head_dim();
  Tensor x = random_tensor(rng, {batch * seq, d});
  Tensor out = m.attention(x, 0);

  auto proj = [&](const char* name) {
    const auto& w = m.params().get(std::string("blocks.0.attn.") + name + ".weight");
    const auto& bias = m.params().get(std::string("blocks.0.attn.") + name + ".bias");
    std::vector<double> r(batch * seq * d);
    for (std::size_t i = 0; i < batch * seq; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = bias.data()[j];
        for (std::size_t k = 0; k < d; ++k) acc += x.at({i, k}) * w.at({k, j});
        r[i * d + j] = acc;
      }
    return r;
  };
  auto q = proj("q"), k = proj("k"), v = proj("v");
  std::vector<double> merged(batch * seq * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < cfg.heads; ++h)
      for (std::size_t i = 0; i < seq; ++i) {
        std::vector<double> score(seq);
        double mx = -1e300;
        for (std::size_t j = 0; j < seq; ++j) {
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) dot += q[(b * seq + i) * d + h * dh + e] * k[(b * seq + j) * d + h * dh + e];
          score[j] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, score[j]);
        }
        double z = 0.0;
        for (auto& s : score) z += (s = std::exp(s - mx));
        for (std::size_t j = 0; j < seq; ++j)
          for (std::size_t e = 0; e < dh; ++e)
            merged[(b * seq + i) * d + h * dh + e] += score[j] / z * v[(b * seq + j) * d + h * dh + e];
      }
  const auto& wo = m.params().get("blocks.0.attn.o.weight");
  const auto& bo = m.params().get("blocks.0.attn.o.bias");
  for (std::size_t i = 0; i < batch * seq; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double acc = bo.data()[j];
      for (std::size_t kk = 0; kk < d; ++kk) acc += merged[i * d + kk] * wo.at({kk, j});
      CHECK(out.at({i, j}) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("zero query and key weights give uniform attention") {
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 3);
  for (const char* name : {"blocks.0.attn.q.weight", "blocks.0.attn.k.weight"})
    for (auto& w : m.params().get(name).mutable_data()) w = 0.0;
  // With W_O = I and zero biases, every output row is the mean of the V rows.
  auto wo = m.params().get("blocks.0.attn.o.weight").mutable_data();
  for (std::size_t i = 0; i < cfg.embed_dim; ++i)
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) wo[i * cfg.embed_dim + j] = i == j ? 1.0 : 0.0;
  Rng rng(4);
  const std::size_t seq = cfg.seq_len(), d = cfg.embed_dim;
  Tensor x = random_tensor(rng, {seq, d});
  Tensor v = ops::matmul(x, m.params().get("blocks.0.attn.v.weight"));
  Tensor out = m.attention(x, 0);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t s = 0; s < seq; ++s) mean += v.at({s, j});
    mean /= static_cast<double>(seq);
    for (std::size_t s = 0; s < seq; ++s) CHECK(out.at({s, j}) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("attention over a single key returns its value") {
  Tensor scores = Tensor::from({3, 1, 1}, {5.0, -2.0, 100.0});
  Tensor probs = ops::softmax(scores);
  for (double p : probs.data()) CHECK(p == 1.0);
  Tensor vals = Tensor::from({3, 1, 2}, {1, 2, 3, 4, 5, 6});
  Tensor ctx = ops::matmul(ops::softmax(scores), vals);
  CHECK(values(ctx) == values(vals));
}

TEST_CASE("loss at uniform logits is ln C") {
  for (std::size_t c : {2u, 3u, 10u, 37u}) {
    std::vector<int> labels{0, static_cast<int>(c - 1)};
    CHECK(ops::cross_entropy(Tensor::zeros({2, c}), labels).item() == doctest::Approx(std::log(double(c))).epsilon(1e-14));
  }
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 5);
  for (auto& w : m.params().get("head.weight").mutable_data()) w = 0.0;
  Dataset data = random_dataset(cfg, 4, 1);
  Tensor logits = m.forward(data.images(0, 4));
  CHECK(ops::cross_entropy(logits, data.labels).item() == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("full model gradients match finite differences") {
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 11);
  amplify(m.params(), 15.0);
  m.params().set_requires_grad(true);
  Dataset data = random_dataset(cfg, 3, 2);
  Tensor images = data.images(0, 3);
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : m.params().entries()) inputs.push_back(t);
  auto r = gradcheck([&] { return ops::cross_entropy(m.forward(images), data.labels); }, inputs);
  CHECK(r.checked == m.params().parameter_count());
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("forward rejects mismatched images") {
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 1);
  CHECK_THROWS_AS(m.forward(Tensor::zeros({1, cfg.channels + 1, cfg.image_size, cfg.image_size})), DimensionError);
}

TEST_CASE("parameter census and restore") {
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 1);
  const std::size_t d = cfg.embed_dim, h = cfg.ffn_hidden();
  const std::size_t per_block = 4 * d + 4 * (d * d + d) + d * h + h + h * d + d;
  const std::size_t expect = cfg.patch_dim() * d + d + d + cfg.seq_len() * d + cfg.depth * per_block + 2 * d +
                             d * cfg.num_classes + cfg.num_classes;
  CHECK(m.params().parameter_count() == expect);
  VisionTransformer copy(cfg, m.params().clone());
  CHECK(values(copy.params().get("pos_embed")) == values(m.params().get("pos_embed")));
  ParamStore broken = m.params().clone();
  broken.set("head.bias", Tensor::zeros({cfg.num_classes + 1}));
  CHECK_THROWS_AS(VisionTransformer(cfg, broken), DimensionError);
}

TEST_CASE("AdamW first step matches a hand computation") {
  AdamWConfig c{0.1, 0.5, 0.9, 0.999, 1e-8};
  AdamW opt(c);
  Tensor w = Tensor::from({2}, {1.0, -2.0}, true);
  std::vector<NamedTensor> params{{"w", w}};
  // loss = 3 w0 + w1^2 -> g = (3, -4)
  ops::add(ops::scale(ops::sum(ops::mul(w, Tensor::from({2}, {1, 0}))), 3.0),
           ops::sum(ops::mul(ops::mul(w, w), Tensor::from({2}, {0, 1}))))
      .backward();
  opt.step(params);
  // Bias-corrected first step moves each weight by lr * g/|g| after decay.
  const double g0 = 3.0, g1 = -4.0;
  auto step = [&](double w0, double g) {
    double decayed = w0 * (1.0 - 0.1 * 0.5);
    double mhat = (0.1 * g) / 0.1, vhat = (0.001 * g * g) / (1.0 - 0.999);
    return decayed - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  };
  CHECK(w.data()[0] == doctest::Approx(step(1.0, g0)).epsilon(1e-12));
  CHECK(w.data()[1] == doctest::Approx(step(-2.0, g1)).epsilon(1e-12));
  CHECK(w.data()[0] == doctest::Approx(0.95 - 0.1).epsilon(1e-6));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 2);
  VisionTransformer before = m.snapshot();
  m.params().set_requires_grad(true);
  std::vector<NamedTensor> trainable(m.params().entries().begin(), m.params().entries().end());
  AdamW opt({0.0, 0.01});
  Dataset data = random_dataset(cfg, 8, 3);
  Classifier fwd = [&](const Tensor& x) { return m.forward(x); };
  for (int i = 0; i < 5; ++i) train_step(fwd, trainable, data.images(0, 8), data.labels, opt);
  for (const auto& name : m.params().names()) CHECK(values(m.params().get(name)) == values(before.params().get(name)));
}

TEST_CASE("frozen tensors are untouched over 100 steps") {
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 4);
  VisionTransformer before = m.snapshot();
  m.params().get("head.weight").set_requires_grad(true);
  m.params().get("head.bias").set_requires_grad(true);
  std::vector<NamedTensor> trainable{{"head.weight", m.params().get("head.weight")},
                                     {"head.bias", m.params().get("head.bias")}};
  AdamW opt({1e-2, 1e-2});
  Dataset data = random_dataset(cfg, 16, 5);
  Classifier fwd = [&](const Tensor& x) { return m.forward(x); };
  for (int i = 0; i < 100; ++i) train_step(fwd, trainable, data.images(0, 16), data.labels, opt);
  for (const auto& name : m.params().names()) {
    const bool head = name.rfind("head.", 0) == 0;
    INFO(name);
    CHECK((values(m.params().get(name)) == values(before.params().get(name))) != head);
  }
}

TEST_CASE("training step contracts") {
  ModelConfig cfg = tiny_config();
  VisionTransformer m(cfg, 4);
  Dataset data = random_dataset(cfg, 2, 5);
  Classifier fwd = [&](const Tensor& x) { return m.forward(x); };
  AdamW opt({});
  std::vector<NamedTensor> none;
  CHECK_THROWS_AS(train_step(fwd, none, data.images(0, 2), data.labels, opt), ConfigError);
  std::vector<NamedTensor> frozen{{"head.bias", m.params().get("head.bias")}};
  CHECK_THROWS_AS(train_step(fwd, frozen, data.images(0, 2), data.labels, opt), ContractError);

  m.params().set_requires_grad(true);
  std::vector<NamedTensor> all(m.params().entries().begin(), m.params().entries().end());
  AdamW wild({1e300, 0.0});
  for (auto& w : m.params().get("head.weight").mutable_data()) w = 1e308;
  try {
    train_step(fwd, all, data.images(0, 2), data.labels, wild);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 1);
  }
}

TEST_CASE("training is deterministic and reduces the loss") {
  ModelConfig cfg = tiny_config();
  Dataset data = random_dataset(cfg, 32, 8);
  auto run = [&] {
    VisionTransformer m(cfg, 9);
    PretrainConfig pc;
    pc.steps = 60;
    pc.batch_size = 8;
    pc.seed = 3;
    auto losses = pretrain(m, data, pc);
    return std::make_pair(losses, values(m.params().get("head.weight")));
  };
  auto [l1, w1] = run();
  auto [l2, w2] = run();
  CHECK(l1 == l2);
  CHECK(w1 == w2);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += l1[i];
    last += l1[l1.size() - 1 - i];
  }
  CHECK(last < first);
}
