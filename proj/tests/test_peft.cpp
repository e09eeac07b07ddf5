#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "ftlab/error.hpp"
#include "ftlab/ops.hpp"
#include "ftlab/peft.hpp"
#include "op_suite.hpp"
#include "test_util.hpp"

using namespace ftlab;
using namespace ftlab::testing;

namespace {

PeftSpec spec_for(Method m) {
  PeftSpec s;
  s.method = m;
  return s;
}

// Tiny config whose dims satisfy every method's divisibility rules.
ModelConfig peft_config() {
  ModelConfig cfg = tiny_config();
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.depth = 2;
  return cfg;
}

PeftSpec small_spec(Method m) {
  PeftSpec s = spec_for(m);
  s.rank = 2;
  s.reduction_factor = 2;
  s.kron_factors = 2;
  return s;
}

const Method kAttached[] = {Method::LoRA, Method::Adapter, Method::Compacter, Method::IA3};

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

EMat to_eigen(const Tensor& t) {
  EMat m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at({i, j});
  return m;
}

}  // namespace

TEST_CASE("method names round-trip") {
  for (Method m : all_methods()) CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS_AS(parse_method("Prefix"), ConfigError);
}

TEST_CASE("decomposition registry rows") {
  auto lora = *decomposition(Method::LoRA);
  CHECK(lora.location == std::set<InfoLocation>{InfoLocation::Attn});
  CHECK(lora.mechanism == std::set<Mechanism>{Mechanism::MatrixReparam});
  auto bitfit = *decomposition(Method::BitFit);
  CHECK(bitfit.location == std::set<InfoLocation>{InfoLocation::Attn, InfoLocation::FFN, InfoLocation::Bias});
  CHECK(bitfit.mechanism == std::set<Mechanism>{Mechanism::DirectUpdate});
  auto compacter = *decomposition(Method::Compacter);
  CHECK(compacter.location == std::set<InfoLocation>{InfoLocation::Representation});
  CHECK(compacter.mechanism == std::set<Mechanism>{Mechanism::ProjectionLayers, Mechanism::MatrixReparam});
  CHECK_FALSE(decomposition(Method::FullFT).has_value());
  CHECK_FALSE(decomposition(Method::LinearProbe).has_value());
  CHECK(decomposition_csv() == read_golden("decomposition.csv"));
}

TEST_CASE("invalid specs raise configuration errors") {
  ModelConfig cfg;
  auto expect_field = [&](PeftSpec s, const std::string& field) {
    try {
      s.validate(cfg);
      FAIL("expected ConfigError for " << field);
    } catch (const ConfigError& e) {
      CHECK(e.field() == field);
    }
  };
  PeftSpec s = spec_for(Method::LoRA);
  s.locations = {"FFN"};
  expect_field(s, "peft.locations");
  s.locations = {"W_Z"};
  expect_field(s, "peft.locations");
  s = spec_for(Method::LoRA);
  s.rank = cfg.embed_dim + 1;
  expect_field(s, "peft.rank");
  s = spec_for(Method::Adapter);
  s.reduction_factor = 7;
  expect_field(s, "peft.reduction_factor");
  s = spec_for(Method::Compacter);
  s.kron_factors = 3;
  expect_field(s, "peft.kron_factors");
  s = spec_for(Method::IA3);
  s.locations = {"W_Q"};
  expect_field(s, "peft.locations");
  CHECK_NOTHROW(spec_for(Method::Compacter).validate(cfg));
}

TEST_CASE("identity-init attachments reproduce the frozen logits exactly") {
  ModelConfig cfg = peft_config();
  VisionTransformer base(cfg, 3);
  amplify(base.params(), 10.0);
  Dataset data = random_dataset(cfg, 16, 4);
  Tensor images = data.images(0, 16);
  auto frozen = values(base.forward(images));
  for (Method m : all_methods()) {
    INFO(to_string(m));
    PeftModel pm(base, small_spec(m), 9);
    CHECK(values(pm.forward(images)) == frozen);
  }
}

TEST_CASE("random init perturbs the attached function") {
  ModelConfig cfg = peft_config();
  VisionTransformer base(cfg, 3);
  amplify(base.params(), 10.0);
  Tensor images = random_dataset(cfg, 4, 4).images(0, 4);
  auto frozen = values(base.forward(images));
  for (Method m : kAttached) {
    INFO(to_string(m));
    PeftSpec s = small_spec(m);
    s.init = Init::Random;
    PeftModel pm(base, s, 9);
    CHECK(values(pm.forward(images)) != frozen);
  }
}

TEST_CASE("trainable sets per method") {
  ModelConfig cfg;
  VisionTransformer base(cfg, 1);
  const std::size_t total_base = base.params().parameter_count();

  PeftModel full(base, spec_for(Method::FullFT), 0);
  CHECK(full.trainable_fraction() == 1.0);
  CHECK(full.trainable_names() == base.params().names());

  PeftModel lp(base, spec_for(Method::LinearProbe), 0);
  CHECK(lp.trainable_names() == std::vector<std::string>{"head.weight", "head.bias"});

  PeftSpec bf = spec_for(Method::BitFit);
  bf.train_head = false;
  PeftModel bitfit(base, bf, 0);
  CHECK(bitfit.trainable_names() == bias_names(base.params()));
  std::size_t bias_count = 0;
  for (const auto& n : bias_names(base.params())) bias_count += base.params().get(n).numel();
  CHECK(bitfit.trainable_parameters() == bias_count);
  CHECK(bitfit.trainable_fraction() < 0.02);

  for (Method m : kAttached) {
    PeftModel pm(base, spec_for(m), 0);
    CHECK(pm.total_parameters() == total_base + pm.attachment().params().parameter_count());
    for (const auto& [name, t] : pm.base().params().entries()) {
      const bool head = name.rfind("head.", 0) == 0;
      CHECK(t.requires_grad() == head);
    }
    for (const auto& [name, t] : pm.attachment().params().entries()) CHECK(t.requires_grad());
  }
}

TEST_CASE("trainable fraction ordering at the default config") {
  ModelConfig cfg;
  VisionTransformer base(cfg, 1);
  auto frac = [&](Method m) { return PeftModel(base, spec_for(m), 0).trainable_fraction(); };
  const double lora = frac(Method::LoRA), adapter = frac(Method::Adapter);
  CHECK(frac(Method::LinearProbe) < lora);
  CHECK(frac(Method::BitFit) < lora);
  CHECK(frac(Method::IA3) < lora);
  CHECK(lora < adapter);
  CHECK(adapter < frac(Method::FullFT));
  CHECK(frac(Method::Compacter) < adapter);
}

TEST_CASE("adapter bottleneck and compacter census") {
  ModelConfig cfg;
  PeftModel adapter(VisionTransformer(cfg, 1), spec_for(Method::Adapter), 0);
  CHECK(adapter.attachment().params().get("adapter.0.W_O.down.weight").shape() == Shape{64, 8});
  PeftModel compacter(VisionTransformer(cfg, 1), spec_for(Method::Compacter), 0);
  CHECK(compacter.attachment().params().parameter_count() < adapter.attachment().params().parameter_count());
  // Shared factors appear once.
  std::size_t shared = 0;
  for (const auto& name : compacter.attachment().params().names()) shared += name.rfind("compacter.A.", 0) == 0;
  CHECK(shared == 4);
}

TEST_CASE("compacter weight equals a nested-loop Kronecker sum") {
  ModelConfig cfg;
  PeftSpec s = spec_for(Method::Compacter);
  s.init = Init::Random;
  Attachment att(s, cfg, 5);
  const std::size_t n = 4, d = cfg.embed_dim, m = d / s.reduction_factor;
  for (auto [prefix, in, out] : {std::tuple{"compacter.1.FFN.down", d, m}, std::tuple{"compacter.0.W_O.up", m, d}}) {
    Tensor w = att.compacter_weight(prefix, in, out);
    REQUIRE(w.shape() == Shape{in, out});
    const std::size_t bi = in / n, bj = out / n;
    for (std::size_t r = 0; r < in; ++r)
      for (std::size_t c = 0; c < out; ++c) {
        double expect = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto idx = std::to_string(i);
          const Tensor& a = att.params().get("compacter.A." + idx);
          const Tensor& sv = att.params().get(std::string(prefix) + ".s." + idx);
          const Tensor& tv = att.params().get(std::string(prefix) + ".t." + idx);
          expect += a.at({r / bi, c / bj}) * sv.data()[r % bi] * tv.data()[c % bj];
        }
        CHECK(w.at({r, c}) == doctest::Approx(expect).epsilon(1e-12));
      }
  }
}

TEST_CASE("LoRA merged inference equals the two-path forward") {
  ModelConfig cfg = peft_config();
  VisionTransformer base(cfg, 2);
  amplify(base.params(), 10.0);
  PeftSpec s = small_spec(Method::LoRA);
  s.init = Init::Random;
  PeftModel pm(base, s, 4);
  for (const auto& name : pm.attachment().params().names())
    for (auto& v : pm.attachment().params().get(name).mutable_data()) v *= 5.0;
  Tensor images = random_dataset(cfg, 8, 1).images(0, 8);
  Tensor two_path = pm.forward(images);
  Tensor folded = pm.merged().forward(images);
  double worst = 0.0;
  for (std::size_t i = 0; i < two_path.numel(); ++i)
    worst = std::max(worst, std::abs(two_path.data()[i] - folded.data()[i]));
  CHECK(worst > 0.0);
  CHECK(worst < 1e-10);
  CHECK(values(two_path) != values(base.forward(images)));
  CHECK_THROWS_AS(PeftModel(base, small_spec(Method::IA3), 0).merged(), ContractError);
}

TEST_CASE("full-rank LoRA represents an arbitrary update") {
  ModelConfig cfg = tiny_config();  // embed_dim 8
  VisionTransformer base(cfg, 6);
  amplify(base.params(), 10.0);
  PeftSpec s = spec_for(Method::LoRA);
  s.rank = 8;
  s.locations = {"W_V"};
  PeftModel pm(base, s, 3);
  Rng rng(8);
  Tensor delta = random_tensor(rng, {8, 8}, 0.3);
  // Solve A B = (r / alpha) dW for B by least squares.
  EMat a = to_eigen(pm.attachment().params().get("lora.0.W_V.A"));
  EMat target = to_eigen(delta) * (s.rank / s.lora_alpha);
  EMat b = a.colPivHouseholderQr().solve(target);
  CHECK((a * b - target).norm() < 1e-10);
  auto bdata = pm.attachment().params().get("lora.0.W_V.B").mutable_data();
  std::copy(b.data(), b.data() + b.size(), bdata.begin());

  VisionTransformer expect = base.snapshot();
  auto w = expect.params().get("blocks.0.attn.v.weight").mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += delta.data()[i];
  Tensor images = random_dataset(cfg, 4, 2).images(0, 4);
  Tensor got = pm.forward(images), want = expect.forward(images);
  for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-9));
}

TEST_CASE("LoRA update rank is bounded by r") {
  Rng rng(12);
  for (std::size_t r : {1u, 2u, 3u}) {
    EMat a = to_eigen(random_tensor(rng, {8, r})), b = to_eigen(random_tensor(rng, {r, 8}));
    CHECK(static_cast<std::size_t>(Eigen::FullPivLU<EMat>(a * b).rank()) <= r);
  }
}

TEST_CASE("zero value scaling annihilates the attention mix") {
  ModelConfig cfg = peft_config();
  VisionTransformer base(cfg, 2);
  amplify(base.params(), 10.0);
  auto bias = base.params().get("blocks.0.attn.o.bias").mutable_data();
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = 0.1 * static_cast<double>(i);
  Attachment att(small_spec(Method::IA3), cfg, 0);
  for (auto& v : att.params().get("ia3.0.l_v").mutable_data()) v = 0.0;
  Rng rng(1);
  Tensor x = random_tensor(rng, {2 * cfg.seq_len(), cfg.embed_dim});
  Tensor out = base.attention(x, 0, &att);
  for (std::size_t r = 0; r < out.dim(0); ++r)
    for (std::size_t c = 0; c < out.dim(1); ++c) CHECK(out.at({r, c}) == bias[c]);
}

TEST_CASE("attachment gradients match finite differences") {
  ModelConfig cfg = peft_config();
  VisionTransformer base(cfg, 5);
  amplify(base.params(), 10.0);
  Dataset data = random_dataset(cfg, 3, 6);
  Tensor images = data.images(0, 3);
  for (Method m : kAttached) {
    INFO(to_string(m));
    PeftSpec s = small_spec(m);
    s.init = Init::Random;
    PeftModel pm(base, s, 7);
    std::vector<Tensor> inputs;
    for (auto& [name, t] : pm.trainable()) inputs.push_back(t);
    auto r = gradcheck([&] { return ops::cross_entropy(pm.forward(images), data.labels); }, inputs);
    CHECK(r.checked == pm.trainable_parameters());
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("freeze contract holds after training") {
  ModelConfig cfg = peft_config();
  VisionTransformer base(cfg, 5);
  Dataset data = random_dataset(cfg, 16, 6);
  for (Method m : all_methods()) {
    INFO(to_string(m));
    PeftModel pm(base, small_spec(m), 1);
    auto trainable = pm.trainable();
    AdamW opt({1e-2, 1e-2});
    for (int step = 0; step < 30; ++step) train_step(pm.classifier(), trainable, data.images(0, 16), data.labels, opt);
    const auto& names = pm.trainable_names();
    for (const auto& [name, t] : pm.base().params().entries()) {
      const bool in_set = std::find(names.begin(), names.end(), name) != names.end();
      const bool same = values(t) == values(base.params().get(name));
      INFO(name);
      if (!in_set) CHECK(same);
      if (in_set && name.find("weight") != std::string::npos) CHECK_FALSE(same);
    }
  }
}

TEST_CASE("snapshot and rebuild preserve the function") {
  ModelConfig cfg = peft_config();
  VisionTransformer base(cfg, 5);
  PeftSpec s = small_spec(Method::Compacter);
  s.init = Init::Random;
  PeftModel pm(base, s, 2);
  Tensor images = random_dataset(cfg, 4, 6).images(0, 4);
  PeftModel snap = pm.snapshot();
  CHECK(values(snap.forward(images)) == values(pm.forward(images)));
  CHECK(snap.trainable_names() == pm.trainable_names());
  const ParamStore all = snap.all_params();
  for (const auto& [name, t] : all.entries()) CHECK_FALSE(t.requires_grad());
  ParamStore wrong = pm.attachment().params().clone();
  wrong.set("compacter.A.0", Tensor::zeros({3, 3}));
  CHECK_THROWS_AS(Attachment(s, cfg, wrong), DimensionError);
}
