#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "ftlab/error.hpp"
#include "ftlab/random.hpp"
#include "ftlab/theory.hpp"

using namespace ftlab;
using namespace ftlab::theory;

namespace {

// Independent standard-normal CDF: composite Simpson integration of the
// density from 0 to x.
double phi_oracle(double x) {
  const int n = 20000;
  const double h = x / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double acc = pdf(0.0) + pdf(x);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  return 0.5 + acc * h / 3.0;
}

TheoryParams params(std::size_t d, std::size_t k, double eta, Layout layout = Layout::Disjoint) {
  TheoryParams p;
  p.d = d;
  p.k = k;
  p.eta = eta;
  p.layout = layout;
  return p;
}

}  // namespace

TEST_CASE("normal cdf agrees with the integration oracle") {
  for (double x : {-4.0, -2.33, -1.0, -0.1, 0.0, 0.5, 1.33, 2.33, 3.7})
    CHECK(normal_cdf(x) == doctest::Approx(phi_oracle(x)).epsilon(1e-10));
  CHECK(normal_cdf(0.0) == 0.5);
}

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {1e-9, 1e-4, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9, 0.975, 0.99, 0.999999}) {
    INFO(p);
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
  }
  CHECK(normal_quantile(0.99) == doctest::Approx(2.3263478740).epsilon(1e-9));
  CHECK_THROWS_AS(normal_quantile(1.0), ConfigError);
}

TEST_CASE("closed-form accuracy examples") {
  CHECK(ft_accuracy_closed(params(100, 0, 0.233)) == doctest::Approx(phi_oracle(2.33)).epsilon(1e-10));
  CHECK(ft_accuracy_closed(params(100, 0, 0.233)) == doctest::Approx(0.9901).epsilon(1e-4));
  CHECK(ft_accuracy_closed(params(100, 40, 0.0)) == 0.5);
  for (std::size_t d : {10u, 100u, 333u}) {
    const double eta = eta_lower_bound(d, d);
    CHECK(ft_accuracy_closed(params(d, d, eta)) == doctest::Approx(0.99).epsilon(1e-12));
    CHECK(std::sqrt(2.0 * d) * eta == doctest::Approx(normal_quantile(0.99)).epsilon(1e-12));
  }
}

TEST_CASE("eta lower bound") {
  CHECK(eta_lower_bound(0, 100) == doctest::Approx(0.2326).epsilon(1e-4));
  CHECK(std::abs(eta_lower_bound(0, 100) - 0.233) < 1e-3);
  for (std::size_t d : {50u, 100u, 200u}) {
    CHECK(eta_lower_bound(d, d) < eta_lower_bound(0, d));
    CHECK(eta_lower_bound(d, d) == doctest::Approx(normal_quantile(0.99) / std::sqrt(2.0 * d)).epsilon(1e-12));
  }
  CHECK(eta_lower_bound(3, 10, 0.5) == 0.0);
  CHECK_THROWS_AS(eta_lower_bound(11, 10), ConfigError);
}

TEST_CASE("adversarial closed form") {
  auto p = params(100, 0, 0.233);
  CHECK(adv_accuracy_closed(p, 0.0) == ft_accuracy_closed(p));
  CHECK(adv_accuracy_closed(p, p.eta) == 0.5);
  CHECK(adv_accuracy_closed(p, 0.1) == doctest::Approx(phi_oracle(1.33)).epsilon(1e-10));
  CHECK(adv_accuracy_closed(p, 0.1) == doctest::Approx(0.908).epsilon(1e-3));
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = params(1 + uniform_index(rng, 300), 0, 0.0);
    q.k = uniform_index(rng, q.d + 1);
    // Keep Phi away from double-precision saturation.
    q.eta = 4.0 * uniform01(rng) / std::sqrt(double(q.k + q.d));
    const double eps = (0.01 + uniform01(rng)) * q.eta;
    CHECK(adv_accuracy_closed(q, eps) < ft_accuracy_closed(q));
  }
}

TEST_CASE("closed-form accuracy is monotone in eta, k and d") {
  for (double eta : {0.05, 0.1, 0.2}) {
    CHECK(ft_accuracy_closed(params(50, 10, eta)) < ft_accuracy_closed(params(50, 10, eta + 0.01)));
    CHECK(ft_accuracy_closed(params(50, 10, eta)) < ft_accuracy_closed(params(50, 11, eta)));
    CHECK(ft_accuracy_closed(params(50, 10, eta)) < ft_accuracy_closed(params(51, 10, eta)));
  }
}

TEST_CASE("full fine-tuning is more vulnerable at equal clean accuracy") {
  for (std::size_t d : {10u, 50u, 100u, 200u, 500u}) {
    const double eta_full = eta_lower_bound(d, d), eta_lp = eta_lower_bound(0, d);
    for (double frac : {0.1, 0.5, 0.9}) {
      const double eps = frac * eta_full;
      const double full = normal_cdf(std::sqrt(2.0 * d) * (eta_full - eps));
      const double lp = normal_cdf(std::sqrt(double(d)) * (eta_lp - eps));
      CHECK(full < lp);
      CHECK(adv_accuracy_closed(params(d, d, eta_full), eps) == doctest::Approx(full).epsilon(1e-12));
      CHECK(adv_accuracy_closed(params(d, 0, eta_lp), eps) == doctest::Approx(lp).epsilon(1e-12));
    }
  }
}

TEST_CASE("classifier layouts") {
  auto disjoint = make_classifier(params(5, 2, 0.1));
  CHECK(disjoint.dim() == 8);
  CHECK(disjoint.w0 == std::vector<double>{0, 0.2, 0.2, 0.2, 0.2, 0.2, 0, 0});
  CHECK(disjoint.delta_w == std::vector<double>{0, 0, 0, 0, 0, 0, 0.2, 0.2});
  auto shared = make_classifier(params(5, 2, 0.1, Layout::Shared), std::vector<std::size_t>{4, 1});
  CHECK(shared.dim() == 6);
  CHECK(shared.delta_w == std::vector<double>{0, 0, 0.2, 0, 0, 0.2});
  CHECK_THROWS_AS(make_classifier(params(5, 2, 0.1, Layout::Shared), std::vector<std::size_t>{1}), ConfigError);
  CHECK_THROWS_AS(make_classifier(params(5, 2, 0.1, Layout::Shared), std::vector<std::size_t>{1, 1}), ConfigError);
  CHECK_THROWS_AS(make_classifier(params(5, 6, 0.1)), ConfigError);
}

TEST_CASE("sampler statistics") {
  auto p = params(3, 2, 0.4);
  p.p = 0.8;
  const std::size_t n = 1000000;
  auto s = sample(p, n, 5);
  REQUIRE(s.dim == 6);
  std::vector<double> mean(s.dim, 0.0);
  std::size_t positives = 0, agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    positives += s.y[i] == 1;
    agree += s.x[i * s.dim] == s.y[i];
    for (std::size_t j = 1; j < s.dim; ++j) mean[j] += s.y[i] * s.x[i * s.dim + j];
  }
  for (std::size_t j = 1; j < s.dim; ++j) CHECK(std::abs(mean[j] / n - 0.4) < 3.0 / std::sqrt(double(n)) * 1.5);
  CHECK(std::abs(double(positives) / n - 0.5) < 3.0 * 0.5 / std::sqrt(double(n)));
  CHECK(std::abs(double(agree) / n - 0.8) < 3.0 * 0.4 / std::sqrt(double(n)));

  p.p = 1.0;
  auto t = sample(p, 1000, 6);
  for (std::size_t i = 0; i < 1000; ++i) CHECK(t.x[i * t.dim] == t.y[i]);
  auto u = sample(p, 1000, 6);
  CHECK(u.x == t.x);
}

TEST_CASE("zero shift leaves weak features uninformative") {
  auto p = params(20, 5, 0.0);
  auto est = monte_carlo_accuracy(make_classifier(p), p, 100000, 0.0, 2);
  CHECK(std::abs(est.accuracy - 0.5) < 3.0 * est.std_error);
}

TEST_CASE("Monte-Carlo matches the closed form for both layouts") {
  Rng rng(21);
  for (Layout layout : {Layout::Disjoint, Layout::Shared}) {
    for (int trial = 0; trial < 20; ++trial) {
      auto p = params(5 + uniform_index(rng, 60), 0, 0.02 + 0.3 * uniform01(rng), layout);
      p.k = uniform_index(rng, p.d + 1);
      auto est = monte_carlo_accuracy(make_classifier(p), p, 20000, 0.0, trial);
      const double expect = ft_accuracy_closed(p);
      const double sigma = std::sqrt(expect * (1.0 - expect) / est.n);
      INFO("d=" << p.d << " k=" << p.k << " eta=" << p.eta);
      CHECK(std::abs(est.accuracy - expect) <= 3.0 * sigma + 1e-12);
    }
  }
}

TEST_CASE("PGD Monte-Carlo matches the adversarial closed form") {
  auto p = params(100, 0, 0.233);
  auto est = monte_carlo_accuracy(make_classifier(p), p, 100000, 0.1, 8);
  const double expect = adv_accuracy_closed(p, 0.1);
  CHECK(std::abs(est.accuracy - expect) <= 3.0 * std::sqrt(expect * (1 - expect) / est.n));
  // More, smaller steps converge to the same worst case.
  MonteCarloOptions opts;
  opts.pgd_steps = 4;
  opts.alpha_ratio = 0.25;
  auto multi = monte_carlo_accuracy(make_classifier(p), p, 100000, 0.1, 8, opts);
  CHECK(multi.accuracy == est.accuracy);
}

TEST_CASE("selection is exchangeable") {
  auto p = params(30, 6, 0.12, Layout::Shared);
  auto base = monte_carlo_accuracy(make_classifier(p), p, 100000, 0.0, 4);
  Rng rng(2);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<std::size_t> all(p.d);
    for (std::size_t i = 0; i < p.d; ++i) all[i] = i;
    for (std::size_t i = p.d - 1; i > 0; --i) std::swap(all[i], all[uniform_index(rng, i + 1)]);
    all.resize(p.k);
    auto est = monte_carlo_accuracy(make_classifier(p, all), p, 100000, 0.0, 100 + trial);
    CHECK(std::abs(est.accuracy - base.accuracy) <= 3.0 * std::sqrt(2.0) * base.std_error);
  }
}

TEST_CASE("small and large Monte-Carlo runs agree") {
  auto p = params(40, 10, 0.1);
  auto small = monte_carlo_accuracy(make_classifier(p), p, 1000, 0.0, 1);
  auto large = monte_carlo_accuracy(make_classifier(p), p, 200000, 0.0, 2);
  CHECK(std::abs(small.accuracy - large.accuracy) <= 3.0 * std::hypot(small.std_error, large.std_error));
  CHECK_THROWS_AS(monte_carlo_accuracy(make_classifier(p), p, 999, 0.0, 1), ConfigError);
}

TEST_CASE("invalid theory parameters") {
  CHECK_THROWS_AS(params(0, 0, 0.1).validate(), ConfigError);
  CHECK_THROWS_AS(params(5, 6, 0.1).validate(), ConfigError);
  CHECK_THROWS_AS(params(5, 1, -0.1).validate(), ConfigError);
  auto p = params(5, 1, 0.1);
  p.p = 0.4;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}
