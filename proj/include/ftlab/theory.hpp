#pragma once

// Gaussian feature model: one strongly-correlated feature x_1 and weak
// features x_i ~ N(eta*y, 1), classified by sign((w0 + dw)^T x). w0 puts 1/d
// on d weak features; dw puts 1/d on k more.
//
// Layout::Disjoint gives dw its own k weak features (input dim 1 + d + k),
// so the score is N((k+d)/d * eta, (k+d)/d^2) and the closed forms below are
// exact. Layout::Shared places dw on k of w0's own coordinates (input dim
// 1 + d); those carry weight 2/d and the score variance is (d+3k)/d^2.

#include <cstdint>
#include <optional>
#include <vector>

#include "ftlab/attack.hpp"

namespace ftlab::theory {

enum class Layout { Disjoint, Shared };

struct TheoryParams {
  std::size_t d = 100;
  std::size_t k = 0;
  double eta = 0.233;
  double p = 0.95;  // Pr[x_1 == y]
  Layout layout = Layout::Disjoint;

  std::size_t input_dim() const { return 1 + d + (layout == Layout::Disjoint ? k : 0); }

  void validate() const;  // ConfigError naming "theory.<field>"
};

double normal_cdf(double x);
// Inverse of normal_cdf on (0, 1).
double normal_quantile(double prob);

struct LinearFtClassifier {
  std::vector<double> w0;
  std::vector<double> delta_w;

  std::vector<double> weights() const;
  std::size_t dim() const { return w0.size(); }
  int predict(std::span<const double> x) const;
};

// Shared layout: dw is 1/d on the weak features named in `selection`
// (0-based weak index), the first k when omitted. Disjoint layout: dw covers
// the trailing k features and `selection` must be omitted.
LinearFtClassifier make_classifier(const TheoryParams& params,
                                   std::optional<std::vector<std::size_t>> selection = std::nullopt);

struct TheorySample {
  std::size_t dim = 0;        // input_dim()
  std::vector<double> x;      // n x dim, row-major
  std::vector<int> y;         // +1 / -1
  std::size_t size() const { return y.size(); }
};

TheorySample sample(const TheoryParams& params, std::size_t n, std::uint64_t seed);

// Phi(sqrt(k+d) * eta) for the disjoint layout; Phi((k+d) eta / sqrt(d+3k))
// for the shared one.
double ft_accuracy_closed(const TheoryParams& params);
// z(target) / sqrt(k+d): the eta at which the disjoint layout reaches `target`.
double eta_lower_bound(std::size_t k, std::size_t d, double target_accuracy = 0.99);
// Worst case over the L-inf ball: every weak feature shifted by -epsilon*y.
double adv_accuracy_closed(const TheoryParams& params, double epsilon);

struct Estimate {
  double accuracy = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

struct MonteCarloOptions {
  std::size_t pgd_steps = 1;
  double alpha_ratio = 1.0;  // alpha = ratio * epsilon
  std::size_t batch = 4096;
};

// Empirical (robust) accuracy over n fresh samples, streamed in batches.
// For epsilon > 0 every batch is attacked with PGD on the margin loss
// -y * w^T x, unclamped.
Estimate monte_carlo_accuracy(const LinearFtClassifier& clf, const TheoryParams& params, std::size_t n,
                              double epsilon, std::uint64_t seed, const MonteCarloOptions& opts = {});

// Differentiable margin loss mean(-y * (X w)) used as the PGD objective.
Tensor margin_loss(const Tensor& x, const std::vector<double>& w, std::span<const int> y);

}  // namespace ftlab::theory
