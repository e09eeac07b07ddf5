#include "ftlab/theory.hpp"

#include <cmath>
#include <limits>

#include "ftlab/error.hpp"
#include "ftlab/ops.hpp"
#include "ftlab/random.hpp"

namespace ftlab::theory {

void TheoryParams::validate() const {
  if (d < 1) throw ConfigError("theory.d", "must be at least 1");
  if (k > d) throw ConfigError("theory.k", "must satisfy 0 <= k <= d");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("theory.eta", "must be finite and >= 0");
  if (!(p >= 0.5 && p <= 1.0)) throw ConfigError("theory.p", "must lie in [0.5, 1]");
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0)) throw ConfigError("target_accuracy", "quantile requires a probability in (0, 1)");
  if (prob == 0.5) return 0.0;
  // Rational initial guess, then Newton steps on the exact CDF.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double e[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double lo = 0.02425;
  double x;
  if (prob < lo) {
    double q = std::sqrt(-2.0 * std::log(prob));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0);
  } else if (prob > 1.0 - lo) {
    double q = std::sqrt(-2.0 * std::log(1.0 - prob));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((e[0] * q + e[1]) * q + e[2]) * q + e[3]) * q + 1.0);
  } else {
    double q = prob - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  for (int i = 0; i < 3; ++i) {
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    if (pdf == 0.0) break;
    x -= (normal_cdf(x) - prob) / pdf;
  }
  return x;
}

std::vector<double> LinearFtClassifier::weights() const {
  std::vector<double> w(w0.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = w0[i] + delta_w[i];
  return w;
}

int LinearFtClassifier::predict(std::span<const double> x) const {
  double s = 0.0;
  for (std::size_t i = 0; i < w0.size(); ++i) s += (w0[i] + delta_w[i]) * x[i];
  return s > 0.0 ? 1 : -1;
}

LinearFtClassifier make_classifier(const TheoryParams& params, std::optional<std::vector<std::size_t>> selection) {
  params.validate();
  const std::size_t d = params.d, dim = params.input_dim();
  const double inv = 1.0 / static_cast<double>(d);
  LinearFtClassifier clf{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (std::size_t i = 1; i <= d; ++i) clf.w0[i] = inv;
  if (params.layout == Layout::Disjoint) {
    if (selection) throw ConfigError("theory.selection", "only the shared layout takes a selection");
    for (std::size_t i = d + 1; i < dim; ++i) clf.delta_w[i] = inv;
    return clf;
  }
  if (!selection) {
    selection.emplace();
    for (std::size_t i = 0; i < params.k; ++i) selection->push_back(i);
  }
  if (selection->size() != params.k) throw ConfigError("theory.k", "selection size must equal k");
  for (auto i : *selection) {
    if (i >= d) throw ConfigError("theory.selection", "weak feature index out of range");
    if (clf.delta_w[i + 1] != 0.0) throw ConfigError("theory.selection", "duplicate weak feature index");
    clf.delta_w[i + 1] = inv;
  }
  return clf;
}

namespace {

void fill_batch(const TheoryParams& params, Rng& rng, std::size_t n, std::vector<double>& x, std::vector<int>& y) {
  const std::size_t dim = params.input_dim();
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  x.resize(n * dim);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = uniform01(rng) < 0.5 ? -1 : 1;
    y[i] = label;
    double* row = x.data() + i * dim;
    row[0] = uniform01(rng) < params.p ? label : -label;
    const double mean = params.eta * label;
    for (std::size_t j = 1; j < dim; ++j) row[j] = mean + normal(rng);
  }
}

}  // namespace

TheorySample sample(const TheoryParams& params, std::size_t n, std::uint64_t seed) {
  params.validate();
  if (n < 1) throw ConfigError("theory.n", "must be at least 1");
  TheorySample s;
  s.dim = params.input_dim();
  Rng rng(derive_seed(seed, {0x74686579}));
  fill_batch(params, rng, n, s.x, s.y);
  return s;
}

namespace {

// d * w^T x given y = +1 is Gaussian with mean (k+d) * shift and this std.
double scaled_score_std(const TheoryParams& params) {
  const double d = static_cast<double>(params.d), k = static_cast<double>(params.k);
  return params.layout == Layout::Disjoint ? std::sqrt(k + d) : std::sqrt(d + 3.0 * k);
}

}  // namespace

double ft_accuracy_closed(const TheoryParams& params) { return adv_accuracy_closed(params, 0.0); }

double eta_lower_bound(std::size_t k, std::size_t d, double target_accuracy) {
  if (!(target_accuracy >= 0.5 && target_accuracy < 1.0))
    throw ConfigError("target_accuracy", "must lie in [0.5, 1)");
  if (d < 1 || k > d) throw ConfigError("theory.k", "requires d >= 1 and 0 <= k <= d");
  return normal_quantile(target_accuracy) / std::sqrt(static_cast<double>(k + d));
}

double adv_accuracy_closed(const TheoryParams& params, double epsilon) {
  params.validate();
  if (!(epsilon >= 0.0)) throw ConfigError("attack.epsilon", "must be >= 0");
  const double kd = static_cast<double>(params.k + params.d);
  return normal_cdf(kd * (params.eta - epsilon) / scaled_score_std(params));
}

Tensor margin_loss(const Tensor& x, const std::vector<double>& w, std::span<const int> y) {
  const std::size_t n = x.dim(0);
  std::vector<double> ys(y.begin(), y.end());
  Tensor scores = ops::matmul(x, Tensor::from({w.size(), 1}, w));
  return ops::scale(ops::sum(ops::mul(scores, Tensor::from({n, 1}, std::move(ys)))), -1.0 / static_cast<double>(n));
}

Estimate monte_carlo_accuracy(const LinearFtClassifier& clf, const TheoryParams& params, std::size_t n,
                              double epsilon, std::uint64_t seed, const MonteCarloOptions& opts) {
  params.validate();
  if (clf.dim() != params.input_dim()) throw DimensionError("classifier dimension does not match the input layout");
  if (n < 1000) throw ConfigError("theory.n", "Monte-Carlo estimates need n >= 1000");
  AttackConfig attack;
  attack.epsilon = epsilon;
  attack.alpha = opts.alpha_ratio * epsilon;
  attack.steps = opts.pgd_steps;
  attack.clamp_lo = -std::numeric_limits<double>::infinity();
  attack.clamp_hi = std::numeric_limits<double>::infinity();
  attack.validate();
  const auto w = clf.weights();
  const std::size_t dim = params.input_dim();
  Rng rng(derive_seed(seed, {0x6d63}));
  std::vector<double> x;
  std::vector<int> y;
  std::size_t correct = 0;
  for (std::size_t done = 0; done < n;) {
    const std::size_t b = std::min(opts.batch, n - done);
    fill_batch(params, rng, b, x, y);
    if (epsilon > 0.0) {
      Tensor adv = pgd([&](const Tensor& xt) { return margin_loss(xt, w, y); }, Tensor::from({b, dim}, x), attack);
      x.assign(adv.data().begin(), adv.data().end());
    }
    for (std::size_t i = 0; i < b; ++i) correct += clf.predict({x.data() + i * dim, dim}) == y[i];
    done += b;
  }
  Estimate est;
  est.n = n;
  est.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  est.std_error = std::sqrt(std::max(est.accuracy * (1.0 - est.accuracy), 1e-300) / static_cast<double>(n));
  return est;
}

}  // namespace ftlab::theory
