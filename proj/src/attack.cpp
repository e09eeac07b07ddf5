#include "ftlab/attack.hpp"

#include <algorithm>
#include <cmath>

#include "ftlab/error.hpp"
#include "ftlab/ops.hpp"
#include "ftlab/random.hpp"

namespace ftlab {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack.epsilon", "must be finite and >= 0");
  if (!(alpha >= 0.0) || alpha > epsilon) throw ConfigError("attack.alpha", "must satisfy 0 <= alpha <= epsilon");
  if (steps < 1) throw ConfigError("attack.steps", "must be at least 1");
  if (!(clamp_lo < clamp_hi)) throw ConfigError("attack.clamp", "lower bound must be below upper bound");
}

Tensor pgd(const InputLoss& loss, const Tensor& x0, const AttackConfig& cfg, const PgdObserver& observer) {
  cfg.validate();
  auto origin = x0.data();
  std::vector<double> x(origin.begin(), origin.end());
  for (double v : x)
    if (v < cfg.clamp_lo || v > cfg.clamp_hi) throw DataError("pgd input outside the clamp range");
  if (cfg.epsilon == 0.0) return Tensor::from(x0.shape(), std::move(x));

  auto project = [&](std::size_t i, double v) {
    v = std::clamp(v, origin[i] - cfg.epsilon, origin[i] + cfg.epsilon);
    return std::clamp(v, cfg.clamp_lo, cfg.clamp_hi);
  };
  if (cfg.random_start) {
    Rng rng(derive_seed(cfg.seed, {0x706764}));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = project(i, x[i] + cfg.epsilon * (2.0 * uniform01(rng) - 1.0));
  }
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Tensor xt = Tensor::from(x0.shape(), x, true);
    Tensor l = loss(xt);
    const double value = l.item();
    if (!std::isfinite(value)) throw AttackError(step, "non-finite loss");
    l.backward();
    if (!xt.has_grad()) throw AttackError(step, "loss does not depend on the input");
    auto g = xt.grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(g[i])) throw AttackError(step, "non-finite input gradient");
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      x[i] = project(i, x[i] + cfg.alpha * s);
    }
    if (observer) observer(step, x, value);
  }
  return Tensor::from(x0.shape(), std::move(x));
}

double robust_accuracy(const Classifier& forward, const Dataset& data, const AttackConfig& cfg,
                       std::size_t batch_size) {
  cfg.validate();
  if (data.size() == 0) throw DataError("robust accuracy on empty dataset");
  if (cfg.epsilon == 0.0) return accuracy(forward, data, batch_size);
  std::size_t correct = 0;
  for (std::size_t begin = 0, batch = 0; begin < data.size(); begin += batch_size, ++batch) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::span<const int> labels(data.labels.data() + begin, end - begin);
    AttackConfig c = cfg;
    c.seed = derive_seed(cfg.seed, {batch});
    Tensor adv = pgd([&](const Tensor& x) { return ops::cross_entropy(forward(x), labels); }, data.images(begin, end), c);
    auto pred = predict(forward, adv);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace ftlab
