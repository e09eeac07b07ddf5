#pragma once

// L-infinity projected gradient descent and adversarial accuracy.

#include <cstdint>
#include <functional>
#include <span>

#include "ftlab/dataset.hpp"
#include "ftlab/model.hpp"
#include "ftlab/tensor.hpp"

namespace ftlab {

struct AttackConfig {
  double epsilon = 1.0 / 255.0;
  double alpha = 0.25 / 255.0;
  std::size_t steps = 15;
  bool random_start = false;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;
  std::uint64_t seed = 0;  // random_start only

  void validate() const;  // ConfigError naming "attack.<field>"
};

// Scalar loss as a differentiable function of the input batch.
using InputLoss = std::function<Tensor(const Tensor& x)>;
// Called after every iteration with the current iterate and the loss at the
// iterate the step was taken from.
using PgdObserver = std::function<void(std::size_t step, std::span<const double> x, double loss)>;

// Gradient ascent on `loss`: x <- clip(x + alpha * sign(grad), ball(x0), clamp).
// Throws AttackError naming the step on a non-finite loss or gradient.
Tensor pgd(const InputLoss& loss, const Tensor& x0, const AttackConfig& cfg, const PgdObserver& observer = {});

// Fraction of samples still classified correctly after a PGD attack on the
// mean cross-entropy. `forward` must not require parameter gradients.
double robust_accuracy(const Classifier& forward, const Dataset& data, const AttackConfig& cfg,
                       std::size_t batch_size = 128);

}  // namespace ftlab
