#pragma once

#include "m2m/nn/losses.hpp"

namespace m2m::cyclegan {

using nn::LossValue;
using nn::Tensor;

// Least-squares generator term: mean (D(G(x)) - 1)^2. Gradient w.r.t. the scores.
template <typename T>
LossValue<T> loss_adv_generator(const Tensor<T>& d_on_generated) {
  return nn::lsq_mean(d_on_generated, 1.0);
}

// Mean L1 between x and its round trip. Gradient w.r.t. the round trip.
template <typename T>
LossValue<T> loss_cycle(const Tensor<T>& x, const Tensor<T>& x_roundtrip) {
  return nn::l1_mean(x_roundtrip, x);
}

// Mean L1 between a target-domain sample and the generator applied to it.
// Gradient w.r.t. the generator output.
template <typename T>
LossValue<T> loss_identity(const Tensor<T>& y, const Tensor<T>& g_of_y) {
  return nn::l1_mean(g_of_y, y);
}

struct LossWeights {
  double alpha = 1.0;   // adversarial
  double beta = 10.0;   // cycle
  double gamma = 5.0;   // identity
};

struct GeneratorLossParts {
  double adv = 0.0;
  double cycle = 0.0;
  double id = 0.0;
};

inline double total_generator_loss(const GeneratorLossParts& parts, const LossWeights& w) {
  return w.alpha * parts.adv + w.beta * parts.cycle + w.gamma * parts.id;
}

template <typename T>
struct DiscriminatorLoss {
  double value = 0.0;
  Tensor<T> grad_fake;
  Tensor<T> grad_real;
};

// mean(D(fake)^2) + mean((D(real) - 1)^2).
template <typename T>
DiscriminatorLoss<T> loss_discriminator(const Tensor<T>& d_on_fake, const Tensor<T>& d_on_real) {
  auto fake = nn::lsq_mean(d_on_fake, 0.0);
  auto real = nn::lsq_mean(d_on_real, 1.0);
  return {fake.value + real.value, std::move(fake.grad), std::move(real.grad)};
}

}  // namespace m2m::cyclegan
