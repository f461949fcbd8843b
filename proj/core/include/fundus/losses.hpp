#pragma once

#include "fundus/autograd.hpp"

namespace fundus {

/// Weight of the cycle-consistency term in the full objective.
struct LossWeights {
  double lambda_cyc = 10.0;
  void validate() const;
};

// Least-squares patch scoring: real patches target 1, generated ones 0.

/// mean((real - 1)^2) + mean(fake^2)
Var adv_loss_discriminator(const Var& scores_real, const Var& scores_fake);
/// mean((fake - 1)^2)
Var adv_loss_generator(const Var& scores_fake);
/// mean|x - x_cyc| + mean|y - y_cyc|
Var cycle_consistency_loss(const Var& x, const Var& x_cyc, const Var& y,
                           const Var& y_cyc);
/// adv1 + adv2 + lambda * cyc
Var full_objective(const Var& adv1, const Var& adv2, const Var& cyc,
                   const LossWeights& w);

double adv_loss_discriminator(const Tensor& scores_real,
                              const Tensor& scores_fake);
double adv_loss_generator(const Tensor& scores_fake);
double cycle_consistency_loss(const Tensor& x, const Tensor& x_cyc,
                              const Tensor& y, const Tensor& y_cyc);
double full_objective(double adv1, double adv2, double cyc,
                      const LossWeights& w);

}  // namespace fundus
