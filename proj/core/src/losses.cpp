#include "fundus/losses.hpp"
#include "fundus/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace fundus {

void LossWeights::validate() const {
  if (!std::isfinite(lambda_cyc) || lambda_cyc < 0.0) {
    throw std::invalid_argument("lambda_cyc must be finite and >= 0");
  }
}

Var adv_loss_discriminator(const Var& scores_real, const Var& scores_fake) {
  return ag::add(ag::mean_squared_to(scores_real, 1.0),
                 ag::mean_squared_to(scores_fake, 0.0));
}

Var adv_loss_generator(const Var& scores_fake) {
  return ag::mean_squared_to(scores_fake, 1.0);
}

Var cycle_consistency_loss(const Var& x, const Var& x_cyc, const Var& y,
                           const Var& y_cyc) {
  return ag::add(ag::mean_abs_diff(x, x_cyc), ag::mean_abs_diff(y, y_cyc));
}

Var full_objective(const Var& adv1, const Var& adv2, const Var& cyc,
                   const LossWeights& w) {
  w.validate();
  for (const Var* v : {&adv1, &adv2, &cyc}) {
    if (!v->value().all_finite()) {
      throw NonFiniteInput("full_objective: non-finite term");
    }
  }
  return ag::add(ag::add(adv1, adv2), ag::scale(cyc, w.lambda_cyc));
}

double adv_loss_discriminator(const Tensor& scores_real,
                              const Tensor& scores_fake) {
  return adv_loss_discriminator(Var(scores_real), Var(scores_fake)).value()[0];
}

double adv_loss_generator(const Tensor& scores_fake) {
  return adv_loss_generator(Var(scores_fake)).value()[0];
}

double cycle_consistency_loss(const Tensor& x, const Tensor& x_cyc,
                              const Tensor& y, const Tensor& y_cyc) {
  return cycle_consistency_loss(Var(x), Var(x_cyc), Var(y), Var(y_cyc))
      .value()[0];
}

double full_objective(double adv1, double adv2, double cyc,
                      const LossWeights& w) {
  return full_objective(Var(Tensor::scalar(adv1)), Var(Tensor::scalar(adv2)),
                        Var(Tensor::scalar(cyc)), w)
      .value()[0];
}

}  // namespace fundus
