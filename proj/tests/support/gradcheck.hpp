// Finite-difference check of a whole network: parameters and input, under
// a random linear readout of the output.
#pragma once

#include <functional>

#include "fundus/attention.hpp"
#include "fundus/networks.hpp"
#include "fundus/segnet.hpp"
#include "support/oracles.hpp"
#include "support/tiny.hpp"

namespace oracle {

using Net = std::function<fundus::Var(const fundus::Var&, const fundus::ParamVars&)>;

inline GradCheck network_gradcheck(const Net& net, const fundus::NetParams& params,
                                   const fundus::Tensor& input, std::uint64_t seed,
                                   std::size_t per_tensor = 6, std::size_t input_probes = 24) {
  using namespace fundus;
  const auto pv = ParamVars::leaves(params);
  const Var x(input, true);
  const Var y = net(x, pv);
  const Tensor w = random_tensor(y.shape(), seed);
  ag::weighted_sum(y, w).backward();
  auto value = [&](const NetParams& q, const Tensor& in) {
    return ag::weighted_sum(net(Var(in), ParamVars::constants(q)), w).value()[0];
  };
  auto gc = check_params([&](const NetParams& q) { return value(q, input); }, params,
                         pv.gradients(), per_tensor);
  check_tensor([&](const Tensor& t) { return value(params, t); }, input, x.grad(), "input",
               gc, input_probes);
  return gc;
}

// The four standard cases: attention block, generator, discriminator, UNet.
inline GradCheck cbam_gradcheck() {
  using namespace fundus;
  const CbamSpec spec{4, 3};
  Layout layout;
  append_cbam_layout(layout, "", 8, spec);
  return network_gradcheck(
      [spec](const Var& v, const ParamVars& q) { return cbam_forward(v, spec, q); },
      double_params(layout, 8, 0.5), random_tensor({2, 8, 5, 5}, 9), 10, 64, 200);
}

inline GradCheck generator_gradcheck() {
  using namespace fundus;
  const auto spec = tiny::generator();
  return network_gradcheck(
      [spec](const Var& v, const ParamVars& q) { return generator_forward(v, spec, q); },
      double_params(generator_layout(spec), 6, 0.3), random_tensor({1, 3, 16, 16}, 7), 8);
}

inline GradCheck discriminator_gradcheck() {
  using namespace fundus;
  const auto spec = tiny::discriminator();
  return network_gradcheck(
      [spec](const Var& v, const ParamVars& q) { return discriminator_forward(v, spec, q); },
      double_params(discriminator_layout(spec), 9, 0.3), random_tensor({1, 3, 64, 64}, 10),
      11);
}

inline GradCheck unet_gradcheck() {
  using namespace fundus;
  const auto spec = tiny::unet();
  return network_gradcheck(
      [spec](const Var& v, const ParamVars& q) { return unet_forward(v, spec, q); },
      double_params(unet_layout(spec), 3, 0.3), random_tensor({1, 3, 32, 32}, 4, 0.0, 1.0),
      5, 4);
}

}  // namespace oracle
