#include <doctest.h>

#include <cmath>

#include "fundus/losses.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {
Tensor row(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return Tensor({1, 1, 1, n}, std::move(v));
}
}  // namespace

TEST_CASE("discriminator loss examples") {
  CHECK(adv_loss_discriminator(Tensor({1, 1, 4, 4}, 1.0), Tensor({1, 1, 4, 4}, 0.0)) == 0.0);
  CHECK(adv_loss_discriminator(Tensor({1, 1, 4, 4}, 0.0), Tensor({1, 1, 4, 4}, 1.0)) == 2.0);
  CHECK(adv_loss_discriminator(row({0.5, 1.0}), row({0.5})) == doctest::Approx(0.375).epsilon(1e-15));
}

TEST_CASE("generator loss examples") {
  CHECK(adv_loss_generator(Tensor({1, 1, 3, 3}, 1.0)) == 0.0);
  CHECK(adv_loss_generator(Tensor({1, 1, 3, 3}, 0.0)) == 1.0);
  CHECK(adv_loss_generator(Tensor({1, 1, 3, 3}, 0.5)) == 0.25);
}

TEST_CASE("cycle loss examples") {
  const Tensor x = oracle::random_tensor({2, 3, 4, 4}, 1);
  const Tensor y = oracle::random_tensor({2, 3, 4, 4}, 2);
  CHECK(cycle_consistency_loss(x, x, y, y) == 0.0);
  Tensor shifted = x;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 1.0;
  CHECK(cycle_consistency_loss(x, shifted, y, y) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cycle_consistency_loss(row({0, 2}), row({1, 1}), row({3}), row({0})) == 4.0);
  CHECK_THROWS(cycle_consistency_loss(x, y, row({1}), row({1, 2})));
}

TEST_CASE("full objective examples") {
  const LossWeights ten{10.0};
  CHECK(full_objective(0, 0, 0, ten) == 0.0);
  CHECK(full_objective(1, 1, 0.5, ten) == 7.0);
  CHECK(full_objective(0.3, 0.7, 99, LossWeights{0.0}) == 1.0);
  CHECK_THROWS(LossWeights{-1.0}.validate());
  CHECK_THROWS(LossWeights{INFINITY}.validate());
}

TEST_CASE("losses reject non-finite scores") {
  Tensor bad({1, 1, 2, 2}, 0.5);
  bad[2] = NAN;
  CHECK_THROWS(adv_loss_generator(bad));
  CHECK_THROWS(adv_loss_discriminator(bad, Tensor({1, 1, 2, 2})));
  CHECK_THROWS(adv_loss_discriminator(Tensor({1, 1, 2, 2}), bad));
  CHECK_THROWS(full_objective(1.0, NAN, 0.0, LossWeights{}));
}

TEST_CASE("loss properties") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor a = oracle::random_tensor({1, 1, 5, 5}, seed, -2, 2);
    const Tensor b = oracle::random_tensor({1, 1, 5, 5}, seed + 50, -2, 2);
    const Tensor c = oracle::random_tensor({2, 3, 4, 4}, seed + 100);
    const Tensor d = oracle::random_tensor({2, 3, 4, 4}, seed + 150);
    CHECK(adv_loss_discriminator(a, b) >= 0.0);
    CHECK(adv_loss_generator(a) >= 0.0);
    // Symmetric under swapping the two cycle pairs.
    CHECK(cycle_consistency_loss(c, d, a, b) == cycle_consistency_loss(a, b, c, d));
    // Affine in lambda.
    const double base = full_objective(0.2, 0.9, 1.7, LossWeights{0.0});
    for (double lam : {0.5, 1.0, 10.0, 123.0}) {
      CHECK(full_objective(0.2, 0.9, 1.7, LossWeights{lam}) ==
            doctest::Approx(base + lam * 1.7).epsilon(1e-15));
    }
  }
  // adv_loss_discriminator(s, s) over constant maps: (c-1)^2 + c^2, minimum 0.5 at 0.5.
  double best = INFINITY;
  double argmin = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double c = i / 1000.0;
    const double v = adv_loss_discriminator(Tensor({1, 1, 3, 3}, c), Tensor({1, 1, 3, 3}, c));
    if (v < best) {
      best = v;
      argmin = c;
    }
  }
  CHECK(argmin == 0.5);
  CHECK(best == 0.5);
}

TEST_CASE("loss gradients match finite differences") {
  const Tensor r0 = oracle::random_tensor({2, 1, 3, 3}, 3);
  const Tensor f0 = oracle::random_tensor({2, 1, 3, 3}, 4);
  // Cycle inputs bounded away from the |.| kink.
  const Tensor x0 = oracle::random_tensor({1, 3, 4, 4}, 5, 0.0, 1.0);
  Tensor xc0 = x0;
  for (std::size_t i = 0; i < xc0.size(); ++i) xc0[i] += (i % 2 ? 0.3 : -0.3);
  oracle::GradCheck gc;
  {
    const Var r(r0, true), f(f0, true);
    adv_loss_discriminator(r, f).backward();
    oracle::check_tensor([&](const Tensor& t) { return adv_loss_discriminator(t, f0); }, r0,
                         r.grad(), "real", gc, 100, 1e-5);
    oracle::check_tensor([&](const Tensor& t) { return adv_loss_discriminator(r0, t); }, f0,
                         f.grad(), "fake", gc, 100, 1e-5);
  }
  {
    const Var f(f0, true);
    adv_loss_generator(f).backward();
    oracle::check_tensor([&](const Tensor& t) { return adv_loss_generator(t); }, f0, f.grad(),
                         "gen", gc, 100, 1e-5);
  }
  {
    const Var xc(xc0, true);
    const Var x(x0);
    cycle_consistency_loss(x, xc, x, xc).backward();
    oracle::check_tensor([&](const Tensor& t) { return cycle_consistency_loss(x0, t, x0, t); },
                         xc0, xc.grad(), "cyc", gc, 100, 1e-5);
  }
  {
    const Var a(Tensor::scalar(0.4), true), b(Tensor::scalar(1.3), true),
        c(Tensor::scalar(2.2), true);
    full_objective(a, b, c, LossWeights{10.0}).backward();
    CHECK(a.grad()[0] == 1.0);
    CHECK(b.grad()[0] == 1.0);
    CHECK(c.grad()[0] == 10.0);
  }
  INFO(gc.worst);
  CHECK(gc.kinks == 0);
  CHECK(gc.max_rel_error < 1e-6);
}
