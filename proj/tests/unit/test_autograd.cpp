#include <doctest.h>

#include <cmath>

#include "fundus/autograd.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {

// Gradient of sum(w * op(x)) for a fixed random w, checked entry by entry.
double check_unary(const std::function<Var(const Var&)>& op, const Tensor& x0,
                   std::uint64_t seed = 9) {
  const Var x(x0, true);
  const Var y = op(x);
  const Tensor w = oracle::random_tensor(y.shape(), seed);
  ag::weighted_sum(y, w).backward();
  oracle::GradCheck gc;
  oracle::check_tensor(
      [&](const Tensor& t) { return ag::weighted_sum(op(Var(t)), w).value()[0]; },
      x0, x.grad(), "x", gc, 64);
  return gc.max_rel_error;
}

}  // namespace

TEST_CASE("conv2d matches the direct loop oracle") {
  const Tensor x = oracle::random_tensor({2, 3, 9, 7}, 1);
  const Tensor w = oracle::random_tensor({4, 3, 3, 3}, 2);
  const Tensor b = oracle::random_tensor({1, 4, 1, 1}, 3);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1, 2}) {
      const Tensor got =
          ag::conv2d(Var(x), Var(w), Var(b), {stride, pad}).value();
      const Tensor want = oracle::conv2d(x, w, b, stride, pad);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv_transpose2d matches the scatter oracle") {
  const Tensor x = oracle::random_tensor({2, 3, 5, 4}, 4);
  const Tensor w = oracle::random_tensor({3, 2, 3, 3}, 5);
  const Tensor b = oracle::random_tensor({1, 2, 1, 1}, 6);
  for (auto [stride, pad, opad] : {std::tuple{2, 1, 1}, {1, 1, 0}, {2, 0, 0}, {1, 0, 0}}) {
    const Tensor got =
        ag::conv_transpose2d(Var(x), Var(w), Var(b), {stride, pad, opad}).value();
    const Tensor want = oracle::conv_transpose2d(x, w, b, stride, pad, opad);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("stride-2 transpose with output padding doubles the extent") {
  const Var x(Tensor({1, 1, 8, 6}, 1.0));
  const Var w(Tensor({1, 1, 3, 3}, 1.0));
  CHECK(ag::conv_transpose2d(x, w, std::nullopt, {2, 1, 1}).shape() == Shape{1, 1, 16, 12});
}

TEST_CASE("convolution gradients match finite differences") {
  const Tensor x0 = oracle::random_tensor({2, 2, 6, 5}, 7);
  const Tensor w0 = oracle::random_tensor({3, 2, 3, 3}, 8);
  const Tensor b0 = oracle::random_tensor({1, 3, 1, 1}, 9);
  auto forward = [](const Var& x, const Var& w, const Var& b) {
    return ag::conv2d(x, w, b, {2, 1});
  };
  const Var x(x0, true), w(w0, true), b(b0, true);
  const Var y = forward(x, w, b);
  const Tensor m = oracle::random_tensor(y.shape(), 10);
  ag::weighted_sum(y, m).backward();
  oracle::GradCheck gc;
  auto f = [&](const Tensor& xv, const Tensor& wv, const Tensor& bv) {
    return ag::weighted_sum(forward(Var(xv), Var(wv), Var(bv)), m).value()[0];
  };
  oracle::check_tensor([&](const Tensor& t) { return f(t, w0, b0); }, x0, x.grad(), "x", gc, 100);
  oracle::check_tensor([&](const Tensor& t) { return f(x0, t, b0); }, w0, w.grad(), "w", gc, 100);
  oracle::check_tensor([&](const Tensor& t) { return f(x0, w0, t); }, b0, b.grad(), "b", gc, 100);
  CHECK(gc.max_rel_error < 1e-6);
}

TEST_CASE("transpose convolution gradients match finite differences") {
  const Tensor x0 = oracle::random_tensor({1, 3, 4, 5}, 11);
  const Tensor w0 = oracle::random_tensor({3, 2, 3, 3}, 12);
  const Tensor b0 = oracle::random_tensor({1, 2, 1, 1}, 13);
  auto forward = [](const Var& x, const Var& w, const Var& b) {
    return ag::conv_transpose2d(x, w, b, {2, 1, 1});
  };
  const Var x(x0, true), w(w0, true), b(b0, true);
  const Var y = forward(x, w, b);
  const Tensor m = oracle::random_tensor(y.shape(), 14);
  ag::weighted_sum(y, m).backward();
  oracle::GradCheck gc;
  auto f = [&](const Tensor& xv, const Tensor& wv, const Tensor& bv) {
    return ag::weighted_sum(forward(Var(xv), Var(wv), Var(bv)), m).value()[0];
  };
  oracle::check_tensor([&](const Tensor& t) { return f(t, w0, b0); }, x0, x.grad(), "x", gc, 100);
  oracle::check_tensor([&](const Tensor& t) { return f(x0, t, b0); }, w0, w.grad(), "w", gc, 100);
  oracle::check_tensor([&](const Tensor& t) { return f(x0, w0, t); }, b0, b.grad(), "b", gc, 100);
  CHECK(gc.max_rel_error < 1e-6);
}

TEST_CASE("instance norm standardizes each sample and channel") {
  const Tensor x0 = oracle::random_tensor({2, 3, 4, 4}, 15, -3.0, 5.0);
  const Var y = ag::instance_norm(Var(x0), Var(Tensor({1, 3, 1, 1}, 1.0)),
                                  Var(Tensor({1, 3, 1, 1}, 0.0)), 1e-5);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (int i = 0; i < 16; ++i) m += y.value().at(n, c, i / 4, i % 4) / 16;
      for (int i = 0; i < 16; ++i) v += std::pow(y.value().at(n, c, i / 4, i % 4) - m, 2) / 16;
      CHECK(std::abs(m) < 1e-12);
      CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
  }
}

TEST_CASE("instance norm gradients match finite differences") {
  const Tensor x0 = oracle::random_tensor({2, 3, 3, 4}, 16);
  const Tensor s0 = oracle::random_tensor({1, 3, 1, 1}, 17, 0.5, 1.5);
  const Tensor o0 = oracle::random_tensor({1, 3, 1, 1}, 18);
  const Var x(x0, true), s(s0, true), o(o0, true);
  const Tensor m = oracle::random_tensor({2, 3, 3, 4}, 19);
  ag::weighted_sum(ag::instance_norm(x, s, o), m).backward();
  auto f = [&](const Tensor& xv, const Tensor& sv, const Tensor& ov) {
    return ag::weighted_sum(ag::instance_norm(Var(xv), Var(sv), Var(ov)), m).value()[0];
  };
  oracle::GradCheck gc;
  oracle::check_tensor([&](const Tensor& t) { return f(t, s0, o0); }, x0, x.grad(), "x", gc, 72);
  oracle::check_tensor([&](const Tensor& t) { return f(x0, t, o0); }, s0, s.grad(), "s", gc);
  oracle::check_tensor([&](const Tensor& t) { return f(x0, s0, t); }, o0, o.grad(), "o", gc);
  CHECK(gc.max_rel_error < 1e-6);
}

TEST_CASE("pointwise and pooling gradients match finite differences") {
  // Values kept away from the ReLU kink and from max ties.
  Tensor x0 = oracle::random_tensor({2, 3, 4, 6}, 20);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    x0[i] = (x0[i] < 0 ? -0.05 : 0.05) + x0[i] + 1e-3 * static_cast<double>(i);
  }
  CHECK(check_unary([](const Var& v) { return ag::relu(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::leaky_relu(v, 0.2); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::tanh(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::sigmoid(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::scale(v, -2.5); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::global_avg_pool(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::global_max_pool(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::channel_mean(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::channel_max(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::max_pool2x2(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::mean(v); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::mean_squared_to(v, 0.3); }, x0) < 1e-7);
  CHECK(check_unary([](const Var& v) { return ag::concat_channels(v, ag::scale(v, 2.0)); }, x0) < 1e-7);
  const Tensor other = oracle::random_tensor({2, 3, 4, 6}, 21, 2.0, 3.0);
  CHECK(check_unary([&](const Var& v) { return ag::mean_abs_diff(v, Var(other)); }, x0) < 1e-7);
  const Tensor gate = oracle::random_tensor({2, 3, 1, 1}, 22);
  CHECK(check_unary([&](const Var& v) { return ag::mul(v, Var(gate)); }, x0) < 1e-7);
  CHECK(check_unary([&](const Var& v) { return ag::mul(Var(other), ag::global_avg_pool(v)); }, x0) < 1e-7);
  CHECK(check_unary([&](const Var& v) { return ag::mul(v, ag::channel_mean(v)); }, x0) < 1e-7);
  CHECK(check_unary([&](const Var& v) { return ag::add(v, ag::tanh(v)); }, x0) < 1e-7);
}

TEST_CASE("binary cross-entropy with logits") {
  const Tensor logits({1, 1, 1, 4}, {-2.0, 0.0, 1.5, 15.0});
  const Tensor targets({1, 1, 1, 4}, {0.0, 1.0, 1.0, 0.0});
  double want = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits[i]));
    want -= targets[i] * std::log(p) + (1 - targets[i]) * std::log1p(-p);
  }
  const Var l(logits, true);
  const Var loss = ag::bce_with_logits(l, targets);
  CHECK(loss.value()[0] == doctest::Approx(want / 4).epsilon(1e-9));
  loss.backward();
  for (int i = 0; i < 4; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits[i]));
    CHECK(l.grad()[i] == doctest::Approx((p - targets[i]) / 4).epsilon(1e-12));
  }
  // Extreme logits stay finite.
  const Tensor big({1, 1, 1, 2}, {-800.0, 800.0});
  const Tensor tb({1, 1, 1, 2}, {1.0, 0.0});
  CHECK(std::isfinite(ag::bce_with_logits(Var(big), tb).value()[0]));
}

TEST_CASE("a node reused along several paths accumulates its gradient") {
  const Var x(Tensor({1, 1, 1, 3}, {1.0, 2.0, 3.0}), true);
  const Var y = ag::add(ag::mul(x, x), ag::scale(x, 3.0));
  ag::sum(y).backward();
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * (i + 1) + 3.0));
}

TEST_CASE("constants receive no gradient and backward needs a scalar root") {
  const Var x(Tensor({1, 1, 2, 2}, 1.0), false);
  const Var w(Tensor({1, 1, 2, 2}, 2.0), true);
  ag::sum(ag::mul(x, w)).backward();
  CHECK(x.grad().sum() == 0.0);
  CHECK(w.grad().sum() == doctest::Approx(4.0));
  CHECK_THROWS_AS(ag::mul(x, w).backward(), std::invalid_argument);
}

TEST_CASE("operator preconditions") {
  const Var x(Tensor({1, 2, 5, 5}, 1.0));
  CHECK_THROWS(ag::max_pool2x2(x));
  CHECK_THROWS(ag::add(x, Var(Tensor({1, 2, 5, 4}))));
  CHECK_THROWS(ag::conv2d(x, Var(Tensor({1, 3, 3, 3})), std::nullopt, {1, 1}));
  CHECK_THROWS(ag::mul(x, Var(Tensor({1, 3, 1, 1}))));
  CHECK_THROWS(ag::mean_squared_to(Var(Tensor({1, 1, 1, 1}, NAN)), 0.0));
}
