#include <doctest.h>

#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <thread>

#include "fundus/metrics.hpp"
#include "support/oracles.hpp"

using namespace fundus;

namespace {
Tensor image8(Shape s, std::uint64_t seed) {
  Tensor t = oracle::random_tensor(s, seed, 0.0, 255.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::floor(t[i]);
  return t;
}
Tensor mask(Shape s, std::uint64_t seed, double p = 0.5) {
  Rng rng(seed);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform() < p ? 1.0 : 0.0;
  return t;
}
}  // namespace

TEST_CASE("psnr examples") {
  const Tensor a = image8({1, 3, 8, 8}, 1);
  CHECK(psnr(a, a) == kInfinitePsnr);
  CHECK(psnr(Tensor({1, 1, 4, 4}, 0.0), Tensor({1, 1, 4, 4}, 255.0)) == 0.0);
  Tensor b = Tensor({1, 3, 8, 8}, 100.0);
  Tensor c = Tensor({1, 3, 8, 8}, 116.0);
  CHECK(psnr(b, c) == doctest::Approx(10.0 * std::log10(65025.0 / 256.0)).epsilon(1e-14));
  CHECK(std::abs(psnr(b, c) - 24.0490) < 1e-3);
  CHECK_THROWS(psnr(a, Tensor({1, 3, 8, 7})));
  CHECK_THROWS(psnr(a, a, 0.0));
}

TEST_CASE("psnr agrees with the direct formula and is symmetric") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor a = image8({1, 3, 32, 32}, s);
    const Tensor b = image8({1, 3, 32, 32}, s + 100);
    CHECK(std::abs(psnr(a, b) - oracle::psnr(a, b, 255.0)) < 1e-8);
    CHECK(psnr(a, b) == psnr(b, a));
  }
}

TEST_CASE("psnr decreases strictly with the offset magnitude") {
  const Tensor a = Tensor({1, 1, 16, 16}, 100.0);
  double prev = INFINITY;
  for (int d = 1; d <= 100; ++d) {
    const double v = psnr(a, Tensor({1, 1, 16, 16}, 100.0 + d));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("ssim examples") {
  const Tensor a = image8({1, 3, 16, 16}, 2);
  CHECK(ssim(a, a) == 1.0);
  const double c1 = std::pow(0.01 * 255, 2);
  for (auto [mu, d] : {std::pair{50.0, 10.0}, {0.0, 255.0}, {128.0, -3.0}}) {
    const double want = (2 * mu * (mu + d) + c1) / (mu * mu + (mu + d) * (mu + d) + c1);
    CHECK(ssim(Tensor({1, 1, 12, 12}, mu), Tensor({1, 1, 12, 12}, mu + d)) ==
          doctest::Approx(want).epsilon(1e-12));
  }
  // Zero-mean structured pattern against its negation on a signed scale.
  Tensor pat({1, 1, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) pat.at(0, 0, y, x) = ((x + y) % 2 ? 1.0 : -1.0) * (0.6 + 0.4 * std::sin(0.5 * x + 0.3 * y));
  Tensor neg = pat;
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
  CHECK(ssim(pat, neg, 2.0) < 0.0);
  CHECK(ssim(pat, neg, 2.0) == doctest::Approx(oracle::ssim(pat, neg, 2.0)).epsilon(1e-9));
  CHECK_THROWS(ssim(Tensor({1, 1, 10, 16}), Tensor({1, 1, 10, 16})));
}

TEST_CASE("ssim agrees with the direct 2-D window oracle") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor a = image8({1, 3, 32, 32}, s);
    Tensor b = a;
    Rng rng(s);
    for (std::size_t i = 0; i < b.size(); ++i) {
      b[i] = std::clamp(b[i] + std::round(40 * rng.normal()), 0.0, 255.0);
    }
    const double got = ssim(a, b);
    CHECK(std::abs(got - oracle::ssim(a, b, 255.0)) < 1e-6);
    CHECK(ssim(b, a) == doctest::Approx(got).epsilon(1e-14));
    CHECK(std::abs(got) <= 1.0);
    CHECK(ssim(b, b) == 1.0);
  }
}

TEST_CASE("gaussian taps are normalized and symmetric") {
  const auto g = gaussian_taps(11, 1.5);
  REQUIRE(g.size() == 11);
  double s = 0;
  for (double v : g) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  for (int i = 0; i < 5; ++i) CHECK(g[i] == g[10 - i]);
}

TEST_CASE("confusion count examples") {
  const Tensor ones({1, 1, 4, 4}, 1.0);
  CHECK(confusion_counts(ones, ones) == ConfusionCounts{16, 0, 0, 0});
  const Tensor gt = mask({1, 1, 8, 8}, 3);
  Tensor comp = gt;
  for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = 1.0 - comp[i];
  const auto c = confusion_counts(comp, gt);
  CHECK(c.tp == 0);
  CHECK(c.tn == 0);
  const Tensor pred({1, 1, 2, 2}, {1, 0, 1, 1});
  const Tensor g({1, 1, 2, 2}, {1, 1, 0, 1});
  CHECK(confusion_counts(pred, g) == ConfusionCounts{2, 1, 0, 1});
  CHECK_THROWS(confusion_counts(Tensor({1, 1, 2, 2}, 0.5), g));
  CHECK_THROWS(confusion_counts(pred, Tensor({1, 1, 2, 3})));
}

TEST_CASE("confusion counts match the brute-force counter") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Tensor p = mask({1, 1, 16, 16}, s, 0.3 + 0.004 * s);
    const Tensor g = mask({1, 1, 16, 16}, s + 1000);
    const auto got = confusion_counts(p, g);
    const auto want = oracle::confusion(p, g);
    CHECK(got.tp == want.tp);
    CHECK(got.fp == want.fp);
    CHECK(got.tn == want.tn);
    CHECK(got.fn == want.fn);
    CHECK(got.total() == 256u);
    const auto sc = segmentation_scores(got);
    CHECK(std::abs(sc.f1 - 2 * sc.jaccard / (1 + sc.jaccard)) < 1e-12);
  }
}

TEST_CASE("segmentation score examples") {
  const auto perfect = segmentation_scores({10, 0, 6, 0});
  CHECK(perfect.jaccard == 1.0);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.accuracy == 1.0);
  CHECK_FALSE(perfect.degenerate);
  const auto s = segmentation_scores({2, 1, 0, 1});
  CHECK(s.jaccard == 0.5);
  CHECK(s.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.accuracy == 0.5);
  const auto empty = segmentation_scores({0, 0, 25, 0});
  CHECK(empty.jaccard == 1.0);
  CHECK(empty.f1 == 1.0);
  CHECK(empty.recall == 1.0);
  CHECK(empty.precision == 1.0);
  CHECK(empty.accuracy == 1.0);
  CHECK(empty.degenerate);
  CHECK_THROWS(segmentation_scores({0, 0, 0, 0}));
}

TEST_CASE("timing report") {
  std::vector<int> inputs(10, 0);
  const Timing fast = timing_report([](int) {}, std::span<const int>(inputs));
  CHECK(fast.count == 10);
  CHECK(std::isfinite(fast.images_per_second));
  CHECK(fast.images_per_second > 0);
  std::vector<int> three(3, 0);
  const Timing slow = timing_report(
      [](int) { std::this_thread::sleep_for(std::chrono::milliseconds(100)); },
      std::span<const int>(three));
  CHECK(slow.images_per_second == doctest::Approx(10.0).epsilon(0.2));
  std::vector<int> one(1, 0);
  const Timing single = timing_report(
      [](int) { std::this_thread::sleep_for(std::chrono::milliseconds(5)); },
      std::span<const int>(one));
  CHECK(single.seconds_per_image == single.total_seconds);
}

TEST_CASE("histograms and reports") {
  const std::vector<double> v{9.0, 10.0, 10.5, 39.99, 40.0, INFINITY};
  const Histogram h = histogram(v, {10.0, 40.0, 1.0});
  CHECK(h.edges.size() == 31);
  CHECK(h.counts.size() == 30);
  CHECK(h.underflow == 1);
  CHECK(h.overflow == 1);
  CHECK(h.counts[0] == 2);
  CHECK(h.counts[29] == 2);
  const auto specs = default_histogram_specs();
  CHECK(specs.at("psnr").width == 1.0);
  CHECK(specs.at("ssim").width == 0.02);

  EvalReport a, b;
  a.add("img1", "psnr", 20.0);
  a.add("img1", "ssim", 0.5);
  b.add("img2", "psnr", INFINITY);
  b.add("img2", "ssim", 1.0);
  b.add("img3", "psnr", 30.0);
  b.add("img3", "ssim", 0.75);
  EvalReport ab = a, ba = b;
  ab.merge(b);
  ba.merge(a);
  CHECK(ab.to_jsonl() == ba.to_jsonl());
  CHECK(ab.image_count() == 3);
  CHECK(ab.mean("ssim") == doctest::Approx(0.75).epsilon(1e-12));
  const auto first = nlohmann::json::parse(ab.to_jsonl().substr(0, ab.to_jsonl().find('\n')));
  CHECK(first["id"] == "img1");
  const auto summary = nlohmann::json::parse(ab.summary_json(default_histogram_specs()));
  CHECK(summary.contains("histograms"));
  CHECK(summary["histograms"]["psnr"]["counts"].size() == 30);
  CHECK(summary["images"] == 3);
}
