#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fundus/tensor.hpp"

namespace fundus {

/// PSNR of identical images. Serialized as the string "inf".
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(max_val^2 / MSE), or kInfinitePsnr when MSE is zero.
double psnr(const Tensor& a, const Tensor& b, double max_val = 255.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean structural similarity over every valid window position, computed
/// per (batch, channel) plane and averaged.
double ssim(const Tensor& a, const Tensor& b, double max_val = 255.0,
            const SsimOptions& opt = {});

/// Normalized 1-D Gaussian taps of the SSIM window.
std::vector<double> gaussian_taps(int size, double sigma);

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

/// Pixelwise counts of binary masks (vessel = 1).
ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt);

struct SegmentationScores {
  double jaccard = 0.0;
  double f1 = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double accuracy = 0.0;
  /// Set when some ratio was 0/0 and reported as 1.0 by convention.
  bool degenerate = false;
};

SegmentationScores segmentation_scores(const ConfusionCounts& c);

struct Timing {
  std::size_t count = 0;
  double total_seconds = 0.0;
  double seconds_per_image = 0.0;
  double images_per_second = 0.0;
};

/// Throughput from a measured total; guards against zero elapsed time.
Timing make_timing(std::size_t count, double total_seconds);

/// Times `op` over every input after one untimed warm-up call.
template <typename Op, typename T>
Timing timing_report(Op&& op, std::span<const T> inputs) {
  if (inputs.empty()) return {};
  op(inputs.front());
  const auto start = std::chrono::steady_clock::now();
  for (const auto& in : inputs) op(in);
  const std::chrono::duration<double> elapsed =
      std::chrono::steady_clock::now() - start;
  return make_timing(inputs.size(), elapsed.count());
}

struct HistogramSpec {
  double lo = 0.0;
  double hi = 1.0;
  double width = 0.1;
};

struct Histogram {
  std::vector<double> edges;
  std::vector<std::uint64_t> counts;
  std::uint64_t underflow = 0;
  std::uint64_t overflow = 0;  // includes infinite values
};

Histogram histogram(std::span<const double> values, const HistogramSpec& spec);

/// Default bins: PSNR 1 dB over [10, 40], SSIM 0.02 over [0, 1].
std::map<std::string, HistogramSpec> default_histogram_specs();

/// Per-image metric records plus aggregates. Records are keyed by image
/// id, so merging partial reports is order independent.
class EvalReport {
 public:
  void add(const std::string& image_id, const std::string& metric,
           double value);
  void merge(const EvalReport& other);
  void set_timing(const Timing& t) { timing_ = t; }
  const Timing& timing() const { return timing_; }

  std::vector<std::string> metric_names() const;
  std::vector<double> values(const std::string& metric) const;
  double mean(const std::string& metric) const;
  std::size_t image_count() const { return records_.size(); }
  const std::map<std::string, std::map<std::string, double>>& records() const {
    return records_;
  }

  /// One JSON object per image: {"id": ..., "<metric>": value, ...}.
  std::string to_jsonl() const;
  /// Aggregate object: counts, means, histograms, timing.
  std::string summary_json(
      const std::map<std::string, HistogramSpec>& bins) const;

 private:
  std::map<std::string, std::map<std::string, double>> records_;
  Timing timing_{};
};

}  // namespace fundus
