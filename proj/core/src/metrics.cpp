#include "fundus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>
#include <stdexcept>

#include "fundus/json_util.hpp"

namespace fundus {

double psnr(const Tensor& a, const Tensor& b, double max_val) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("psnr: shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  }
  if (!(max_val > 0.0)) throw std::invalid_argument("psnr: max_val must be > 0");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(max_val * max_val / mse);
}

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(size);
  const double center = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

namespace {

// Separable 'valid' filtering of one plane.
std::vector<double> filter_valid(const double* src, int h, int w,
                                 const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += taps[t] * src[y * w + x + t];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += taps[t] * rows[(y + t) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, double max_val,
            const SsimOptions& opt) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("ssim: shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  }
  const Shape& s = a.shape();
  if (s.h < opt.window || s.w < opt.window) {
    throw std::invalid_argument("ssim: image " + s.str() +
                                " smaller than the " +
                                std::to_string(opt.window) + "px window");
  }
  const double c1 = (opt.k1 * max_val) * (opt.k1 * max_val);
  const double c2 = (opt.k2 * max_val) * (opt.k2 * max_val);
  const auto taps = gaussian_taps(opt.window, opt.sigma);
  const std::size_t plane = s.plane();
  std::vector<double> xx(plane), yy(plane), xy(plane);

  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* x = a.plane(n, c);
      const double* y = b.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
      const auto mx = filter_valid(x, s.h, s.w, taps);
      const auto my = filter_valid(y, s.h, s.w, taps);
      const auto exx = filter_valid(xx.data(), s.h, s.w, taps);
      const auto eyy = filter_valid(yy.data(), s.h, s.w, taps);
      const auto exy = filter_valid(xy.data(), s.h, s.w, taps);
      double acc = 0.0;
      for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = exx[i] - mx[i] * mx[i];
        const double vy = eyy[i] - my[i] * my[i];
        const double cov = exy[i] - mx[i] * my[i];
        const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
        const double den =
            (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        acc += num / den;
      }
      total += acc / static_cast<double>(mx.size());
    }
  }
  return total / (static_cast<double>(s.n) * s.c);
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw std::invalid_argument("confusion_counts: shape mismatch " +
                                pred.shape().str() + " vs " + gt.shape().str());
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    const double g = gt[i];
    if ((p != 0.0 && p != 1.0) || (g != 0.0 && g != 1.0)) {
      throw std::invalid_argument("confusion_counts: masks must be binary");
    }
    if (p == 1.0) {
      (g == 1.0 ? c.tp : c.fp) += 1;
    } else {
      (g == 1.0 ? c.fn : c.tn) += 1;
    }
  }
  return c;
}

SegmentationScores segmentation_scores(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("segmentation_scores: empty confusion counts");
  SegmentationScores s;
  auto ratio = [&s](double num, double den) {
    if (den == 0.0) {
      s.degenerate = true;
      return 1.0;
    }
    return num / den;
  };
  const double tp = static_cast<double>(c.tp);
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);
  const double tn = static_cast<double>(c.tn);
  s.jaccard = ratio(tp, tp + fp + fn);
  s.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
  s.recall = ratio(tp, tp + fn);
  s.precision = ratio(tp, tp + fp);
  s.accuracy = ratio(tp + tn, tp + tn + fp + fn);
  return s;
}

Timing make_timing(std::size_t count, double total_seconds) {
  Timing t;
  t.count = count;
  t.total_seconds = total_seconds;
  if (count == 0) return t;
  t.seconds_per_image = total_seconds / static_cast<double>(count);
  t.images_per_second =
      static_cast<double>(count) / std::max(total_seconds, 1e-9);
  return t;
}

Histogram histogram(std::span<const double> values, const HistogramSpec& spec) {
  if (!(spec.width > 0.0) || !(spec.hi > spec.lo)) {
    throw std::invalid_argument("histogram: invalid bin spec");
  }
  const auto bins =
      static_cast<std::size_t>(std::llround((spec.hi - spec.lo) / spec.width));
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges.push_back(spec.lo + spec.width * static_cast<double>(i));
  }
  for (double v : values) {
    if (std::isnan(v)) continue;
    if (v < spec.lo) {
      ++h.underflow;
    } else if (v > spec.hi) {
      ++h.overflow;
    } else {
      auto bin = static_cast<std::size_t>((v - spec.lo) / spec.width);
      h.counts[std::min(bin, bins - 1)] += 1;
    }
  }
  return h;
}

std::map<std::string, HistogramSpec> default_histogram_specs() {
  return {{"psnr", {10.0, 40.0, 1.0}}, {"ssim", {0.0, 1.0, 0.02}}};
}

void EvalReport::add(const std::string& image_id, const std::string& metric,
                     double value) {
  records_[image_id][metric] = value;
}

void EvalReport::merge(const EvalReport& other) {
  for (const auto& [id, metrics] : other.records_) {
    for (const auto& [name, v] : metrics) records_[id][name] = v;
  }
}

std::vector<std::string> EvalReport::metric_names() const {
  std::set<std::string> names;
  for (const auto& [id, metrics] : records_) {
    for (const auto& [name, v] : metrics) names.insert(name);
  }
  return {names.begin(), names.end()};
}

std::vector<double> EvalReport::values(const std::string& metric) const {
  std::vector<double> v;
  for (const auto& [id, metrics] : records_) {
    if (auto it = metrics.find(metric); it != metrics.end()) {
      v.push_back(it->second);
    }
  }
  return v;
}

double EvalReport::mean(const std::string& metric) const {
  const auto v = values(metric);
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (double e : v) acc += e;
  return acc / static_cast<double>(v.size());
}

std::string EvalReport::to_jsonl() const {
  std::string out;
  for (const auto& [id, metrics] : records_) {
    nlohmann::ordered_json rec;
    rec["id"] = id;
    for (const auto& [name, v] : metrics) rec[name] = json_number(v);
    out += rec.dump() + "\n";
  }
  return out;
}

std::string EvalReport::summary_json(
    const std::map<std::string, HistogramSpec>& bins) const {
  nlohmann::ordered_json s;
  s["images"] = records_.size();
  nlohmann::ordered_json means = nlohmann::ordered_json::object();
  nlohmann::ordered_json hists = nlohmann::ordered_json::object();
  for (const auto& name : metric_names()) {
    means[name] = json_number(mean(name));
    if (auto it = bins.find(name); it != bins.end()) {
      const auto v = values(name);
      const Histogram h = histogram(v, it->second);
      hists[name] = {{"edges", h.edges},
                     {"counts", h.counts},
                     {"underflow", h.underflow},
                     {"overflow", h.overflow}};
    }
  }
  s["means"] = means;
  s["histograms"] = hists;
  if (timing_.count > 0) {
    s["timing"] = {{"images", timing_.count},
                   {"total_seconds", timing_.total_seconds},
                   {"seconds_per_image", timing_.seconds_per_image},
                   {"images_per_second", timing_.images_per_second}};
  } else {
    s["timing"] = nullptr;
  }
  return s.dump(2);
}

}  // namespace fundus
