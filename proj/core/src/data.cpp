#include "fundus/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>
#include <stdexcept>

#include "fundus/errors.hpp"

namespace fs = std::filesystem;

namespace fundus {

std::string to_string(QualityLabel l) {
  switch (l) {
    case QualityLabel::high: return "high";
    case QualityLabel::low: return "low";
    case QualityLabel::unknown: return "unknown";
  }
  return "unknown";
}

QualityLabel parse_quality_label(const std::string& s) {
  if (s == "high") return QualityLabel::high;
  if (s == "low") return QualityLabel::low;
  if (s == "unknown") return QualityLabel::unknown;
  throw DataError("unknown quality label: " + s);
}

void ImageSample::validate() const {
  if (pixels.channels != 3 || pixels.height < 1 || pixels.width < 1 ||
      pixels.data.size() != static_cast<std::size_t>(3) * pixels.height *
                                pixels.width) {
    throw DataError("sample " + id + ": pixels must be a 3-channel image");
  }
  if (mask) {
    if (mask->channels != 1 || mask->height != pixels.height ||
        mask->width != pixels.width) {
      throw DataError("sample " + id + ": mask does not match image size");
    }
    for (auto v : mask->data) {
      if (v > 1) throw DataError("sample " + id + ": mask must be binary");
    }
  }
}

void UnpairedDataset::validate() const {
  std::set<std::string> ids;
  for (const auto& s : low) ids.insert(s.id);
  for (const auto& s : high) {
    if (ids.count(s.id)) {
      throw DataError("id " + s.id + " appears in both the low and high pool");
    }
  }
}

namespace {

Image8 from_mat_rgb(const cv::Mat& bgr) {
  Image8 img(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(0, y, x) = row[x][2];
      img.at(1, y, x) = row[x][1];
      img.at(2, y, x) = row[x][0];
    }
  }
  return img;
}

cv::Mat to_mat(const Image8& img) {
  if (img.channels == 1) {
    cv::Mat m(img.height, img.width, CV_8UC1);
    std::copy(img.data.begin(), img.data.end(), m.data);
    return m;
  }
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      row[x] = cv::Vec3b(img.at(2, y, x), img.at(1, y, x), img.at(0, y, x));
    }
  }
  return m;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::optional<fs::path> find_with_stem(const fs::path& dir,
                                       const std::string& stem) {
  for (const char* ext : {".png", ".jpg", ".jpeg", ".gif", ".tif"}) {
    fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

std::uint8_t clip_round(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

}  // namespace

FolderLoad load_image_folder(const fs::path& dir, QualityLabel label,
                             Resolution res,
                             const std::optional<fs::path>& mask_dir) {
  if (!fs::is_directory(dir)) {
    throw DataError("not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) {
              return a.filename().string() < b.filename().string();
            });

  FolderLoad out;
  for (const auto& f : files) {
    cv::Mat bgr = cv::imread(f.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
      out.warnings.push_back("skipping undecodable image " + f.string());
      spdlog::warn("skipping undecodable image {}", f.string());
      continue;
    }
    if (bgr.rows != res.height || bgr.cols != res.width) {
      cv::Mat resized;
      cv::resize(bgr, resized, cv::Size(res.width, res.height), 0, 0,
                 cv::INTER_LINEAR);
      bgr = resized;
    }
    ImageSample s;
    s.id = f.stem().string();
    s.pixels = from_mat_rgb(bgr);
    s.label = label;
    if (mask_dir) {
      if (auto mp = find_with_stem(*mask_dir, s.id)) {
        cv::Mat m = cv::imread(mp->string(), cv::IMREAD_GRAYSCALE);
        if (m.empty()) {
          out.warnings.push_back("skipping undecodable mask " + mp->string());
          spdlog::warn("skipping undecodable mask {}", mp->string());
        } else {
          if (m.rows != res.height || m.cols != res.width) {
            cv::Mat r;
            cv::resize(m, r, cv::Size(res.width, res.height), 0, 0,
                       cv::INTER_NEAREST);
            m = r;
          }
          Image8 mask(1, res.height, res.width);
          for (int y = 0; y < m.rows; ++y) {
            for (int x = 0; x < m.cols; ++x) {
              mask.at(0, y, x) = m.at<std::uint8_t>(y, x) >= 128 ? 1 : 0;
            }
          }
          s.mask = std::move(mask);
        }
      }
    }
    out.samples.push_back(std::move(s));
  }
  if (out.samples.empty()) {
    throw DataError("no images found in " + dir.string());
  }
  return out;
}

void write_png(const fs::path& path, const Image8& img) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) {
      throw DataError("cannot create " + path.parent_path().string() + ": " +
                      ec.message());
    }
  }
  if (!cv::imwrite(path.string(), to_mat(img))) {
    throw DataError("cannot write " + path.string());
  }
}

void write_mask_png(const fs::path& path, const Image8& mask) {
  Image8 scaled = mask;
  for (auto& v : scaled.data) v = v ? 255 : 0;
  write_png(path, scaled);
}

Tensor normalize(const Image8& img, RangeKind kind) {
  Tensor t(Shape{1, img.channels, img.height, img.width});
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = img.data[i];
    t[i] = kind == RangeKind::signed_unit ? v / 127.5 - 1.0 : v / 255.0;
  }
  return t;
}

Image8 denormalize(const Tensor& t, RangeKind kind, int batch_index) {
  const Shape& s = t.shape();
  Image8 img(s.c, s.h, s.w);
  const double* src = t.plane(batch_index, 0);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = kind == RangeKind::signed_unit ? (src[i] + 1.0) * 127.5
                                                    : src[i] * 255.0;
    img.data[i] = clip_round(v);
  }
  return img;
}

Tensor to_tensor(const Image8& img) {
  Tensor t(Shape{1, img.channels, img.height, img.width});
  for (std::size_t i = 0; i < img.data.size(); ++i) t[i] = img.data[i];
  return t;
}

Tensor mask_to_tensor(const Image8& mask) {
  if (mask.channels != 1) throw std::invalid_argument("mask must be 1 channel");
  return to_tensor(mask);
}

std::string to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::hflip: return "hflip";
    case AugmentOp::vflip: return "vflip";
    case AugmentOp::rot90: return "rot90";
    case AugmentOp::rot180: return "rot180";
    case AugmentOp::rot270: return "rot270";
  }
  return "?";
}

AugmentOp inverse(AugmentOp op) {
  switch (op) {
    case AugmentOp::rot90: return AugmentOp::rot270;
    case AugmentOp::rot270: return AugmentOp::rot90;
    default: return op;
  }
}

Image8 augment(const Image8& img, AugmentOp op) {
  const int h = img.height;
  const int w = img.width;
  const bool swap = op == AugmentOp::rot90 || op == AugmentOp::rot270;
  Image8 out(img.channels, swap ? w : h, swap ? h : w);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        int sy = y, sx = x;
        switch (op) {
          case AugmentOp::hflip: sx = w - 1 - x; break;
          case AugmentOp::vflip: sy = h - 1 - y; break;
          case AugmentOp::rot180:
            sy = h - 1 - y;
            sx = w - 1 - x;
            break;
          case AugmentOp::rot90:  // counter-clockwise
            sy = x;
            sx = w - 1 - y;
            break;
          case AugmentOp::rot270:
            sy = h - 1 - x;
            sx = y;
            break;
        }
        out.at(c, y, x) = img.at(c, sy, sx);
      }
    }
  }
  return out;
}

ImageSample augment(const ImageSample& s, AugmentOp op) {
  ImageSample out = s;
  out.pixels = augment(s.pixels, op);
  if (s.mask) out.mask = augment(*s.mask, op);
  return out;
}

std::string to_string(DegradeKind k) {
  switch (k) {
    case DegradeKind::blur: return "blur";
    case DegradeKind::low_illum: return "low_illum";
    case DegradeKind::high_illum: return "high_illum";
    case DegradeKind::uneven_illum: return "uneven_illum";
    case DegradeKind::color_distort: return "color_distort";
  }
  return "?";
}

DegradeKind parse_degrade_kind(const std::string& s) {
  for (auto k : kAllDegradeKinds) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown degradation kind: " + s);
}

void DegradeParams::validate() const {
  auto bad = [](const std::string& what) {
    throw std::invalid_argument("degrade: " + what);
  };
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) bad("sigma must be >= 0");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) bad("gamma must be > 0");
  if (!(gain >= 0.0) || !std::isfinite(gain)) bad("gain must be >= 0");
  if (!(radius > 0.0)) bad("radius must be > 0");
  if (!(depth >= 0.0 && depth <= 1.0)) bad("depth must be in [0, 1]");
  for (double g : channel_gains) {
    if (!(g > 0.0) || !std::isfinite(g)) bad("channel gains must be > 0");
  }
}

DegradeParams DegradeParams::defaults(DegradeKind kind) {
  DegradeParams p;
  p.kind = kind;
  switch (kind) {
    case DegradeKind::blur: p.sigma = 2.0; break;
    case DegradeKind::low_illum: p.gamma = 2.2; p.gain = 0.5; break;
    case DegradeKind::high_illum: p.gamma = 0.7; p.gain = 1.4; break;
    case DegradeKind::uneven_illum: p.depth = 0.6; p.radius = 1.0; break;
    case DegradeKind::color_distort: p.channel_gains = {1.3, 1.0, 0.7}; break;
  }
  return p;
}

DegradeParams DegradeParams::draw(DegradeKind kind, Rng& rng) {
  DegradeParams p = defaults(kind);
  switch (kind) {
    case DegradeKind::blur: p.sigma = rng.uniform(1.0, 3.0); break;
    case DegradeKind::low_illum:
      p.gamma = rng.uniform(1.8, 2.6);
      p.gain = rng.uniform(0.4, 0.6);
      break;
    case DegradeKind::high_illum:
      p.gamma = rng.uniform(0.6, 0.8);
      p.gain = rng.uniform(1.3, 1.5);
      break;
    case DegradeKind::uneven_illum:
      p.center_x = rng.uniform(0.3, 0.7);
      p.center_y = rng.uniform(0.3, 0.7);
      p.radius = rng.uniform(0.8, 1.2);
      p.depth = rng.uniform(0.5, 0.7);
      break;
    case DegradeKind::color_distort:
      for (double& g : p.channel_gains) g = rng.uniform(0.6, 1.4);
      break;
  }
  return p;
}

namespace {

// Reflect-101 index into [0, n).
int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

Image8 gaussian_blur(const Image8& img, double sigma) {
  if (sigma == 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += taps[i + radius];
  }
  for (double& t : taps) t /= total;

  const int h = img.height;
  const int w = img.width;
  Image8 out(img.channels, h, w);
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          acc += taps[t + radius] * img.at(c, y, reflect(x + t, w));
        }
        tmp[static_cast<std::size_t>(y) * w + x] = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          acc += taps[t + radius] *
                 tmp[static_cast<std::size_t>(reflect(y + t, h)) * w + x];
        }
        out.at(c, y, x) = clip_round(acc);
      }
    }
  }
  return out;
}

double smoothstep(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

ImageSample degrade(const ImageSample& s, const DegradeParams& p) {
  p.validate();
  ImageSample out = s;
  out.label = QualityLabel::low;
  Image8& img = out.pixels;
  switch (p.kind) {
    case DegradeKind::blur:
      img = gaussian_blur(s.pixels, p.sigma);
      break;
    case DegradeKind::low_illum:
    case DegradeKind::high_illum:
      for (auto& v : img.data) {
        v = clip_round(255.0 * std::pow(v / 255.0, p.gamma) * p.gain);
      }
      break;
    case DegradeKind::uneven_illum: {
      const double cx = p.center_x * (img.width - 1);
      const double cy = p.center_y * (img.height - 1);
      const double scale = p.radius * std::min(img.width, img.height) / 2.0;
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          const double d = std::hypot(x - cx, y - cy) / scale;
          const double m = 1.0 - p.depth * smoothstep(d);
          for (int c = 0; c < img.channels; ++c) {
            img.at(c, y, x) = clip_round(s.pixels.at(c, y, x) * m);
          }
        }
      }
      break;
    }
    case DegradeKind::color_distort:
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < img.height; ++y) {
          for (int x = 0; x < img.width; ++x) {
            img.at(c, y, x) =
                clip_round(s.pixels.at(c, y, x) * p.channel_gains[c]);
          }
        }
      }
      break;
  }
  return out;
}

std::vector<std::size_t> sample_without_replacement(std::size_t pool,
                                                    std::size_t n, Rng& rng) {
  if (n > pool) {
    throw DataError("cannot draw " + std::to_string(n) + " from a pool of " +
                    std::to_string(pool));
  }
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first n slots become the draw.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.index(pool - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

EpochSubset sample_epoch_subset(const UnpairedDataset& ds, std::size_t n_low,
                                std::size_t n_high, std::uint64_t seed,
                                std::uint64_t epoch) {
  if (n_low > ds.low.size()) {
    throw DataError("subset of " + std::to_string(n_low) +
                    " exceeds the low-quality pool (" +
                    std::to_string(ds.low.size()) + ")");
  }
  if (n_high > ds.high.size()) {
    throw DataError("subset of " + std::to_string(n_high) +
                    " exceeds the high-quality pool (" +
                    std::to_string(ds.high.size()) + ")");
  }
  Rng rng = Rng::derive(seed, epoch);
  EpochSubset sub;
  sub.low = sample_without_replacement(ds.low.size(), n_low, rng);
  sub.high = sample_without_replacement(ds.high.size(), n_high, rng);
  return sub;
}

ImageSample synthesize_fundus(const std::string& id, Resolution res,
                              std::uint64_t seed) {
  Rng rng(seed);
  const int h = res.height;
  const int w = res.width;
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  const double disc = 0.47 * std::min(h, w);

  // Vessel tree rasterized into a mask first; the colour pass reads it.
  cv::Mat vessels = cv::Mat::zeros(h, w, CV_8UC1);
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double od_x = cx + side * 0.35 * disc;
  const double od_y = cy + rng.uniform(-0.1, 0.1) * disc;
  const double od_r = 0.14 * disc;
  const int base_width = std::max(1, static_cast<int>(std::lround(w / 96.0)));

  struct Branch {
    double x, y, angle;
    int width;
    int depth;
  };
  std::vector<Branch> todo;
  const int trunks = 4 + static_cast<int>(rng.index(3));
  for (int i = 0; i < trunks; ++i) {
    const double a = 2.0 * std::numbers::pi * (i + rng.uniform(0.0, 0.6)) / trunks;
    todo.push_back({od_x, od_y, a, base_width + 1, 0});
  }
  const double step = std::max(2.0, disc / 14.0);
  while (!todo.empty()) {
    Branch b = todo.back();
    todo.pop_back();
    const int segments = 8 + static_cast<int>(rng.index(6));
    for (int s = 0; s < segments; ++s) {
      b.angle += rng.uniform(-0.35, 0.35);
      const double nx = b.x + step * std::cos(b.angle);
      const double ny = b.y + step * std::sin(b.angle);
      if (std::hypot(nx - cx, ny - cy) > disc * 0.97) break;
      cv::line(vessels, cv::Point(static_cast<int>(std::lround(b.x)),
                                  static_cast<int>(std::lround(b.y))),
               cv::Point(static_cast<int>(std::lround(nx)),
                         static_cast<int>(std::lround(ny))),
               cv::Scalar(1), b.width, cv::LINE_8);
      b.x = nx;
      b.y = ny;
      if (b.depth < 2 && s > 2 && rng.uniform() < 0.18) {
        const double turn = rng.uniform() < 0.5 ? -0.7 : 0.7;
        todo.push_back({b.x, b.y, b.angle + turn, std::max(1, b.width - 1),
                        b.depth + 1});
      }
    }
  }

  ImageSample out;
  out.id = id;
  out.label = QualityLabel::high;
  out.pixels = Image8(3, h, w);
  Image8 mask(1, h, w);
  const double tint = rng.uniform(-12.0, 12.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = std::hypot(x - cx, y - cy) / disc;
      if (r > 1.0) continue;
      const double shade = 1.0 - 0.35 * r * r;
      const double texture =
          4.0 * std::sin(0.31 * x + phase) * std::cos(0.27 * y - phase);
      double red = (205.0 + tint) * shade + texture;
      double green = 92.0 * shade + 0.5 * texture;
      double blue = 48.0 * shade;
      const double od = std::hypot(x - od_x, y - od_y) / od_r;
      if (od < 1.0) {
        const double k = 1.0 - od * od;
        red += 45.0 * k;
        green += 120.0 * k;
        blue += 70.0 * k;
      }
      const bool vessel = vessels.at<std::uint8_t>(y, x) != 0;
      if (vessel) {
        red *= 0.55;
        green *= 0.4;
        blue *= 0.5;
        mask.at(0, y, x) = 1;
      }
      out.pixels.at(0, y, x) = clip_round(red);
      out.pixels.at(1, y, x) = clip_round(green);
      out.pixels.at(2, y, x) = clip_round(blue);
    }
  }
  out.mask = std::move(mask);
  return out;
}

}  // namespace fundus
