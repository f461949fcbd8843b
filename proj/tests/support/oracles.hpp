// Independent reference implementations used by the test suites. Nothing
// here calls into the library's numerical kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "fundus/params.hpp"
#include "fundus/random.hpp"
#include "fundus/tensor.hpp"

namespace oracle {

using fundus::NetParams;
using fundus::Shape;
using fundus::Tensor;

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  fundus::Rng rng(seed);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Seven-loop zero-padded convolution. w is (Cout, Cin, k, k).
inline Tensor conv2d(const Tensor& x, const Tensor& w,
                     const std::optional<Tensor>& b, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int ho = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int wo = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor y(Shape{xs.n, ws.n, ho, wo});
  for (int n = 0; n < xs.n; ++n)
    for (int co = 0; co < ws.n; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b ? b->at(0, co, 0, 0) : 0.0;
          for (int ci = 0; ci < xs.c; ++ci)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                acc += x.at(n, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          y.at(n, co, oy, ox) = acc;
        }
  return y;
}

/// Scatter form of the transposed convolution. w is (Cin, Cout, k, k).
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w,
                               const std::optional<Tensor>& b, int stride,
                               int pad, int out_pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int ho = (xs.h - 1) * stride - 2 * pad + ws.h + out_pad;
  const int wo = (xs.w - 1) * stride - 2 * pad + ws.w + out_pad;
  Tensor y(Shape{xs.n, ws.c, ho, wo});
  for (int n = 0; n < xs.n; ++n)
    for (int ci = 0; ci < xs.c; ++ci)
      for (int iy = 0; iy < xs.h; ++iy)
        for (int ix = 0; ix < xs.w; ++ix)
          for (int co = 0; co < ws.c; ++co)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int oy = iy * stride - pad + ky;
                const int ox = ix * stride - pad + kx;
                if (oy < 0 || ox < 0 || oy >= ho || ox >= wo) continue;
                y.at(n, co, oy, ox) += x.at(n, ci, iy, ix) * w.at(ci, co, ky, kx);
              }
  if (b) {
    for (int n = 0; n < xs.n; ++n)
      for (int co = 0; co < ws.c; ++co)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) y.at(n, co, oy, ox) += b->at(0, co, 0, 0);
  }
  return y;
}

inline double psnr(const Tensor& a, const Tensor& b, double max_val) {
  long double se = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - b[i];
    se += d * d;
  }
  const long double mse = se / a.size();
  if (mse == 0.0L) return std::numeric_limits<double>::infinity();
  return static_cast<double>(10.0L * std::log10(static_cast<long double>(max_val) *
                                                max_val / mse));
}

/// SSIM with a full 2-D Gaussian window evaluated directly at every valid
/// position, per (n, c) plane, averaged.
inline double ssim(const Tensor& a, const Tensor& b, double max_val) {
  constexpr int win = 11;
  constexpr double sigma = 1.5;
  double g[win][win];
  double norm = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double di = i - win / 2;
      const double dj = j - win / 2;
      g[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      norm += g[i][j];
    }
  for (auto& row : g)
    for (double& v : row) v /= norm;
  const double c1 = (0.01 * max_val) * (0.01 * max_val);
  const double c2 = (0.03 * max_val) * (0.03 * max_val);
  const Shape s = a.shape();
  double total = 0.0;
  int planes = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      double plane_sum = 0.0;
      int count = 0;
      for (int y = 0; y + win <= s.h; ++y)
        for (int x = 0; x + win <= s.w; ++x) {
          double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
          for (int i = 0; i < win; ++i)
            for (int j = 0; j < win; ++j) {
              const double va = a.at(n, c, y + i, x + j);
              const double vb = b.at(n, c, y + i, x + j);
              ma += g[i][j] * va;
              mb += g[i][j] * vb;
              aa += g[i][j] * va * va;
              bb += g[i][j] * vb * vb;
              ab += g[i][j] * va * vb;
            }
          const double va = aa - ma * ma;
          const double vb = bb - mb * mb;
          const double cov = ab - ma * mb;
          plane_sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
          ++count;
        }
      total += plane_sum / count;
      ++planes;
    }
  return total / planes;
}

struct Counts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Counts confusion(const Tensor& pred, const Tensor& gt) {
  Counts c;
  const Shape s = pred.shape();
  for (int n = 0; n < s.n; ++n)
    for (int ch = 0; ch < s.c; ++ch)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const bool p = pred.at(n, ch, y, x) == 1.0;
          const bool g = gt.at(n, ch, y, x) == 1.0;
          if (p && g) ++c.tp;
          if (p && !g) ++c.fp;
          if (!p && !g) ++c.tn;
          if (!p && g) ++c.fn;
        }
  return c;
}

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Probes whose +h and -h one-sided slopes disagree: the window straddles
  // a ReLU or max-selection kink, where no finite difference is meaningful.
  std::size_t kinks = 0;
  std::string worst;

  double kink_fraction() const {
    return checked + kinks == 0 ? 0.0 : double(kinks) / double(checked + kinks);
  }
};

/// Central differences of a scalar function of a tensor, compared with an
/// analytic gradient. Probes `per_tensor` entries (all when the tensor is
/// smaller), chosen deterministically; a probe that straddles a kink is
/// counted and replaced by another entry.
inline void check_tensor(const std::function<double(const Tensor&)>& f,
                         const Tensor& at, const Tensor& analytic,
                         const std::string& label, GradCheck& out,
                         std::size_t per_tensor = 8, double h = 1e-5,
                         std::uint64_t seed = 1) {
  fundus::Rng rng(seed);
  const bool exhaustive = at.size() <= per_tensor;
  const std::size_t want = exhaustive ? at.size() : per_tensor;
  Tensor probe = at;
  const double f0 = f(probe);
  std::size_t done = 0;
  for (std::size_t attempt = 0; done < want && attempt < 4 * want; ++attempt) {
    const std::size_t i = exhaustive ? attempt : rng.index(at.size());
    if (exhaustive && i >= at.size()) break;
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    const double fwd = (up - f0) / h;
    const double bwd = (f0 - down) / h;
    if (std::abs(fwd - bwd) > 1e-3 * std::max({std::abs(fwd), std::abs(bwd), 1e-3})) {
      ++out.kinks;
      continue;
    }
    ++done;
    const double numeric = (up - down) / (2.0 * h);
    const double err = rel_error(analytic[i], numeric);
    ++out.checked;
    if (err > out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = label + "[" + std::to_string(i) + "] analytic " +
                  std::to_string(analytic[i]) + " numeric " + std::to_string(numeric);
    }
  }
}

/// Gradient check over every tensor of a parameter set.
inline GradCheck check_params(
    const std::function<double(const NetParams&)>& f, const NetParams& params,
    const NetParams& analytic, std::size_t per_tensor = 8, double h = 1e-5) {
  GradCheck out;
  std::uint64_t seed = 1;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& name = params.entries()[k].name;
    auto eval = [&](const Tensor& t) {
      NetParams p = params;
      p.at(name) = t;
      return f(p);
    };
    check_tensor(eval, params.entries()[k].value, analytic.at(name), name, out,
                 per_tensor, h, seed++);
  }
  return out;
}

/// Fresh Gaussian parameters kept in double precision (no float rounding),
/// with normalization scales perturbed away from 1 so every path matters.
inline NetParams double_params(const fundus::Layout& layout, std::uint64_t seed,
                               double stddev) {
  fundus::Rng rng(seed);
  NetParams p;
  for (const auto& spec : layout) {
    Tensor t(spec.shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      switch (spec.init) {
        case fundus::Init::normal: t[i] = stddev * rng.normal(); break;
        case fundus::Init::zeros: t[i] = 0.1 * rng.normal(); break;
        case fundus::Init::ones: t[i] = 1.0 + 0.1 * rng.normal(); break;
      }
    }
    p.add(spec.name, t);
  }
  return p;
}

}  // namespace oracle
