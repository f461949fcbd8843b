#include "fundus/autograd.hpp"
#include "fundus/errors.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace fundus {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

Tensor& detail::Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (!node_->grad.empty()) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

Var Var::make(Tensor value, std::vector<Var> inputs,
              std::function<void(detail::Node&)> backward) {
  Var out(std::move(value), false);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(inputs.size());
  for (auto& in : inputs) out.node_->parents.push_back(in.node_);
  out.node_->backward = std::move(backward);
  return out;
}

void Var::backward() const {
  if (node_->value.size() != 1) {
    throw std::invalid_argument("backward() needs a single-element root, got " +
                                shape().str());
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS yields a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      detail::Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

namespace ag {
namespace {

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw NonFiniteInput(std::string(op) + ": non-finite input");
  }
}

// Gathers receptive fields of one (C, H, W) sample into a
// (C * k * k, out_h * out_w) row-major matrix. Zero padding.
void im2col(const double* x, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, double* col) {
  for (int c = 0; c < channels; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = col;
        col += static_cast<std::size_t>(out_h) * out_w;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          double* dst = row + static_cast<std::size_t>(oh) * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < width) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-adds columns back into a (C, H, W) sample.
void col2im(const double* col, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, double* x) {
  for (int c = 0; c < channels; ++c) {
    double* plane = x + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = col;
        col += static_cast<std::size_t>(out_h) * out_w;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          const double* src = row + static_cast<std::size_t>(oh) * out_w;
          double* dst = plane + static_cast<std::size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void check_bias(const std::optional<Var>& bias, int channels, const char* op) {
  if (!bias) return;
  const Shape& s = bias->shape();
  if (s.n != 1 || s.c != channels || s.h != 1 || s.w != 1) {
    throw std::invalid_argument(std::string(op) + ": bias must be (1, " +
                                std::to_string(channels) + ", 1, 1), got " +
                                s.str());
  }
}

void add_bias(Tensor& out, const Tensor& bias) {
  const Shape& s = out.shape();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      double* p = out.plane(n, c);
      const double b = bias[c];
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += b;
    }
  }
}

void accumulate_bias_grad(const Tensor& gout, detail::Node& bias) {
  const Shape& s = gout.shape();
  Tensor& gb = bias.grad_buffer();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = gout.plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      gb[c] += acc;
    }
  }
}

template <typename F, typename G>
Var unary(const Var& x, F&& fwd, G&& dfdx_from_out) {
  Tensor out(x.shape());
  const Tensor& in = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return Var::make(std::move(out), {x},
                   [dfdx_from_out](detail::Node& self) {
                     detail::Node& xn = *self.parents[0];
                     if (!xn.requires_grad) return;
                     Tensor& gx = xn.grad_buffer();
                     for (std::size_t i = 0; i < gx.size(); ++i) {
                       gx[i] += self.grad[i] *
                                dfdx_from_out(xn.value[i], self.value[i]);
                     }
                   });
}

Var scalar_result(double v, const Var& x,
                  std::function<void(detail::Node&)> backward) {
  return Var::make(Tensor::scalar(v), {x}, std::move(backward));
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const std::optional<Var>& bias,
           Conv2dOptions opt) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw std::invalid_argument("conv2d: weight " + ws.str() +
                                " incompatible with input " + xs.str());
  }
  if (opt.stride < 1 || opt.padding < 0) {
    throw std::invalid_argument("conv2d: invalid stride/padding");
  }
  check_bias(bias, ws.n, "conv2d");
  const int k = ws.h;
  const int out_h = (xs.h + 2 * opt.padding - k) / opt.stride + 1;
  const int out_w = (xs.w + 2 * opt.padding - k) / opt.stride + 1;
  if (xs.h + 2 * opt.padding < k || xs.w + 2 * opt.padding < k) {
    throw std::invalid_argument("conv2d: input " + xs.str() +
                                " smaller than kernel " + std::to_string(k));
  }
  const int kdim = xs.c * k * k;
  const int pix = out_h * out_w;
  const bool keep_cols = weight.requires_grad();

  Tensor out(Shape{xs.n, ws.n, out_h, out_w});
  auto cols = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(keep_cols ? xs.n : 1) * kdim * pix);
  ConstMatMap w(weight.value().data(), ws.n, kdim);
  for (int n = 0; n < xs.n; ++n) {
    double* col = cols->data() +
                  (keep_cols ? static_cast<std::size_t>(n) * kdim * pix : 0);
    im2col(x.value().plane(n, 0), xs.c, xs.h, xs.w, k, opt.stride,
           opt.padding, out_h, out_w, col);
    MatMap o(out.plane(n, 0), ws.n, pix);
    o.noalias() = w * ConstMatMap(col, kdim, pix);
  }
  if (bias) add_bias(out, bias->value());

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return Var::make(
      std::move(out), std::move(inputs),
      [cols, xs, ws, k, opt, out_h, out_w, kdim, pix,
       has_bias = bias.has_value()](detail::Node& self) {
        detail::Node& xn = *self.parents[0];
        detail::Node& wn = *self.parents[1];
        const Tensor& g = self.grad;
        if (wn.requires_grad) {
          MatMap gw(wn.grad_buffer().data(), ws.n, kdim);
          for (int n = 0; n < xs.n; ++n) {
            gw.noalias() +=
                ConstMatMap(g.plane(n, 0), ws.n, pix) *
                ConstMatMap(cols->data() + static_cast<std::size_t>(n) * kdim *
                                               pix,
                            kdim, pix)
                    .transpose();
          }
        }
        if (has_bias && self.parents[2]->requires_grad) {
          accumulate_bias_grad(g, *self.parents[2]);
        }
        if (xn.requires_grad) {
          ConstMatMap w(wn.value.data(), ws.n, kdim);
          RowMat dcol(kdim, pix);
          Tensor& gx = xn.grad_buffer();
          for (int n = 0; n < xs.n; ++n) {
            dcol.noalias() =
                w.transpose() * ConstMatMap(g.plane(n, 0), ws.n, pix);
            col2im(dcol.data(), xs.c, xs.h, xs.w, k, opt.stride, opt.padding,
                   out_h, out_w, gx.plane(n, 0));
          }
        }
      });
}

Var conv_transpose2d(const Var& x, const Var& weight,
                     const std::optional<Var>& bias,
                     ConvTranspose2dOptions opt) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();  // (Cin, Cout, k, k)
  if (ws.n != xs.c || ws.h != ws.w) {
    throw std::invalid_argument("conv_transpose2d: weight " + ws.str() +
                                " incompatible with input " + xs.str());
  }
  if (opt.stride < 1 || opt.padding < 0 || opt.output_padding < 0 ||
      opt.output_padding >= opt.stride) {
    throw std::invalid_argument("conv_transpose2d: invalid geometry");
  }
  check_bias(bias, ws.c, "conv_transpose2d");
  const int k = ws.h;
  const int out_h =
      (xs.h - 1) * opt.stride - 2 * opt.padding + k + opt.output_padding;
  const int out_w =
      (xs.w - 1) * opt.stride - 2 * opt.padding + k + opt.output_padding;
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("conv_transpose2d: empty output");
  }
  const int cols_rows = ws.c * k * k;
  const int pix = xs.h * xs.w;

  Tensor out(Shape{xs.n, ws.c, out_h, out_w});
  ConstMatMap w(weight.value().data(), ws.n, cols_rows);
  RowMat col(cols_rows, pix);
  for (int n = 0; n < xs.n; ++n) {
    col.noalias() = w.transpose() * ConstMatMap(x.value().plane(n, 0), xs.c, pix);
    col2im(col.data(), ws.c, out_h, out_w, k, opt.stride, opt.padding, xs.h,
           xs.w, out.plane(n, 0));
  }
  if (bias) add_bias(out, bias->value());

  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return Var::make(
      std::move(out), std::move(inputs),
      [xs, ws, k, opt, out_h, out_w, cols_rows, pix,
       has_bias = bias.has_value()](detail::Node& self) {
        detail::Node& xn = *self.parents[0];
        detail::Node& wn = *self.parents[1];
        const Tensor& g = self.grad;
        if (has_bias && self.parents[2]->requires_grad) {
          accumulate_bias_grad(g, *self.parents[2]);
        }
        if (!xn.requires_grad && !wn.requires_grad) return;
        RowMat gcol(cols_rows, pix);
        ConstMatMap w(wn.value.data(), ws.n, cols_rows);
        for (int n = 0; n < xs.n; ++n) {
          im2col(g.plane(n, 0), ws.c, out_h, out_w, k, opt.stride, opt.padding,
                 xs.h, xs.w, gcol.data());
          if (wn.requires_grad) {
            MatMap gw(wn.grad_buffer().data(), ws.n, cols_rows);
            gw.noalias() +=
                ConstMatMap(xn.value.plane(n, 0), xs.c, pix) * gcol.transpose();
          }
          if (xn.requires_grad) {
            MatMap gx(xn.grad_buffer().plane(n, 0), xs.c, pix);
            gx.noalias() += w * gcol;
          }
        }
      });
}

Var instance_norm(const Var& x, const Var& scale, const Var& offset,
                  double eps) {
  const Shape s = x.shape();
  for (const Var* p : {&scale, &offset}) {
    const Shape& ps = p->shape();
    if (ps.n != 1 || ps.c != s.c || ps.h != 1 || ps.w != 1) {
      throw std::invalid_argument("instance_norm: affine params must be (1, " +
                                  std::to_string(s.c) + ", 1, 1)");
    }
  }
  const std::size_t plane = s.plane();
  auto xhat = std::make_shared<Tensor>(s);
  auto inv_std = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(s.n) * s.c);
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double mu = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mu += p[i];
      mu /= static_cast<double>(plane);
      double var = 0.0;
      for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= static_cast<double>(plane);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(n) * s.c + c] = is;
      double* xh = xhat->plane(n, c);
      double* o = out.plane(n, c);
      const double g = scale.value()[c];
      const double b = offset.value()[c];
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mu) * is;
        o[i] = g * xh[i] + b;
      }
    }
  }
  return Var::make(
      std::move(out), {x, scale, offset},
      [xhat, inv_std, s, plane](detail::Node& self) {
        detail::Node& xn = *self.parents[0];
        detail::Node& gn = *self.parents[1];
        detail::Node& bn = *self.parents[2];
        const double count = static_cast<double>(plane);
        for (int n = 0; n < s.n; ++n) {
          for (int c = 0; c < s.c; ++c) {
            const double* g = self.grad.plane(n, c);
            const double* xh = xhat->plane(n, c);
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[i];
              sum_gx += g[i] * xh[i];
            }
            if (gn.requires_grad) gn.grad_buffer()[c] += sum_gx;
            if (bn.requires_grad) bn.grad_buffer()[c] += sum_g;
            if (xn.requires_grad) {
              const double gamma = gn.value[c];
              const double is = (*inv_std)[static_cast<std::size_t>(n) * s.c + c];
              double* dx = xn.grad_buffer().plane(n, c);
              const double k = gamma * is / count;
              for (std::size_t i = 0; i < plane; ++i) {
                dx[i] += k * (count * g[i] - sum_g - xh[i] * sum_gx);
              }
            }
          }
        }
      });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double in, double) { return in > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double out) { return out * (1.0 - out); });
}

Var add(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return Var::make(std::move(out), {a, b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      detail::Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      Tensor& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  auto ok = [](int ae, int be) { return be == ae || be == 1; };
  if (!ok(as.n, bs.n) || !ok(as.c, bs.c) || !ok(as.h, bs.h) ||
      !ok(as.w, bs.w)) {
    throw std::invalid_argument("mul: cannot broadcast " + bs.str() + " to " +
                                as.str());
  }
  // Index of b's element for a's (n, c, h, w).
  auto b_index = [as, bs](int n, int c, int h, int w) {
    const int bn = bs.n == 1 ? 0 : n;
    const int bc = bs.c == 1 ? 0 : c;
    const int bh = bs.h == 1 ? 0 : h;
    const int bw = bs.w == 1 ? 0 : w;
    return ((static_cast<std::size_t>(bn) * bs.c + bc) * bs.h + bh) * bs.w + bw;
  };
  Tensor out(as);
  std::size_t i = 0;
  for (int n = 0; n < as.n; ++n)
    for (int c = 0; c < as.c; ++c)
      for (int h = 0; h < as.h; ++h)
        for (int w = 0; w < as.w; ++w, ++i)
          out[i] = a.value()[i] * b.value()[b_index(n, c, h, w)];
  return Var::make(std::move(out), {a, b}, [as, b_index](detail::Node& self) {
    detail::Node& an = *self.parents[0];
    detail::Node& bn = *self.parents[1];
    Tensor* ga = an.requires_grad ? &an.grad_buffer() : nullptr;
    Tensor* gb = bn.requires_grad ? &bn.grad_buffer() : nullptr;
    std::size_t i = 0;
    for (int n = 0; n < as.n; ++n)
      for (int c = 0; c < as.c; ++c)
        for (int h = 0; h < as.h; ++h)
          for (int w = 0; w < as.w; ++w, ++i) {
            const std::size_t j = b_index(n, c, h, w);
            if (ga) (*ga)[i] += self.grad[i] * bn.value[j];
            if (gb) (*gb)[j] += self.grad[i] * an.value[i];
          }
  });
}

Var scale(const Var& a, double k) {
  return unary(
      a, [k](double v) { return k * v; }, [k](double, double) { return k; });
}

Var global_avg_pool(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      out.at(n, c, 0, 0) = acc * inv;
    }
  return Var::make(std::move(out), {x}, [s, inv](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor& g = xn.grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const double d = self.grad.at(n, c, 0, 0) * inv;
        double* p = g.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) p[i] += d;
      }
  });
}

Var global_max_pool(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, 1, 1});
  auto arg = std::make_shared<std::vector<std::size_t>>(
      static_cast<std::size_t>(s.n) * s.c);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      const std::size_t best =
          static_cast<std::size_t>(std::max_element(p, p + s.plane()) - p);
      (*arg)[static_cast<std::size_t>(n) * s.c + c] = best;
      out.at(n, c, 0, 0) = p[best];
    }
  return Var::make(std::move(out), {x}, [s, arg](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor& g = xn.grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        g.plane(n, c)[(*arg)[static_cast<std::size_t>(n) * s.c + c]] +=
            self.grad.at(n, c, 0, 0);
  });
}

Var channel_mean(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  const double inv = 1.0 / s.c;
  for (int n = 0; n < s.n; ++n) {
    double* o = out.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] += p[i];
    }
    for (std::size_t i = 0; i < s.plane(); ++i) o[i] *= inv;
  }
  return Var::make(std::move(out), {x}, [s, inv](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor& g = xn.grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      const double* go = self.grad.plane(n, 0);
      for (int c = 0; c < s.c; ++c) {
        double* p = g.plane(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) p[i] += go[i] * inv;
      }
    }
  });
}

Var channel_max(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  auto arg = std::make_shared<std::vector<int>>(
      static_cast<std::size_t>(s.n) * s.plane(), 0);
  for (int n = 0; n < s.n; ++n) {
    double* o = out.plane(n, 0);
    int* a = arg->data() + static_cast<std::size_t>(n) * s.plane();
    const double* first = x.value().plane(n, 0);
    std::copy(first, first + s.plane(), o);
    for (int c = 1; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        if (p[i] > o[i]) {
          o[i] = p[i];
          a[i] = c;
        }
      }
    }
  }
  return Var::make(std::move(out), {x}, [s, arg](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor& g = xn.grad_buffer();
    for (int n = 0; n < s.n; ++n) {
      const double* go = self.grad.plane(n, 0);
      const int* a = arg->data() + static_cast<std::size_t>(n) * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) g.plane(n, a[i])[i] += go[i];
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape as = a.shape();
  const Shape bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw std::invalid_argument("concat_channels: " + as.str() + " vs " +
                                bs.str());
  }
  Tensor out(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t plane = as.plane();
  for (int n = 0; n < as.n; ++n) {
    std::copy(a.value().plane(n, 0), a.value().plane(n, 0) + as.c * plane,
              out.plane(n, 0));
    std::copy(b.value().plane(n, 0), b.value().plane(n, 0) + bs.c * plane,
              out.plane(n, as.c));
  }
  return Var::make(std::move(out), {a, b}, [as, bs, plane](detail::Node& self) {
    detail::Node& an = *self.parents[0];
    detail::Node& bn = *self.parents[1];
    for (int n = 0; n < as.n; ++n) {
      if (an.requires_grad) {
        const double* g = self.grad.plane(n, 0);
        double* d = an.grad_buffer().plane(n, 0);
        for (std::size_t i = 0; i < as.c * plane; ++i) d[i] += g[i];
      }
      if (bn.requires_grad) {
        const double* g = self.grad.plane(n, as.c);
        double* d = bn.grad_buffer().plane(n, 0);
        for (std::size_t i = 0; i < bs.c * plane; ++i) d[i] += g[i];
      }
    }
  });
}

Var max_pool2x2(const Var& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw std::invalid_argument("max_pool2x2: odd spatial size " + s.str());
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  auto arg = std::make_shared<std::vector<std::size_t>>(os.numel());
  std::size_t o = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const double* p = x.value().plane(n, c);
      for (int i = 0; i < os.h; ++i)
        for (int j = 0; j < os.w; ++j, ++o) {
          std::size_t best = static_cast<std::size_t>(2 * i) * s.w + 2 * j;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const std::size_t idx =
                  static_cast<std::size_t>(2 * i + di) * s.w + 2 * j + dj;
              if (p[idx] > p[best]) best = idx;
            }
          (*arg)[o] = best;
          out[o] = p[best];
        }
    }
  return Var::make(std::move(out), {x}, [s, os, arg](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor& g = xn.grad_buffer();
    const std::size_t per = os.plane();
    for (std::size_t o = 0; o < os.numel(); ++o) {
      const std::size_t nc = o / per;
      g.data()[nc * s.plane() + (*arg)[o]] += self.grad[o];
    }
  });
}

Var mean(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x.value().size());
  return scalar_result(x.value().sum() * inv, x, [inv](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const double d = self.grad[0] * inv;
    for (double& g : xn.grad_buffer().values()) g += d;
  });
}

Var sum(const Var& x) {
  return scalar_result(x.value().sum(), x, [](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    const double d = self.grad[0];
    for (double& g : xn.grad_buffer().values()) g += d;
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  if (weights.shape() != x.shape()) {
    throw std::invalid_argument("weighted_sum: shape mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i] * x.value()[i];
  }
  return scalar_result(acc, x, [weights](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor& g = xn.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

Var mean_squared_to(const Var& x, double target) {
  require_finite(x.value(), "mean_squared_to");
  const Tensor& v = x.value();
  double acc = 0.0;
  for (double e : v.values()) acc += (e - target) * (e - target);
  const double inv = 1.0 / static_cast<double>(v.size());
  return scalar_result(acc * inv, x, [target, inv](detail::Node& self) {
    detail::Node& xn = *self.parents[0];
    if (!xn.requires_grad) return;
    Tensor& g = xn.grad_buffer();
    const double d = self.grad[0] * 2.0 * inv;
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += d * (xn.value[i] - target);
    }
  });
}

Var mean_abs_diff(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mean_abs_diff: shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    acc += std::abs(a.value()[i] - b.value()[i]);
  }
  const double inv = 1.0 / static_cast<double>(a.value().size());
  return Var::make(Tensor::scalar(acc * inv), {a, b}, [inv](detail::Node& self) {
    detail::Node& an = *self.parents[0];
    detail::Node& bn = *self.parents[1];
    const double d = self.grad[0] * inv;
    for (std::size_t i = 0; i < an.value.size(); ++i) {
      const double diff = an.value[i] - bn.value[i];
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      if (an.requires_grad) an.grad_buffer()[i] += d * sgn;
      if (bn.requires_grad) bn.grad_buffer()[i] -= d * sgn;
    }
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  if (targets.shape() != logits.shape()) {
    throw std::invalid_argument("bce_with_logits: target shape mismatch");
  }
  const Tensor& z = logits.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    acc += std::max(z[i], 0.0) - z[i] * targets[i] +
           std::log1p(std::exp(-std::abs(z[i])));
  }
  const double inv = 1.0 / static_cast<double>(z.size());
  return scalar_result(acc * inv, logits, [targets, inv](detail::Node& self) {
    detail::Node& zn = *self.parents[0];
    if (!zn.requires_grad) return;
    Tensor& g = zn.grad_buffer();
    const double d = self.grad[0] * inv;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-zn.value[i]));
      g[i] += d * (p - targets[i]);
    }
  });
}

}  // namespace ag
}  // namespace fundus
