#include "fundus/segnet.hpp"
#include "fundus/errors.hpp"

#include <stdexcept>
#include <string>

namespace fundus {

namespace {

void add_block(Layout& l, const std::string& prefix, int in, int out,
               const UNetSpec& spec) {
  l.push_back({prefix + ".conv1.weight", {out, in, 3, 3}});
  l.push_back({prefix + ".norm1.scale", {1, out, 1, 1}, Init::ones});
  l.push_back({prefix + ".norm1.offset", {1, out, 1, 1}, Init::zeros});
  l.push_back({prefix + ".conv2.weight", {out, out, 3, 3}});
  l.push_back({prefix + ".norm2.scale", {1, out, 1, 1}, Init::ones});
  l.push_back({prefix + ".norm2.offset", {1, out, 1, 1}, Init::zeros});
  if (spec.use_cbam) append_cbam_layout(l, prefix + ".cbam.", out, spec.cbam);
}

// conv -> IN -> ReLU -> conv -> IN -> ReLU -> [CBAM]
Var block(const Var& x, const std::string& prefix, const UNetSpec& spec,
          const ParamVars& p) {
  const ag::Conv2dOptions same{.stride = 1, .padding = 1};
  Var h = ag::conv2d(x, p[prefix + ".conv1.weight"], std::nullopt, same);
  h = ag::relu(ag::instance_norm(h, p[prefix + ".norm1.scale"],
                                 p[prefix + ".norm1.offset"]));
  h = ag::conv2d(h, p[prefix + ".conv2.weight"], std::nullopt, same);
  h = ag::relu(ag::instance_norm(h, p[prefix + ".norm2.scale"],
                                 p[prefix + ".norm2.offset"]));
  if (spec.use_cbam) h = cbam_forward(h, spec.cbam, p, prefix + ".cbam.");
  return h;
}

}  // namespace

void UNetSpec::validate() const {
  if (levels != 4) {
    throw std::invalid_argument("unet: levels is fixed at 4");
  }
  if (base_filters < 4) {
    throw std::invalid_argument("unet: base_filters must be >= 4");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("unet: threshold must be in (0, 1)");
  }
  if (use_cbam) {
    for (int l = 0; l <= levels; ++l) cbam.validate(filters(l));
  }
}

Layout unet_layout(const UNetSpec& spec) {
  spec.validate();
  Layout l;
  int in = 3;
  for (int lv = 0; lv < spec.levels; ++lv) {
    add_block(l, "enc" + std::to_string(lv), in, spec.filters(lv), spec);
    in = spec.filters(lv);
  }
  add_block(l, "bottleneck", in, spec.filters(spec.levels), spec);
  in = spec.filters(spec.levels);
  for (int lv = spec.levels - 1; lv >= 0; --lv) {
    const std::string d = "dec" + std::to_string(lv);
    const int f = spec.filters(lv);
    l.push_back({d + ".up.weight", {in, f, 2, 2}});
    l.push_back({d + ".up.bias", {1, f, 1, 1}, Init::zeros});
    add_block(l, d, 2 * f, f, spec);
    in = f;
  }
  l.push_back({"head.weight", {1, spec.base_filters, 1, 1}});
  l.push_back({"head.bias", {1, 1, 1, 1}, Init::zeros});
  return l;
}

Var unet_logits(const Var& img, const UNetSpec& spec, const ParamVars& p) {
  spec.validate();
  const Shape& s = img.shape();
  if (s.c != 3) {
    throw std::invalid_argument("unet: expected 3 input channels, got " +
                                s.str());
  }
  const int factor = 1 << spec.levels;
  if (s.h % factor != 0 || s.w % factor != 0) {
    throw std::invalid_argument("unet: spatial size not divisible by " +
                                std::to_string(factor) + ": " + s.str());
  }
  if (!img.value().all_finite()) {
    throw NonFiniteInput("unet: non-finite input");
  }

  std::vector<Var> skips;
  Var x = img;
  for (int lv = 0; lv < spec.levels; ++lv) {
    Var h = block(x, "enc" + std::to_string(lv), spec, p);
    skips.push_back(h);
    x = ag::max_pool2x2(h);
  }
  x = block(x, "bottleneck", spec, p);
  for (int lv = spec.levels - 1; lv >= 0; --lv) {
    const std::string d = "dec" + std::to_string(lv);
    Var up = ag::conv_transpose2d(x, p[d + ".up.weight"], p[d + ".up.bias"],
                                  {.stride = 2, .padding = 0});
    x = block(ag::concat_channels(up, skips[lv]), d, spec, p);
  }
  return ag::conv2d(x, p["head.weight"], p["head.bias"], {});
}

Var unet_forward(const Var& img, const UNetSpec& spec, const ParamVars& p) {
  return ag::sigmoid(unet_logits(img, spec, p));
}

Tensor unet_forward(const Tensor& img, const UNetSpec& spec,
                    const NetParams& p) {
  return unet_forward(Var(img), spec, ParamVars::constants(p)).value();
}

Tensor binarize(const Tensor& prob, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("binarize: threshold must be in (0, 1)");
  }
  Tensor out(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    out[i] = prob[i] >= threshold ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace fundus
