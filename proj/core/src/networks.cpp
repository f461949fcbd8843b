#include "fundus/networks.hpp"
#include "fundus/errors.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace fundus {

namespace {

constexpr double kInputSlack = 1e-6;

std::string idx(const char* base, int i) { return base + std::to_string(i); }

void add_norm(Layout& l, const std::string& prefix, int channels) {
  l.push_back({prefix + ".scale", {1, channels, 1, 1}, Init::ones});
  l.push_back({prefix + ".offset", {1, channels, 1, 1}, Init::zeros});
}

Var conv_norm(const Var& x, const ParamVars& p, const std::string& conv,
              const std::string& norm, ag::Conv2dOptions opt) {
  Var y = ag::conv2d(x, p[conv + ".weight"], std::nullopt, opt);
  return ag::instance_norm(y, p[norm + ".scale"], p[norm + ".offset"]);
}

void check_image(const Var& img, const char* who) {
  const Shape& s = img.shape();
  if (s.c != 3) {
    throw std::invalid_argument(std::string(who) + ": expected 3 channels, got " +
                                s.str());
  }
  if (!img.value().all_finite()) {
    throw NonFiniteInput(std::string(who) + ": non-finite input");
  }
}

}  // namespace

void GeneratorSpec::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (stem_filters[i] < 1 || up_filters[i] < 1) {
      throw std::invalid_argument("generator: filters must be positive");
    }
    if (stem_kernels[i] < 1 || stem_kernels[i] % 2 == 0 || up_kernels[i] < 1 ||
        up_kernels[i] % 2 == 0) {
      throw std::invalid_argument("generator: kernels must be odd");
    }
    if (stem_strides[i] < 1) {
      throw std::invalid_argument("generator: strides must be positive");
    }
  }
  if (n_res_blocks < 1) {
    throw std::invalid_argument("generator: n_res_blocks must be >= 1");
  }
  if (res_filters != stem_filters[2]) {
    throw std::invalid_argument(
        "generator: res_filters must equal the last stem filter count");
  }
  if (res_kernel < 1 || res_kernel % 2 == 0) {
    throw std::invalid_argument("generator: res_kernel must be odd");
  }
  if (up_filters[2] != 3) {
    throw std::invalid_argument("generator: last decoder layer must emit 3 channels");
  }
  if (use_cbam) cbam.validate(res_filters);
}

int GeneratorSpec::downsample_factor() const {
  return stem_strides[0] * stem_strides[1] * stem_strides[2];
}

void DiscriminatorSpec::validate() const {
  for (int i = 0; i < 6; ++i) {
    if (filters[i] < 1 || strides[i] < 1) {
      throw std::invalid_argument("discriminator: filters/strides must be positive");
    }
  }
  if (filters[5] != 1) {
    throw std::invalid_argument("discriminator: final layer must have 1 filter");
  }
  if (kernel < 1 || padding < 0) {
    throw std::invalid_argument("discriminator: invalid kernel/padding");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw std::invalid_argument("discriminator: leaky_slope must be in (0, 1)");
  }
}

Layout generator_layout(const GeneratorSpec& spec) {
  spec.validate();
  Layout l;
  int in = 3;
  for (int i = 0; i < 3; ++i) {
    const std::string s = idx("stem", i);
    const int k = spec.stem_kernels[i];
    l.push_back({s + ".conv.weight", {spec.stem_filters[i], in, k, k}});
    add_norm(l, s + ".norm", spec.stem_filters[i]);
    in = spec.stem_filters[i];
  }
  const int f = spec.res_filters;
  const int rk = spec.res_kernel;
  for (int b = 0; b < spec.n_res_blocks; ++b) {
    const std::string r = idx("res", b);
    l.push_back({r + ".conv1.weight", {f, f, rk, rk}});
    add_norm(l, r + ".norm1", f);
    l.push_back({r + ".conv2.weight", {f, f, rk, rk}});
    add_norm(l, r + ".norm2", f);
    if (spec.use_cbam) append_cbam_layout(l, r + ".cbam.", f, spec.cbam);
  }
  in = f;
  for (int i = 0; i < 3; ++i) {
    const std::string u = idx("up", i);
    const int k = spec.up_kernels[i];
    l.push_back({u + ".conv.weight", {in, spec.up_filters[i], k, k}});
    if (i < 2) {
      add_norm(l, u + ".norm", spec.up_filters[i]);
    } else {
      l.push_back({u + ".conv.bias", {1, spec.up_filters[i], 1, 1}, Init::zeros});
    }
    in = spec.up_filters[i];
  }
  return l;
}

std::size_t generator_cbam_parameter_count(const GeneratorSpec& spec) {
  if (!spec.use_cbam) return 0;
  Layout one;
  append_cbam_layout(one, "", spec.res_filters, spec.cbam);
  return parameter_count(one) * spec.n_res_blocks;
}

Var generator_forward(const Var& img, const GeneratorSpec& spec,
                      const ParamVars& p) {
  spec.validate();
  check_image(img, "generator");
  const Shape& s = img.shape();
  const int factor = spec.downsample_factor();
  if (s.h % factor != 0 || s.w % factor != 0) {
    throw std::invalid_argument("generator: spatial size " + s.str() +
                                " not divisible by " + std::to_string(factor));
  }
  const double lo = img.value().min();
  const double hi = img.value().max();
  if (lo < -1.0 - kInputSlack || hi > 1.0 + kInputSlack) {
    throw std::invalid_argument("generator: input outside [-1, 1]");
  }

  Var x = img;
  for (int i = 0; i < 3; ++i) {
    const std::string st = idx("stem", i);
    x = ag::relu(conv_norm(x, p, st + ".conv", st + ".norm",
                           {.stride = spec.stem_strides[i],
                            .padding = spec.stem_kernels[i] / 2}));
  }
  const ag::Conv2dOptions same{.stride = 1, .padding = spec.res_kernel / 2};
  for (int b = 0; b < spec.n_res_blocks; ++b) {
    const std::string r = idx("res", b);
    Var h = ag::relu(conv_norm(x, p, r + ".conv1", r + ".norm1", same));
    h = conv_norm(h, p, r + ".conv2", r + ".norm2", same);
    if (spec.use_cbam) h = cbam_forward(h, spec.cbam, p, r + ".cbam.");
    x = ag::add(x, h);
  }
  for (int i = 0; i < 3; ++i) {
    const std::string u = idx("up", i);
    const int stride = spec.stem_strides[2 - i];
    const ag::ConvTranspose2dOptions opt{.stride = stride,
                                         .padding = spec.up_kernels[i] / 2,
                                         .output_padding = stride - 1};
    if (i < 2) {
      x = ag::conv_transpose2d(x, p[u + ".conv.weight"], std::nullopt, opt);
      x = ag::relu(
          ag::instance_norm(x, p[u + ".norm.scale"], p[u + ".norm.offset"]));
    } else {
      x = ag::tanh(ag::conv_transpose2d(x, p[u + ".conv.weight"],
                                        p[u + ".conv.bias"], opt));
    }
  }
  return x;
}

Tensor generator_forward(const Tensor& img, const GeneratorSpec& spec,
                         const NetParams& p) {
  return generator_forward(Var(img), spec, ParamVars::constants(p)).value();
}

Layout discriminator_layout(const DiscriminatorSpec& spec) {
  spec.validate();
  Layout l;
  int in = 3;
  const int k = spec.kernel;
  for (int i = 0; i < 6; ++i) {
    const std::string name = idx("layer", i);
    l.push_back({name + ".conv.weight", {spec.filters[i], in, k, k}});
    if (i == 0 || i == 5) {
      l.push_back({name + ".conv.bias", {1, spec.filters[i], 1, 1}, Init::zeros});
    } else {
      add_norm(l, name + ".norm", spec.filters[i]);
    }
    in = spec.filters[i];
  }
  return l;
}

int discriminator_output_size(const DiscriminatorSpec& spec, int input) {
  int n = input;
  for (int s : spec.strides) {
    const int span = n + 2 * spec.padding - spec.kernel;
    if (span < 0) return 0;
    n = span / s + 1;
  }
  return n;
}

Var discriminator_forward(const Var& img, const DiscriminatorSpec& spec,
                          const ParamVars& p) {
  spec.validate();
  check_image(img, "discriminator");
  const Shape& s = img.shape();
  if (discriminator_output_size(spec, s.h) < 1 ||
      discriminator_output_size(spec, s.w) < 1) {
    throw std::invalid_argument("discriminator: input " + s.str() +
                                " too small for the layer stack");
  }
  Var x = img;
  for (int i = 0; i < 6; ++i) {
    const std::string name = idx("layer", i);
    const ag::Conv2dOptions opt{.stride = spec.strides[i],
                                .padding = spec.padding};
    if (i == 0 || i == 5) {
      x = ag::conv2d(x, p[name + ".conv.weight"], p[name + ".conv.bias"], opt);
    } else {
      x = conv_norm(x, p, name + ".conv", name + ".norm", opt);
    }
    if (i < 5) x = ag::leaky_relu(x, spec.leaky_slope);
  }
  return x;
}

Tensor discriminator_forward(const Tensor& img, const DiscriminatorSpec& spec,
                             const NetParams& p) {
  return discriminator_forward(Var(img), spec, ParamVars::constants(p)).value();
}

int receptive_field(std::span<const int> strides, int kernel) {
  int rf = 1;
  for (auto it = strides.rbegin(); it != strides.rend(); ++it) {
    rf = rf * *it + (kernel - *it);
  }
  return rf;
}

int receptive_field(const DiscriminatorSpec& spec) {
  return receptive_field(spec.strides, spec.kernel);
}

}  // namespace fundus
