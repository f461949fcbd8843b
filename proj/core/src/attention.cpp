#include "fundus/attention.hpp"
#include "fundus/errors.hpp"

#include <stdexcept>

namespace fundus {

void CbamSpec::validate() const {
  if (reduction_ratio < 1) {
    throw std::invalid_argument("cbam: reduction_ratio must be positive");
  }
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0) {
    throw std::invalid_argument("cbam: spatial_kernel must be odd, got " +
                                std::to_string(spatial_kernel));
  }
}

void CbamSpec::validate(int channels) const {
  validate();
  if (channels % reduction_ratio != 0) {
    throw std::invalid_argument("cbam: channels " + std::to_string(channels) +
                                " not divisible by reduction_ratio " +
                                std::to_string(reduction_ratio));
  }
}

void append_cbam_layout(Layout& layout, const std::string& prefix,
                        int channels, const CbamSpec& spec) {
  spec.validate(channels);
  const int hidden = channels / spec.reduction_ratio;
  const int k = spec.spatial_kernel;
  layout.push_back({prefix + "mlp.fc1.weight", {hidden, channels, 1, 1}});
  layout.push_back({prefix + "mlp.fc1.bias", {1, hidden, 1, 1}, Init::zeros});
  layout.push_back({prefix + "mlp.fc2.weight", {channels, hidden, 1, 1}});
  layout.push_back({prefix + "mlp.fc2.bias", {1, channels, 1, 1}, Init::zeros});
  layout.push_back({prefix + "spatial.weight", {1, 2, k, k}});
  layout.push_back({prefix + "spatial.bias", {1, 1, 1, 1}, Init::zeros});
}

namespace {
void check_input(const Var& f, const CbamSpec& spec) {
  spec.validate(f.shape().c);
  if (!f.value().all_finite()) {
    throw NonFiniteInput("cbam: non-finite input");
  }
}

Var shared_mlp(const Var& pooled, const ParamVars& p,
               const std::string& prefix) {
  Var h = ag::conv2d(pooled, p[prefix + "mlp.fc1.weight"],
                     p[prefix + "mlp.fc1.bias"], {});
  return ag::conv2d(ag::relu(h), p[prefix + "mlp.fc2.weight"],
                    p[prefix + "mlp.fc2.bias"], {});
}
}  // namespace

Var channel_attention(const Var& f, const CbamSpec& spec, const ParamVars& p,
                      const std::string& prefix) {
  check_input(f, spec);
  Var avg = shared_mlp(ag::global_avg_pool(f), p, prefix);
  Var max = shared_mlp(ag::global_max_pool(f), p, prefix);
  return ag::sigmoid(ag::add(avg, max));
}

Var spatial_attention(const Var& f, const CbamSpec& spec, const ParamVars& p,
                      const std::string& prefix) {
  spec.validate();
  if (!f.value().all_finite()) {
    throw NonFiniteInput("cbam: non-finite input");
  }
  Var stacked = ag::concat_channels(ag::channel_mean(f), ag::channel_max(f));
  Var logits = ag::conv2d(stacked, p[prefix + "spatial.weight"],
                          p[prefix + "spatial.bias"],
                          {.stride = 1, .padding = spec.spatial_kernel / 2});
  return ag::sigmoid(logits);
}

Var cbam_forward(const Var& f, const CbamSpec& spec, const ParamVars& p,
                 const std::string& prefix) {
  Var refined = ag::mul(f, channel_attention(f, spec, p, prefix));
  return ag::mul(refined, spatial_attention(refined, spec, p, prefix));
}

Tensor channel_attention(const Tensor& f, const CbamSpec& spec,
                         const NetParams& p, const std::string& prefix) {
  return channel_attention(Var(f), spec, ParamVars::constants(p), prefix)
      .value();
}

Tensor spatial_attention(const Tensor& f, const CbamSpec& spec,
                         const NetParams& p, const std::string& prefix) {
  return spatial_attention(Var(f), spec, ParamVars::constants(p), prefix)
      .value();
}

Tensor cbam_forward(const Tensor& f, const CbamSpec& spec, const NetParams& p,
                    const std::string& prefix) {
  return cbam_forward(Var(f), spec, ParamVars::constants(p), prefix).value();
}

}  // namespace fundus
