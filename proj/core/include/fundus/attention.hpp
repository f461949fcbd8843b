#pragma once

#include <string>

#include "fundus/params.hpp"

namespace fundus {

/// Convolutional block attention hyperparameters.
///
/// Defaults follow the original CBAM design; the restoration and
/// segmentation models expose both knobs in their configuration.
struct CbamSpec {
  int reduction_ratio = 16;  // channel-MLP bottleneck divisor
  int spatial_kernel = 7;    // odd, zero padded to preserve size

  /// Throws std::invalid_argument on a non-positive ratio or an even kernel.
  void validate() const;
  /// Also checks that `channels` is divisible by the reduction ratio.
  void validate(int channels) const;
};

/// Parameters of one attention block applied to `channels` channels:
///   <prefix>mlp.fc1.{weight,bias}  (C/r, C, 1, 1), (1, C/r, 1, 1)
///   <prefix>mlp.fc2.{weight,bias}  (C, C/r, 1, 1), (1, C, 1, 1)
///   <prefix>spatial.{weight,bias}  (1, 2, k, k),   (1, 1, 1, 1)
void append_cbam_layout(Layout& layout, const std::string& prefix,
                        int channels, const CbamSpec& spec);

/// logistic(MLP(avgpool f) + MLP(maxpool f)), shape (B, C, 1, 1).
Var channel_attention(const Var& f, const CbamSpec& spec, const ParamVars& p,
                      const std::string& prefix = "");

/// logistic(conv([mean_c f; max_c f])), shape (B, 1, H, W).
Var spatial_attention(const Var& f, const CbamSpec& spec, const ParamVars& p,
                      const std::string& prefix = "");

/// Channel gate then spatial gate, both applied multiplicatively.
Var cbam_forward(const Var& f, const CbamSpec& spec, const ParamVars& p,
                 const std::string& prefix = "");

Tensor channel_attention(const Tensor& f, const CbamSpec& spec,
                         const NetParams& p, const std::string& prefix = "");
Tensor spatial_attention(const Tensor& f, const CbamSpec& spec,
                         const NetParams& p, const std::string& prefix = "");
Tensor cbam_forward(const Tensor& f, const CbamSpec& spec, const NetParams& p,
                    const std::string& prefix = "");

}  // namespace fundus
