#pragma once

#include "fundus/attention.hpp"
#include "fundus/params.hpp"

namespace fundus {

/// Four-level encoder-decoder vessel segmenter with attention in every
/// convolution block.
///
/// Inputs are unit-normalized RGB in [0, 1]; the head emits per-pixel
/// vessel probabilities.
struct UNetSpec {
  int levels = 4;
  int base_filters = 64;
  bool use_cbam = true;
  CbamSpec cbam{};
  double threshold = 0.5;

  void validate() const;
  int filters(int level) const { return base_filters << level; }
};

Layout unet_layout(const UNetSpec& spec);

/// Pre-logistic head output, (B, 1, H, W). Used by training for a
/// numerically stable cross-entropy.
Var unet_logits(const Var& img, const UNetSpec& spec, const ParamVars& p);

/// img (B, 3, H, W) with H, W divisible by 16 -> (B, 1, H, W) in (0, 1).
Var unet_forward(const Var& img, const UNetSpec& spec, const ParamVars& p);
Tensor unet_forward(const Tensor& img, const UNetSpec& spec,
                    const NetParams& p);

/// out[i] = 1 iff prob[i] >= threshold; threshold must lie in (0, 1).
Tensor binarize(const Tensor& prob, double threshold);

}  // namespace fundus
