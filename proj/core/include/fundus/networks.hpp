#pragma once

#include <array>
#include <span>

#include "fundus/attention.hpp"
#include "fundus/params.hpp"

namespace fundus {

/// Restoration generator: three-stage encoder, residual attention blocks,
/// three-stage decoder with a tanh head.
///
/// The decoder mirrors the encoder strides. Transpose layers with stride
/// s use padding k/2 and output padding s-1 so that every stage exactly
/// inverts the matching encoder stage and the output resolution equals
/// the input resolution.
struct GeneratorSpec {
  std::array<int, 3> stem_filters{64, 128, 256};
  std::array<int, 3> stem_kernels{7, 3, 3};
  std::array<int, 3> stem_strides{1, 2, 2};
  int n_res_blocks = 9;
  int res_filters = 256;
  int res_kernel = 3;
  std::array<int, 3> up_filters{128, 64, 3};
  std::array<int, 3> up_kernels{3, 3, 7};
  bool use_cbam = true;
  CbamSpec cbam{};

  void validate() const;
  /// Product of the encoder strides; input extents must be multiples.
  int downsample_factor() const;
};

/// Patch discriminator: six 4x4 convolutions; the first has no
/// normalization, the last has one output channel and no activation.
struct DiscriminatorSpec {
  std::array<int, 6> filters{64, 128, 256, 512, 512, 1};
  int kernel = 4;
  std::array<int, 6> strides{2, 2, 2, 2, 1, 1};
  int padding = 1;
  double leaky_slope = 0.2;

  void validate() const;
};

Layout generator_layout(const GeneratorSpec& spec);
Layout discriminator_layout(const DiscriminatorSpec& spec);

/// Total parameters held by the attention blocks of a generator.
std::size_t generator_cbam_parameter_count(const GeneratorSpec& spec);

/// img (B, 3, H, W) in [-1, 1] -> (B, 3, H, W) in (-1, 1).
Var generator_forward(const Var& img, const GeneratorSpec& spec,
                      const ParamVars& p);
Tensor generator_forward(const Tensor& img, const GeneratorSpec& spec,
                         const NetParams& p);

/// img (B, 3, H, W) -> raw (B, 1, h, w) patch scores.
Var discriminator_forward(const Var& img, const DiscriminatorSpec& spec,
                          const ParamVars& p);
Tensor discriminator_forward(const Tensor& img, const DiscriminatorSpec& spec,
                             const NetParams& p);

/// Score-map extent for an input extent, 0 when some layer would be empty.
int discriminator_output_size(const DiscriminatorSpec& spec, int input);

/// Input pixels seen by one output unit: rf <- rf * s + (k - s), applied
/// from the last layer backwards starting at rf = 1.
int receptive_field(std::span<const int> strides, int kernel);
int receptive_field(const DiscriminatorSpec& spec);

}  // namespace fundus
