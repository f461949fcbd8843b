#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fundus/random.hpp"
#include "fundus/tensor.hpp"

namespace fundus {

/// 8-bit planar image (channels, height, width).
struct Image8 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int c, int h, int w, std::uint8_t fill = 0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::uint8_t& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::uint8_t at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool operator==(const Image8&) const = default;
};

enum class QualityLabel { high, low, unknown };
std::string to_string(QualityLabel l);
QualityLabel parse_quality_label(const std::string& s);

struct ImageSample {
  std::string id;
  Image8 pixels;  // 3 channels, RGB
  QualityLabel label = QualityLabel::unknown;
  std::optional<Image8> mask;  // 1 channel, values {0, 1}

  void validate() const;
};

struct Resolution {
  int height = 256;
  int width = 256;
};

/// Two unaligned pools; no correspondence between entries is implied.
struct UnpairedDataset {
  std::vector<ImageSample> low;
  std::vector<ImageSample> high;
  Resolution resolution;

  /// Throws DataError when ids overlap between pools.
  void validate() const;
};

struct FolderLoad {
  std::vector<ImageSample> samples;
  std::vector<std::string> warnings;
};

/// Decodes every PNG/JPEG in `dir` (lexicographic by filename), resizes
/// bilinearly to `res`, labels it. Undecodable files are skipped with a
/// warning; a folder without any decodable image is a DataError. When
/// `mask_dir` is given, masks with the same stem are attached (resized
/// with nearest neighbour, binarized at 128).
FolderLoad load_image_folder(const std::filesystem::path& dir,
                             QualityLabel label, Resolution res,
                             const std::optional<std::filesystem::path>&
                                 mask_dir = std::nullopt);

/// Writes RGB (3 channel) or grayscale (1 channel) PNG.
void write_png(const std::filesystem::path& path, const Image8& img);
/// Writes a {0, 1} mask as a {0, 255} 8-bit PNG.
void write_mask_png(const std::filesystem::path& path, const Image8& mask);

enum class RangeKind {
  signed_unit,  // pixels / 127.5 - 1, for the restoration networks
  unit,         // pixels / 255, for the segmenter
};

/// (1, C, H, W) tensor in the requested range.
Tensor normalize(const Image8& img, RangeKind kind);
/// Inverse of normalize, rounding half away from zero, clipped to [0, 255].
Image8 denormalize(const Tensor& t, RangeKind kind, int batch_index = 0);
/// (1, C, H, W) tensor of raw 8-bit values, the scale metrics use.
Tensor to_tensor(const Image8& img);
/// {0, 1} mask -> (1, 1, H, W).
Tensor mask_to_tensor(const Image8& mask);

enum class AugmentOp { hflip, vflip, rot90, rot180, rot270 };
std::string to_string(AugmentOp op);
AugmentOp inverse(AugmentOp op);
/// rot90 turns counter-clockwise. Pixels and mask move together.
ImageSample augment(const ImageSample& s, AugmentOp op);
Image8 augment(const Image8& img, AugmentOp op);

enum class DegradeKind { blur, low_illum, high_illum, uneven_illum, color_distort };
std::string to_string(DegradeKind k);
DegradeKind parse_degrade_kind(const std::string& s);
inline constexpr std::array<DegradeKind, 5> kAllDegradeKinds{
    DegradeKind::blur, DegradeKind::low_illum, DegradeKind::high_illum,
    DegradeKind::uneven_illum, DegradeKind::color_distort};

struct DegradeParams {
  DegradeKind kind = DegradeKind::blur;
  double sigma = 0.0;  // blur, pixels
  double gamma = 1.0;  // illumination: out = 255 (in/255)^gamma * gain
  double gain = 1.0;
  double center_x = 0.5;  // vignette centre, fraction of width
  double center_y = 0.5;  // fraction of height
  double radius = 1.0;    // vignette radius, in half-min-extent units
  double depth = 0.0;     // vignette darkening at and beyond the radius
  std::array<double, 3> channel_gains{1.0, 1.0, 1.0};

  void validate() const;
  /// Fixed defaults per kind (blur sigma 2, low gamma 2.2 gain 0.5,
  /// high gamma 0.7 gain 1.4, vignette depth 0.6, channel gains 1.3/1/0.7).
  static DegradeParams defaults(DegradeKind kind);
  /// Randomized strength within the default ranges.
  static DegradeParams draw(DegradeKind kind, Rng& rng);
};

/// Applies one degradation; output keeps the id, pixels clipped to [0, 255].
ImageSample degrade(const ImageSample& s, const DegradeParams& p);

struct EpochSubset {
  std::vector<std::size_t> low;
  std::vector<std::size_t> high;
};

/// Uniform sampling without replacement from each pool; a pure function
/// of (pool sizes, counts, seed, epoch).
EpochSubset sample_epoch_subset(const UnpairedDataset& ds, std::size_t n_low,
                                std::size_t n_high, std::uint64_t seed,
                                std::uint64_t epoch);
std::vector<std::size_t> sample_without_replacement(std::size_t pool,
                                                    std::size_t n, Rng& rng);

/// Synthetic fundus photograph with a binary vessel mask: dark
/// background, orange retina disc, bright optic disc, branching vessels.
ImageSample synthesize_fundus(const std::string& id, Resolution res,
                              std::uint64_t seed);

}  // namespace fundus
