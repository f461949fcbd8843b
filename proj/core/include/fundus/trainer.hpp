#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fundus/checkpoint.hpp"
#include "fundus/config.hpp"
#include "fundus/data.hpp"
#include "fundus/losses.hpp"
#include "fundus/networks.hpp"
#include "fundus/segnet.hpp"

namespace fundus {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  void validate() const;
};

struct AdamState {
  NetParams m;
  NetParams v;
  std::int64_t t = 0;
};

AdamState adam_init(const NetParams& params);
/// One bias-corrected adaptive-moment update. Parameters and moments are
/// kept at single precision so checkpoints restore them exactly.
void adam_step(NetParams& params, const NetParams& grads, AdamState& state,
               const AdamConfig& cfg);

/// Streams JSON-lines training records to a file and keeps them in memory.
class HistoryLog {
 public:
  HistoryLog() = default;
  explicit HistoryLog(const std::filesystem::path& path);
  void write(const nlohmann::ordered_json& record);
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::optional<std::filesystem::path> path_;
  std::vector<std::string> lines_;
};

// ---------------------------------------------------------------------------
// Restoration (two generators, two discriminators, alternating updates).

struct RestorationConfig {
  GeneratorSpec generator{};
  DiscriminatorSpec discriminator{};
  LossWeights weights{};
  AdamConfig adam{};
  int epochs = 30;
  std::size_t subset_low = 2000;
  std::size_t subset_high = 2000;
  int batch_size = 1;
  std::int64_t validate_every_steps = 500;
  std::uint64_t seed = 0;
  double init_std = 0.02;
  /// Empty disables all file output (history and checkpoints).
  std::filesystem::path output_dir;

  void validate() const;
  static RestorationConfig from(const Config& cfg);
};

struct RestorationState {
  NetParams g1;  // low -> high
  NetParams g2;  // high -> low
  NetParams d1;  // judges low-quality images
  NetParams d2;  // judges high-quality images
  AdamState g1_opt, g2_opt, d1_opt, d2_opt;
  std::int64_t step = 0;
  int epoch = 0;
  double best_psnr = -std::numeric_limits<double>::infinity();
};

RestorationState init_restoration(const RestorationConfig& cfg);

struct StepLosses {
  double loss_g = 0.0;
  double loss_d1 = 0.0;
  double loss_d2 = 0.0;
  double loss_cyc = 0.0;
};

/// One alternating update on normalized batches x (low) and y (high):
/// generators first on the adversarial + weighted cycle objective, then
/// D1 and D2 on real versus detached generated images. Throws
/// NumericError on a non-finite loss.
StepLosses restoration_step(RestorationState& state,
                            const RestorationConfig& cfg, const Tensor& x_low,
                            const Tensor& y_high);

struct ValidationPair {
  std::string id;
  Image8 degraded;
  Image8 clean;
};

struct ValidationScores {
  double psnr = 0.0;
  double ssim = 0.0;
};

using Restorer = std::function<Image8(const Image8&)>;

/// Mean PSNR/SSIM (8-bit scale) of restorer(degraded) against clean.
ValidationScores score_restoration(const Restorer& restorer,
                                   std::span<const ValidationPair> pairs);
/// Restores with G1 in inference mode; never mutates the state.
ValidationScores validate_restoration(const RestorationState& state,
                                      const RestorationConfig& cfg,
                                      std::span<const ValidationPair> pairs);
Image8 restore_image(const NetParams& g1, const GeneratorSpec& spec,
                     const Image8& degraded);

Checkpoint restoration_checkpoint(const RestorationState& state,
                                  const RestorationConfig& cfg);
/// Loads state saved by restoration_checkpoint. The specs recorded in the
/// checkpoint are written back into `cfg`.
RestorationState load_restoration_state(const Checkpoint& ckpt,
                                        RestorationConfig& cfg);

struct RestorationResult {
  RestorationState state;
  HistoryLog history;
  std::vector<std::filesystem::path> checkpoints;
  int validations = 0;
  std::optional<ValidationScores> final_scores;
};

/// Runs cfg.epochs epochs from `initial` (fresh when absent). Every epoch
/// resamples both pools; validation runs every validate_every_steps steps
/// and once after the last step. Writes history.jsonl, last.ckpt (each
/// epoch) and best.ckpt (best validation PSNR) under cfg.output_dir.
RestorationResult train_restoration(
    const RestorationConfig& cfg, const UnpairedDataset& data,
    std::span<const ValidationPair> val,
    std::optional<RestorationState> initial = std::nullopt);

// ---------------------------------------------------------------------------
// Segmentation.

/// Stops once the validation loss has failed to improve by at least
/// min_delta for `patience` consecutive epochs.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta);
  /// Records the next epoch's validation loss; true means stop now.
  bool update(double loss);
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any
  double best_loss() const { return best_; }
  int epochs_seen() const { return epochs_; }
  int stale_epochs() const { return stale_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = 0;
  int epochs_ = 0;
  int stale_ = 0;
};

struct SegmentationConfig {
  UNetSpec unet{};
  AdamConfig adam{1e-4, 0.9, 0.999, 1e-8};
  int max_epochs = 100;
  int patience = 5;
  double min_delta = 1e-6;
  int batch_size = 1;
  bool augment = true;
  std::uint64_t seed = 0;
  double init_std = 0.02;
  std::filesystem::path output_dir;

  void validate() const;
  static SegmentationConfig from(const Config& cfg);
};

struct SegmentationState {
  NetParams unet;
  AdamState opt;
  std::int64_t step = 0;
  int epoch = 0;
  Rng rng;
};

SegmentationState init_segmentation(const SegmentationConfig& cfg);

/// One update on a (B, 3, H, W) unit-range batch and (B, 1, H, W) masks.
/// Returns the mean binary cross-entropy before the update.
double segmentation_step(SegmentationState& state,
                         const SegmentationConfig& cfg, const Tensor& images,
                         const Tensor& masks);

/// Mean cross-entropy of the segmenter over samples (no augmentation).
double segmentation_loss(const NetParams& unet, const UNetSpec& spec,
                         std::span<const ImageSample> samples);

Tensor segment_probabilities(const NetParams& unet, const UNetSpec& spec,
                             const Image8& image);

Checkpoint segmentation_checkpoint(const SegmentationState& state,
                                   const SegmentationConfig& cfg);
SegmentationState load_segmentation_state(const Checkpoint& ckpt,
                                          SegmentationConfig& cfg);

struct SegmentationHooks {
  /// Replaces the held-out cross-entropy when set: (params, epoch) -> loss.
  std::function<double(const NetParams&, int)> validation_loss;
};

struct SegmentationResult {
  NetParams best;
  SegmentationState state;
  HistoryLog history;
  int epochs_run = 0;
  int best_epoch = 0;
  bool stopped_early = false;
  std::vector<double> validation_losses;
};

/// Full passes over `train` until max_epochs or early stopping; keeps the
/// best-validation weights (best.ckpt under cfg.output_dir).
SegmentationResult train_segmentation(const SegmentationConfig& cfg,
                                      std::span<const ImageSample> train,
                                      std::span<const ImageSample> val,
                                      const SegmentationHooks& hooks = {});

}  // namespace fundus
