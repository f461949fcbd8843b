#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fundus/config.hpp"

namespace fundus::cli {

namespace fs = std::filesystem;

struct DegradeOptions {
  std::optional<fs::path> in;     // clean images; synthesized when absent
  std::optional<fs::path> masks;  // optional vessel masks for `in`
  fs::path out;
  std::string kinds = "all";
  int synthesize = 0;
};

struct TrainOptions {
  fs::path in;   // dataset root written by `degrade`
  fs::path out;
  std::optional<fs::path> checkpoint;  // resume from
};

struct InferOptions {
  fs::path in;
  fs::path out;
  std::optional<fs::path> checkpoint;
};

struct EvaluateOptions {
  fs::path in;  // restored images or predicted masks
  std::optional<fs::path> reference;
  std::optional<fs::path> masks;
  fs::path out;
};

void run_degrade(const Config& cfg, const DegradeOptions& o);
void run_train_restore(const Config& cfg, const TrainOptions& o);
void run_train_segment(const Config& cfg, const TrainOptions& o);
void run_restore(const Config& cfg, const InferOptions& o);
void run_segment(const Config& cfg, const InferOptions& o);
void run_evaluate(const Config& cfg, const EvaluateOptions& o);
void run_ablate(const Config& cfg, const TrainOptions& o);

/// --out when given, else output.dir, else $FUNDUS_OUTPUT_ROOT/<verb>,
/// else runs/<verb>.
fs::path resolve_output(const std::optional<fs::path>& flag, const Config& cfg,
                        const std::string& verb);

}  // namespace fundus::cli
