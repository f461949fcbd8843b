// fundus: command-line front end for fixture generation, training,
// inference and evaluation.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fundus/config.hpp"
#include "fundus/errors.hpp"
#include "workflow.hpp"

namespace fs = std::filesystem;
using namespace fundus;

namespace {

enum Exit { kOk = 0, kConfig = 1, kData = 2, kRuntime = 3 };

int fail(Exit code, const char* kind, const std::string& what) {
  std::string line = what;
  for (char& c : line) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error: " << kind << ": " << line << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retinal fundus restoration and vessel segmentation"};
  app.footer("\n" + config_help() +
             "\nExit codes: 0 ok, 1 configuration error, 2 data error, "
             "3 runtime error (diverged training).");
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::optional<fs::path> config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
  app.add_option("--config", config_path, "JSON config file with flat dotted keys");
  app.add_option("--set", overrides, "override a config key (key=value), repeatable");
  app.add_option("--seed", seed, "shorthand for --set seed=N");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  std::optional<fs::path> in, out, checkpoint, reference, masks;
  std::optional<std::string> kinds;
  std::optional<int> synthesize;

  auto* degrade = app.add_subcommand("degrade", "write a paired clean/degraded fixture dataset");
  degrade->add_option("--in", in, "folder of clean images");
  degrade->add_option("--masks", masks, "vessel masks for --in (same file stems)");
  degrade->add_option("--out", out, "dataset root to write");
  degrade->add_option("--kinds", kinds, "comma-separated degradation kinds or 'all'");
  degrade->add_option("--synthesize", synthesize, "generate N synthetic photographs instead of --in");

  auto* train_restore = app.add_subcommand("train-restore", "train the cycle restoration model");
  auto* train_segment = app.add_subcommand("train-segment", "train the vessel segmenter");
  auto* ablate = app.add_subcommand("ablate", "train and score restoration with attention on and off");
  for (auto* sub : {train_restore, train_segment, ablate}) {
    sub->add_option("--in", in, "dataset root")->required();
    sub->add_option("--out", out, "run directory");
  }
  train_restore->add_option("--checkpoint", checkpoint, "resume from this checkpoint");

  auto* restore = app.add_subcommand("restore", "restore every image in a folder");
  auto* segment = app.add_subcommand("segment", "write a vessel mask for every image in a folder");
  for (auto* sub : {restore, segment}) {
    sub->add_option("--in", in, "input image folder")->required();
    sub->add_option("--out", out, "output folder");
  }
  restore->add_option("--checkpoint", checkpoint, "restoration checkpoint")->required();
  segment->add_option("--checkpoint", checkpoint, "segmentation checkpoint (untrained when omitted)");

  auto* evaluate = app.add_subcommand("evaluate", "score restored images or predicted masks");
  evaluate->add_option("--in", in, "restored images or predicted masks")->required();
  evaluate->add_option("--reference", reference, "clean reference images");
  evaluate->add_option("--masks", masks, "ground-truth vessel masks");
  evaluate->add_option("--out", out, "report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail(kConfig, "config", e.what());
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    Config cfg;
    if (config_path) cfg.load_file(*config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    if (seed) cfg.set("seed", static_cast<long long>(*seed));

    CLI::App* sub = app.get_subcommands().front();
    const std::string verb = sub->get_name();
    const fs::path out_dir = cli::resolve_output(out, cfg, verb);

    if (sub == degrade) {
      cli::DegradeOptions o;
      o.in = in;
      o.masks = masks;
      o.out = out_dir;
      o.kinds = kinds.value_or(cfg.get_string("degrade.kinds"));
      o.synthesize = synthesize.value_or(static_cast<int>(cfg.get_int("degrade.synthesize")));
      cli::run_degrade(cfg, o);
    } else if (sub == train_restore || sub == train_segment || sub == ablate) {
      const cli::TrainOptions o{*in, out_dir, checkpoint};
      if (sub == train_restore) cli::run_train_restore(cfg, o);
      if (sub == train_segment) cli::run_train_segment(cfg, o);
      if (sub == ablate) cli::run_ablate(cfg, o);
    } else if (sub == restore || sub == segment) {
      const cli::InferOptions o{*in, out_dir, checkpoint};
      if (sub == restore) cli::run_restore(cfg, o);
      if (sub == segment) cli::run_segment(cfg, o);
    } else if (sub == evaluate) {
      cli::run_evaluate(cfg, {*in, reference, masks, out_dir});
    }
    return kOk;
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const DataError& e) {
    return fail(kData, "data", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kData, "data", e.what());
  } catch (const NumericError& e) {
    return fail(kRuntime, "runtime", e.what());
  } catch (const NonFiniteInput& e) {
    return fail(kData, "data", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kRuntime, "runtime", e.what());
  }
}
