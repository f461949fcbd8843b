#include "workflow.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "fundus/data.hpp"
#include "fundus/errors.hpp"
#include "fundus/json_util.hpp"
#include "fundus/metrics.hpp"
#include "fundus/trainer.hpp"

namespace fundus::cli {

using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kSplitsFile = "splits.json";
constexpr const char* kManifestFile = "manifest.jsonl";

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Resolution resolution(const Config& cfg) {
  const auto r = cfg.get_int("data.resolution");
  if (r < 16 || r % 16 != 0) {
    throw ConfigError("data.resolution must be a positive multiple of 16, got " +
                      std::to_string(r));
  }
  return {static_cast<int>(r), static_cast<int>(r)};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<DegradeKind> parse_kinds(const std::string& s) {
  if (s == "all") return {kAllDegradeKinds.begin(), kAllDegradeKinds.end()};
  std::vector<DegradeKind> out;
  for (const auto& k : split_list(s)) out.push_back(parse_degrade_kind(k));
  if (out.empty()) throw ConfigError("no degradation kinds given");
  return out;
}

HistogramSpec parse_bins(const Config& cfg, const std::string& key) {
  const auto v = cfg.get_double_list(key);
  if (v.size() != 3 || !(v[2] > 0.0) || !(v[1] > v[0])) {
    throw ConfigError(key + " must be lo,hi,width with hi > lo and width > 0");
  }
  return {v[0], v[1], v[2]};
}

std::map<std::string, HistogramSpec> bins(const Config& cfg) {
  return {{"psnr", parse_bins(cfg, "metrics.psnr_bins")},
          {"ssim", parse_bins(cfg, "metrics.ssim_bins")}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text)) throw DataError("cannot write " + path.string());
}

ojson read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed " + path.string() + ": " + e.what());
  }
}

ojson timing_json(const Timing& t) {
  return {{"count", t.count},
          {"total_seconds", t.total_seconds},
          {"seconds_per_image", t.seconds_per_image},
          {"images_per_second", json_number(t.images_per_second)}};
}

ojson params_json(const DegradeParams& p) {
  ojson j{{"kind", to_string(p.kind)}};
  switch (p.kind) {
    case DegradeKind::blur: j["sigma"] = p.sigma; break;
    case DegradeKind::low_illum:
    case DegradeKind::high_illum:
      j["gamma"] = p.gamma;
      j["gain"] = p.gain;
      break;
    case DegradeKind::uneven_illum:
      j["center_x"] = p.center_x;
      j["center_y"] = p.center_y;
      j["radius"] = p.radius;
      j["depth"] = p.depth;
      break;
    case DegradeKind::color_distort: j["channel_gains"] = p.channel_gains; break;
  }
  return j;
}

// Removes a directory this tool owns before rewriting it, so reruns never
// mix outputs from different settings.
void reset_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

std::map<std::string, ImageSample> by_id(std::vector<ImageSample> samples) {
  std::map<std::string, ImageSample> out;
  for (auto& s : samples) out.emplace(s.id, std::move(s));
  return out;
}

// A prediction "<ref>__<suffix>" is scored against reference "<ref>".
const ImageSample* match_reference(const std::map<std::string, ImageSample>& refs,
                                   const std::string& id) {
  if (auto it = refs.find(id); it != refs.end()) return &it->second;
  const auto cut = id.rfind("__");
  if (cut != std::string::npos) {
    if (auto it = refs.find(id.substr(0, cut)); it != refs.end()) {
      return &it->second;
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Fixture datasets written by `degrade`.

struct Splits {
  std::vector<std::string> train, val, test;
};

Splits assign_splits(std::vector<std::string> ids, double val_fraction,
                     double test_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) ||
      val_fraction + test_fraction >= 1.0) {
    throw ConfigError("split fractions must be >= 0 and sum to less than 1");
  }
  std::sort(ids.begin(), ids.end());
  const std::size_t n = ids.size();
  Rng rng = Rng::derive(seed, fnv1a("splits"));
  const auto order = sample_without_replacement(n, n, rng);
  auto count = [n](double f) {
    return static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
  };
  std::size_t n_test = count(test_fraction);
  std::size_t n_val = count(val_fraction);
  while (n_test + n_val >= n && (n_test > 0 || n_val > 0)) {
    if (n_test >= n_val && n_test > 0) {
      --n_test;
    } else {
      --n_val;
    }
  }
  Splits s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& id = ids[order[i]];
    if (i < n_test) {
      s.test.push_back(id);
    } else if (i < n_test + n_val) {
      s.val.push_back(id);
    } else {
      s.train.push_back(id);
    }
  }
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

struct Fixture {
  UnpairedDataset data;
  std::vector<ValidationPair> train_pairs, val_pairs, test_pairs;
  std::vector<ImageSample> clean_train, clean_val;
};

Fixture load_fixture(const fs::path& root, Resolution res) {
  if (!fs::exists(root / kSplitsFile) || !fs::exists(root / kManifestFile)) {
    throw DataError(root.string() +
                    " is not a dataset root (expected splits.json and "
                    "manifest.jsonl written by degrade)");
  }
  const ojson splits = read_json(root / kSplitsFile);
  std::map<std::string, std::string> split_of;
  for (const char* name : {"train", "val", "test"}) {
    for (const auto& id : splits.value(name, ojson::array())) {
      split_of[id.get<std::string>()] = name;
    }
  }
  std::map<std::string, std::string> source_of;
  std::ifstream manifest(root / kManifestFile);
  for (std::string line; std::getline(manifest, line);) {
    if (line.empty()) continue;
    try {
      const auto j = ojson::parse(line);
      source_of[j.at("id").get<std::string>()] = j.at("source").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest line: " + std::string(e.what()));
    }
  }

  const std::optional<fs::path> masks =
      fs::exists(root / "masks") ? std::optional(root / "masks") : std::nullopt;
  auto clean = by_id(
      load_image_folder(root / "clean", QualityLabel::high, res, masks).samples);
  auto low = load_image_folder(root / "low", QualityLabel::low, res).samples;

  Fixture f;
  f.data.resolution = res;
  for (auto& [id, s] : clean) {
    const auto it = split_of.find(id);
    if (it == split_of.end()) continue;
    if (it->second == "train") {
      f.data.high.push_back(s);
      f.clean_train.push_back(s);
    } else if (it->second == "val") {
      f.clean_val.push_back(s);
    }
  }
  for (auto& s : low) {
    const auto src = source_of.find(s.id);
    if (src == source_of.end()) {
      spdlog::warn("degraded image {} is not in the manifest; ignored", s.id);
      continue;
    }
    const auto c = clean.find(src->second);
    const auto split = split_of.find(src->second);
    if (c == clean.end() || split == split_of.end()) {
      throw DataError("degraded image " + s.id + " has no clean source " +
                      src->second);
    }
    ValidationPair pair{s.id, s.pixels, c->second.pixels};
    if (split->second == "train") {
      f.train_pairs.push_back(pair);
      s.mask.reset();
      f.data.low.push_back(std::move(s));
    } else if (split->second == "val") {
      f.val_pairs.push_back(std::move(pair));
    } else {
      f.test_pairs.push_back(std::move(pair));
    }
  }
  if (f.data.low.empty() || f.data.high.empty()) {
    throw DataError("training split of " + root.string() + " is empty");
  }
  f.data.validate();
  return f;
}

RestorationConfig restoration_config(const Config& cfg, const fs::path& out) {
  RestorationConfig rc = RestorationConfig::from(cfg);
  rc.output_dir = out;
  return rc;
}

void save_effective_config(const Config& cfg, const fs::path& out) {
  write_text(out / "config.json", cfg.values().dump(2) + "\n");
}

ojson restoration_eval(const NetParams& g1, const GeneratorSpec& spec,
                       std::span<const ValidationPair> pairs,
                       const std::map<std::string, HistogramSpec>& hist,
                       const fs::path& out) {
  EvalReport report;
  for (const auto& p : pairs) {
    const Image8 restored = restore_image(g1, spec, p.degraded);
    report.add(p.id, "psnr", psnr(to_tensor(restored), to_tensor(p.clean)));
    report.add(p.id, "ssim", ssim(to_tensor(restored), to_tensor(p.clean)));
  }
  report.set_timing(timing_report(
      [&](const ValidationPair& p) { (void)restore_image(g1, spec, p.degraded); },
      pairs));
  write_text(out / "report.jsonl", report.to_jsonl());
  const std::string summary = report.summary_json(hist);
  write_text(out / "summary.json", summary + "\n");
  return ojson::parse(summary);
}

}  // namespace

fs::path resolve_output(const std::optional<fs::path>& flag, const Config& cfg,
                        const std::string& verb) {
  if (flag) return *flag;
  const std::string dir = cfg.get_string("output.dir");
  if (!dir.empty()) return dir;
  if (const char* root = std::getenv("FUNDUS_OUTPUT_ROOT"); root && *root) {
    return fs::path(root) / verb;
  }
  return fs::path("runs") / verb;
}

void run_degrade(const Config& cfg, const DegradeOptions& o) {
  const Resolution res = resolution(cfg);
  const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  const auto kinds = parse_kinds(o.kinds);
  const bool randomize = cfg.get_bool("degrade.randomize");

  std::vector<ImageSample> clean;
  if (o.in) {
    clean = load_image_folder(*o.in, QualityLabel::high, res, o.masks).samples;
  } else if (o.synthesize > 0) {
    for (int i = 0; i < o.synthesize; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "syn%04d", i);
      clean.push_back(synthesize_fundus(id, res, Rng::derive(seed, fnv1a(id)).next()));
    }
  } else {
    throw ConfigError("degrade needs --in or --synthesize");
  }

  reset_dir(o.out / "clean");
  reset_dir(o.out / "low");
  reset_dir(o.out / "masks");
  std::string manifest;
  std::vector<std::string> ids;
  for (const auto& s : clean) {
    ids.push_back(s.id);
    write_png(o.out / "clean" / (s.id + ".png"), s.pixels);
    if (s.mask) write_mask_png(o.out / "masks" / (s.id + ".png"), *s.mask);
    for (DegradeKind k : kinds) {
      const std::string did = s.id + "__" + to_string(k);
      Rng rng = Rng::derive(seed, fnv1a(did));
      const DegradeParams p =
          randomize ? DegradeParams::draw(k, rng) : DegradeParams::defaults(k);
      const ImageSample d = degrade(s, p);
      write_png(o.out / "low" / (did + ".png"), d.pixels);
      manifest += ojson{{"id", did}, {"source", s.id}, {"params", params_json(p)}}.dump() + "\n";
    }
  }
  if (fs::is_empty(o.out / "masks")) fs::remove(o.out / "masks");
  const Splits sp = assign_splits(ids, cfg.get_double("degrade.val_fraction"),
                                  cfg.get_double("degrade.test_fraction"), seed);
  write_text(o.out / kManifestFile, manifest);
  write_text(o.out / kSplitsFile,
             ojson{{"train", sp.train}, {"val", sp.val}, {"test", sp.test}}.dump(2) + "\n");
  spdlog::info("degrade: {} clean, {} degraded ({} train / {} val / {} test)",
               clean.size(), clean.size() * kinds.size(), sp.train.size(),
               sp.val.size(), sp.test.size());
}

void run_train_restore(const Config& cfg, const TrainOptions& o) {
  const Fixture f = load_fixture(o.in, resolution(cfg));
  RestorationConfig rc = restoration_config(cfg, o.out);
  std::optional<RestorationState> initial;
  if (o.checkpoint) initial = load_restoration_state(load_checkpoint(*o.checkpoint), rc);
  fs::create_directories(o.out);
  save_effective_config(cfg, o.out);
  const RestorationResult r = train_restoration(rc, f.data, f.val_pairs, initial);
  ojson done{{"steps", r.state.step}, {"epochs", r.state.epoch},
             {"validations", r.validations}};
  if (r.final_scores) {
    done["val_psnr"] = json_number(r.final_scores->psnr);
    done["val_ssim"] = json_number(r.final_scores->ssim);
  }
  write_text(o.out / "result.json", done.dump(2) + "\n");
}

void run_train_segment(const Config& cfg, const TrainOptions& o) {
  const Resolution res = resolution(cfg);
  std::vector<ImageSample> train, val;
  if (fs::exists(o.in / kSplitsFile)) {
    Fixture f = load_fixture(o.in, res);
    train = std::move(f.clean_train);
    val = std::move(f.clean_val);
  } else {
    const fs::path images = fs::exists(o.in / "images") ? o.in / "images" : o.in / "clean";
    auto all = load_image_folder(images, QualityLabel::unknown, res, o.in / "masks").samples;
    std::vector<std::string> ids;
    for (const auto& s : all) ids.push_back(s.id);
    const Splits sp = assign_splits(ids, cfg.get_double("seg.val_fraction"), 0.0,
                                    static_cast<std::uint64_t>(cfg.get_int("seed")));
    const std::set<std::string> vset(sp.val.begin(), sp.val.end());
    for (auto& s : all) (vset.count(s.id) ? val : train).push_back(std::move(s));
  }
  for (const auto* set : {&train, &val}) {
    for (const auto& s : *set) {
      if (!s.mask) throw DataError("image " + s.id + " has no vessel mask");
    }
  }
  SegmentationConfig sc = SegmentationConfig::from(cfg);
  sc.output_dir = o.out;
  fs::create_directories(o.out);
  save_effective_config(cfg, o.out);
  const SegmentationResult r = train_segmentation(sc, train, val);
  write_text(o.out / "result.json",
             ojson{{"epochs", r.epochs_run},
                   {"best_epoch", r.best_epoch},
                   {"stopped_early", r.stopped_early}}
                     .dump(2) + "\n");
}

void run_restore(const Config& cfg, const InferOptions& o) {
  if (!o.checkpoint) throw ConfigError("restore needs --checkpoint");
  RestorationConfig rc = RestorationConfig::from(cfg);
  const RestorationState st = load_restoration_state(load_checkpoint(*o.checkpoint), rc);
  const auto inputs = load_image_folder(o.in, QualityLabel::unknown, resolution(cfg)).samples;
  fs::create_directories(o.out);
  for (const auto& s : inputs) {
    write_png(o.out / (s.id + ".png"), restore_image(st.g1, rc.generator, s.pixels));
  }
  const Timing t = timing_report(
      [&](const ImageSample& s) { (void)restore_image(st.g1, rc.generator, s.pixels); },
      std::span<const ImageSample>(inputs));
  write_text(o.out / "timing.json", timing_json(t).dump(2) + "\n");
}

void run_segment(const Config& cfg, const InferOptions& o) {
  SegmentationConfig sc = SegmentationConfig::from(cfg);
  NetParams unet;
  if (o.checkpoint) {
    unet = load_segmentation_state(load_checkpoint(*o.checkpoint), sc).unet;
  } else {
    spdlog::warn("segment: no --checkpoint, using untrained weights (seed {})", sc.seed);
    unet = init_segmentation(sc).unet;
  }
  const auto inputs = load_image_folder(o.in, QualityLabel::unknown, resolution(cfg)).samples;
  fs::create_directories(o.out);
  auto run = [&](const ImageSample& s) {
    return binarize(segment_probabilities(unet, sc.unet, s.pixels), sc.unet.threshold);
  };
  for (const auto& s : inputs) {
    const Tensor m = run(s);
    Image8 mask(1, m.shape().h, m.shape().w);
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
      mask.data[i] = m[i] > 0.5 ? 1 : 0;
    }
    write_mask_png(o.out / (s.id + ".png"), mask);
  }
  const Timing t = timing_report([&](const ImageSample& s) { (void)run(s); },
                                 std::span<const ImageSample>(inputs));
  write_text(o.out / "timing.json", timing_json(t).dump(2) + "\n");
}

void run_evaluate(const Config& cfg, const EvaluateOptions& o) {
  if (!o.reference && !o.masks) {
    throw ConfigError("evaluate needs --reference (restoration) and/or --masks (segmentation)");
  }
  const Resolution res = resolution(cfg);
  const auto preds = load_image_folder(o.in, QualityLabel::unknown, res).samples;
  EvalReport report;
  if (o.reference) {
    const auto refs = by_id(load_image_folder(*o.reference, QualityLabel::high, res).samples);
    for (const auto& p : preds) {
      const ImageSample* r = match_reference(refs, p.id);
      if (!r) throw DataError("no reference image for " + p.id);
      report.add(p.id, "psnr", psnr(to_tensor(p.pixels), to_tensor(r->pixels)));
      report.add(p.id, "ssim", ssim(to_tensor(p.pixels), to_tensor(r->pixels)));
    }
  }
  if (o.masks) {
    const auto gts = by_id(load_image_folder(*o.masks, QualityLabel::unknown, res).samples);
    auto binary = [](const Image8& img) {
      Tensor t({1, 1, img.height, img.width});
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) t.at(0, 0, y, x) = img.at(0, y, x) >= 128 ? 1.0 : 0.0;
      }
      return t;
    };
    for (const auto& p : preds) {
      const ImageSample* g = match_reference(gts, p.id);
      if (!g) throw DataError("no ground-truth mask for " + p.id);
      const auto s = segmentation_scores(confusion_counts(binary(p.pixels), binary(g->pixels)));
      if (s.degenerate) spdlog::warn("evaluate: {} has an empty class; 0/0 scores set to 1", p.id);
      report.add(p.id, "jaccard", s.jaccard);
      report.add(p.id, "f1", s.f1);
      report.add(p.id, "recall", s.recall);
      report.add(p.id, "precision", s.precision);
      report.add(p.id, "accuracy", s.accuracy);
    }
  }
  if (fs::exists(o.in / "timing.json")) {
    const ojson t = read_json(o.in / "timing.json");
    report.set_timing(make_timing(t.at("count").get<std::size_t>(),
                                  t.at("total_seconds").get<double>()));
  }
  fs::create_directories(o.out);
  write_text(o.out / "report.jsonl", report.to_jsonl());
  write_text(o.out / "summary.json", report.summary_json(bins(cfg)) + "\n");
}

void run_ablate(const Config& cfg, const TrainOptions& o) {
  const Fixture f = load_fixture(o.in, resolution(cfg));
  std::span<const ValidationPair> eval = f.test_pairs;
  std::string eval_split = "test";
  if (eval.empty()) {
    eval = f.val_pairs;
    eval_split = "val";
  }
  if (eval.empty()) {
    spdlog::warn("ablate: no held-out pairs, scoring the training pairs");
    eval = f.train_pairs;
    eval_split = "train";
  }
  const auto hist = bins(cfg);
  ojson variants = ojson::array();
  double psnr_on = 0, psnr_off = 0, ssim_on = 0, ssim_off = 0;
  for (bool use_cbam : {true, false}) {
    Config c = cfg;
    c.set("model.use_cbam", use_cbam);
    const fs::path dir = o.out / (use_cbam ? "cbam_on" : "cbam_off");
    fs::create_directories(dir);
    save_effective_config(c, dir);
    const RestorationConfig rc = restoration_config(c, dir);
    const RestorationResult r = train_restoration(rc, f.data, f.val_pairs);
    const ojson summary = restoration_eval(r.state.g1, rc.generator, eval, hist, dir);
    const double p = json_to_double(summary.at("means").at("psnr"));
    const double s = json_to_double(summary.at("means").at("ssim"));
    (use_cbam ? psnr_on : psnr_off) = p;
    (use_cbam ? ssim_on : ssim_off) = s;
    variants.push_back({{"use_cbam", use_cbam},
                        {"generator_parameters", parameter_count(generator_layout(rc.generator))},
                        {"steps", r.state.step},
                        {"psnr", json_number(p)},
                        {"ssim", json_number(s)},
                        {"checkpoint", (dir / "last.ckpt").string()}});
  }
  const ojson report{{"eval_split", eval_split},
                     {"eval_images", eval.size()},
                     {"variants", variants},
                     {"delta", {{"psnr", json_number(psnr_on - psnr_off)},
                                {"ssim", json_number(ssim_on - ssim_off)}}}};
  write_text(o.out / "ablation.json", report.dump(2) + "\n");
  spdlog::info("ablate: attention on minus off: {:+.3f} dB PSNR, {:+.4f} SSIM",
               psnr_on - psnr_off, ssim_on - ssim_off);
}

}  // namespace fundus::cli
