#include "fundus/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>

#include "fundus/errors.hpp"
#include "fundus/json_util.hpp"
#include "fundus/metrics.hpp"
#include "fundus/serialize.hpp"

namespace fs = std::filesystem;

namespace fundus {

using ojson = nlohmann::ordered_json;

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("moment coefficients must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer epsilon must be > 0");
}

AdamState adam_init(const NetParams& params) {
  AdamState s;
  for (const auto& e : params.entries()) {
    s.m.add(e.name, Tensor(e.value.shape(), 0.0));
    s.v.add(e.name, Tensor(e.value.shape(), 0.0));
  }
  return s;
}

void adam_step(NetParams& params, const NetParams& grads, AdamState& state,
               const AdamConfig& cfg) {
  state.t += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  auto& pe = params.entries();
  const auto& ge = grads.entries();
  auto& me = state.m.entries();
  auto& ve = state.v.entries();
  for (std::size_t k = 0; k < pe.size(); ++k) {
    Tensor& p = pe[k].value;
    const Tensor& g = ge[k].value;
    Tensor& m = me[k].value;
    Tensor& v = ve[k].value;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<float>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
      v[i] = static_cast<float>(cfg.beta2 * v[i] +
                                (1.0 - cfg.beta2) * g[i] * g[i]);
      const double step = cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
      p[i] = static_cast<float>(p[i] - step);
    }
  }
}

HistoryLog::HistoryLog(const fs::path& path) : path_(path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) {
      throw DataError("cannot create " + path.parent_path().string() + ": " +
                      ec.message());
    }
  }
  std::ofstream truncate(path, std::ios::trunc);
  if (!truncate) throw DataError("cannot write history log " + path.string());
}

void HistoryLog::write(const ojson& record) {
  lines_.push_back(record.dump());
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    out << lines_.back() << '\n';
    if (!out) throw DataError("failed appending to " + path_->string());
  }
}

// ---------------------------------------------------------------------------

namespace {

GeneratorSpec generator_from(const Config& c) {
  GeneratorSpec g;
  const auto f = c.get_int_list("model.gen_filters");
  if (f.size() != 3) throw ConfigError("model.gen_filters needs 3 values");
  g.stem_filters = {f[0], f[1], f[2]};
  g.res_filters = f[2];
  g.up_filters = {f[1], f[0], 3};
  g.n_res_blocks = static_cast<int>(c.get_int("model.res_blocks"));
  g.use_cbam = c.get_bool("model.use_cbam");
  g.cbam.reduction_ratio = static_cast<int>(c.get_int("model.cbam_reduction"));
  g.cbam.spatial_kernel = static_cast<int>(c.get_int("model.cbam_kernel"));
  return g;
}

void check_spec(const std::function<void()>& validate) {
  try {
    validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void require_same_layout(const NetParams& got, const Layout& want,
                         const std::string& what) {
  bool ok = got.size() == want.size();
  for (std::size_t i = 0; ok && i < want.size(); ++i) {
    ok = got.entries()[i].name == want[i].name &&
         got.entries()[i].value.shape() == want[i].shape;
  }
  if (!ok) {
    throw DataError("checkpoint " + what + " does not match its recorded spec");
  }
}

void put_adam(NetParams& out, const std::string& name, const AdamState& s) {
  insert_group(out, "opt/" + name + "/m", s.m);
  insert_group(out, "opt/" + name + "/v", s.v);
}

AdamState get_adam(const Checkpoint& ckpt, const std::string& name,
                   const NetParams& params) {
  AdamState s;
  s.m = extract_group(ckpt.tensors, "opt/" + name + "/m");
  s.v = extract_group(ckpt.tensors, "opt/" + name + "/v");
  if (s.m.size() == 0 && s.v.size() == 0) return adam_init(params);
  s.t = ckpt.meta.at("adam_t").at(name).get<std::int64_t>();
  return s;
}

void check_finite(const StepLosses& l, std::int64_t step) {
  for (double v : {l.loss_g, l.loss_d1, l.loss_d2, l.loss_cyc}) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                         ": loss_G=" + std::to_string(l.loss_g) +
                         " loss_D1=" + std::to_string(l.loss_d1) +
                         " loss_D2=" + std::to_string(l.loss_d2) +
                         " loss_cyc=" + std::to_string(l.loss_cyc));
    }
  }
}

}  // namespace

void RestorationConfig::validate() const {
  check_spec([&] { generator.validate(); });
  check_spec([&] { discriminator.validate(); });
  check_spec([&] { weights.validate(); });
  adam.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (validate_every_steps < 1) {
    throw ConfigError("validate_every_steps must be >= 1");
  }
  if (subset_low < 1 || subset_high < 1) {
    throw ConfigError("subset sizes must be >= 1");
  }
}

RestorationConfig RestorationConfig::from(const Config& c) {
  RestorationConfig r;
  r.generator = generator_from(c);
  const auto df = c.get_int_list("model.disc_filters");
  if (df.size() != 6) throw ConfigError("model.disc_filters needs 6 values");
  std::copy(df.begin(), df.end(), r.discriminator.filters.begin());
  r.discriminator.leaky_slope = c.get_double("model.leaky_slope");
  r.weights.lambda_cyc = c.get_double("loss.lambda_cyc");
  r.adam = {c.get_double("train.lr"), c.get_double("train.beta1"),
            c.get_double("train.beta2"), c.get_double("train.adam_eps")};
  r.epochs = static_cast<int>(c.get_int("train.epochs"));
  r.subset_low = static_cast<std::size_t>(c.get_int("train.subset_low"));
  r.subset_high = static_cast<std::size_t>(c.get_int("train.subset_high"));
  r.batch_size = static_cast<int>(c.get_int("train.batch_size"));
  r.validate_every_steps = c.get_int("train.validate_every_steps");
  r.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  r.init_std = c.get_double("model.init_std");
  r.validate();
  return r;
}

RestorationState init_restoration(const RestorationConfig& cfg) {
  cfg.validate();
  const Layout gl = generator_layout(cfg.generator);
  const Layout dl = discriminator_layout(cfg.discriminator);
  RestorationState s;
  s.g1 = init_params(gl, Rng::derive(cfg.seed, 1).next(), cfg.init_std);
  s.g2 = init_params(gl, Rng::derive(cfg.seed, 2).next(), cfg.init_std);
  s.d1 = init_params(dl, Rng::derive(cfg.seed, 3).next(), cfg.init_std);
  s.d2 = init_params(dl, Rng::derive(cfg.seed, 4).next(), cfg.init_std);
  s.g1_opt = adam_init(s.g1);
  s.g2_opt = adam_init(s.g2);
  s.d1_opt = adam_init(s.d1);
  s.d2_opt = adam_init(s.d2);
  return s;
}

namespace {

// Inputs are checked up front, so a non-finite value met inside the step
// comes from the parameters: the run has diverged.
template <class F>
auto diverged_as_numeric(std::int64_t step, F&& body) {
  try {
    return body();
  } catch (const NonFiniteInput& e) {
    throw NumericError("non-finite value at step " + std::to_string(step + 1) +
                       " (" + e.what() + ")");
  }
}

void require_finite_batch(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw std::invalid_argument(std::string(what) + " contains non-finite values");
  }
}

StepLosses restoration_step_impl(RestorationState& state,
                                 const RestorationConfig& cfg,
                                 const Tensor& x_low, const Tensor& y_high);
double segmentation_step_impl(SegmentationState& state,
                              const SegmentationConfig& cfg,
                              const Tensor& images, const Tensor& masks);

}  // namespace

StepLosses restoration_step(RestorationState& state,
                            const RestorationConfig& cfg, const Tensor& x_low,
                            const Tensor& y_high) {
  if (x_low.shape() != y_high.shape()) {
    throw std::invalid_argument("restoration_step: batch shapes differ: " +
                                x_low.shape().str() + " vs " +
                                y_high.shape().str());
  }
  require_finite_batch(x_low, "low-quality batch");
  require_finite_batch(y_high, "high-quality batch");
  return diverged_as_numeric(state.step, [&] {
    return restoration_step_impl(state, cfg, x_low, y_high);
  });
}

double segmentation_step(SegmentationState& state,
                         const SegmentationConfig& cfg, const Tensor& images,
                         const Tensor& masks) {
  require_finite_batch(images, "image batch");
  return diverged_as_numeric(state.step, [&] {
    return segmentation_step_impl(state, cfg, images, masks);
  });
}

namespace {

StepLosses restoration_step_impl(RestorationState& state,
                                 const RestorationConfig& cfg,
                                 const Tensor& x_low, const Tensor& y_high) {
  if (x_low.shape() != y_high.shape()) {
    throw std::invalid_argument("restoration_step: batch shapes differ: " +
                                x_low.shape().str() + " vs " +
                                y_high.shape().str());
  }
  const Var x(x_low);
  const Var y(y_high);
  StepLosses out;

  // Generators: adversarial terms against frozen discriminators plus the
  // weighted cycle term.
  Var fake_y, fake_x;
  {
    const auto g1 = ParamVars::leaves(state.g1);
    const auto g2 = ParamVars::leaves(state.g2);
    const auto d1 = ParamVars::constants(state.d1);
    const auto d2 = ParamVars::constants(state.d2);
    fake_y = generator_forward(x, cfg.generator, g1);
    fake_x = generator_forward(y, cfg.generator, g2);
    const Var cyc_x = generator_forward(fake_y, cfg.generator, g2);
    const Var cyc_y = generator_forward(fake_x, cfg.generator, g1);
    const Var adv_low =
        adv_loss_generator(discriminator_forward(fake_x, cfg.discriminator, d1));
    const Var adv_high =
        adv_loss_generator(discriminator_forward(fake_y, cfg.discriminator, d2));
    const Var cyc = cycle_consistency_loss(x, cyc_x, y, cyc_y);
    out.loss_cyc = cyc.value()[0];
    out.loss_g = adv_low.value()[0] + adv_high.value()[0] +
                 cfg.weights.lambda_cyc * out.loss_cyc;
    check_finite(out, state.step + 1);
    const Var total = full_objective(adv_low, adv_high, cyc, cfg.weights);
    total.backward();
    adam_step(state.g1, g1.gradients(), state.g1_opt, cfg.adam);
    adam_step(state.g2, g2.gradients(), state.g2_opt, cfg.adam);
  }

  // Discriminators on real versus detached generated images.
  auto update_disc = [&](NetParams& params, AdamState& opt, const Var& real,
                         const Var& fake) {
    const auto d = ParamVars::leaves(params);
    const Var loss = adv_loss_discriminator(
        discriminator_forward(real, cfg.discriminator, d),
        discriminator_forward(fake.detach(), cfg.discriminator, d));
    const double value = loss.value()[0];
    if (!std::isfinite(value)) return value;
    loss.backward();
    adam_step(params, d.gradients(), opt, cfg.adam);
    return value;
  };
  out.loss_d1 = update_disc(state.d1, state.d1_opt, x, fake_x);
  out.loss_d2 = update_disc(state.d2, state.d2_opt, y, fake_y);
  check_finite(out, state.step + 1);
  state.step += 1;
  return out;
}

}  // namespace

Image8 restore_image(const NetParams& g1, const GeneratorSpec& spec,
                     const Image8& degraded) {
  const Tensor out =
      generator_forward(normalize(degraded, RangeKind::signed_unit), spec, g1);
  return denormalize(out, RangeKind::signed_unit);
}

ValidationScores score_restoration(const Restorer& restorer,
                                   std::span<const ValidationPair> pairs) {
  if (pairs.empty()) throw DataError("validation set is empty");
  double psnr_sum = 0.0;
  double ssim_sum = 0.0;
  for (const auto& p : pairs) {
    const Tensor restored = to_tensor(restorer(p.degraded));
    const Tensor clean = to_tensor(p.clean);
    psnr_sum += psnr(restored, clean, 255.0);
    ssim_sum += ssim(restored, clean, 255.0);
  }
  const double n = static_cast<double>(pairs.size());
  return {psnr_sum / n, ssim_sum / n};
}

ValidationScores validate_restoration(const RestorationState& state,
                                      const RestorationConfig& cfg,
                                      std::span<const ValidationPair> pairs) {
  return score_restoration(
      [&](const Image8& img) {
        return restore_image(state.g1, cfg.generator, img);
      },
      pairs);
}

Checkpoint restoration_checkpoint(const RestorationState& state,
                                  const RestorationConfig& cfg) {
  Checkpoint c;
  c.meta["kind"] = "restoration";
  c.meta["generator"] = cfg.generator;
  c.meta["discriminator"] = cfg.discriminator;
  c.meta["use_cbam"] = cfg.generator.use_cbam;
  c.meta["lambda_cyc"] = cfg.weights.lambda_cyc;
  c.meta["step"] = state.step;
  c.meta["epoch"] = state.epoch;
  c.meta["best_psnr"] = json_number(state.best_psnr);
  c.meta["adam_t"] = {{"G1", state.g1_opt.t},
                      {"G2", state.g2_opt.t},
                      {"D1", state.d1_opt.t},
                      {"D2", state.d2_opt.t}};
  insert_group(c.tensors, "G1", state.g1);
  insert_group(c.tensors, "G2", state.g2);
  insert_group(c.tensors, "D1", state.d1);
  insert_group(c.tensors, "D2", state.d2);
  put_adam(c.tensors, "G1", state.g1_opt);
  put_adam(c.tensors, "G2", state.g2_opt);
  put_adam(c.tensors, "D1", state.d1_opt);
  put_adam(c.tensors, "D2", state.d2_opt);
  return c;
}

RestorationState load_restoration_state(const Checkpoint& ckpt,
                                        RestorationConfig& cfg) {
  if (ckpt.meta.value("kind", "") != "restoration") {
    throw DataError("checkpoint does not hold a restoration model");
  }
  try {
    cfg.generator = ckpt.meta.at("generator").get<GeneratorSpec>();
    cfg.discriminator = ckpt.meta.at("discriminator").get<DiscriminatorSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint spec unreadable: ") + e.what());
  }
  RestorationState s;
  s.g1 = extract_group(ckpt.tensors, "G1");
  s.g2 = extract_group(ckpt.tensors, "G2");
  s.d1 = extract_group(ckpt.tensors, "D1");
  s.d2 = extract_group(ckpt.tensors, "D2");
  const Layout gl = generator_layout(cfg.generator);
  require_same_layout(s.g1, gl, "G1");
  require_same_layout(s.g2, gl, "G2");
  if (s.d1.size() > 0 || s.d2.size() > 0) {
    const Layout dl = discriminator_layout(cfg.discriminator);
    require_same_layout(s.d1, dl, "D1");
    require_same_layout(s.d2, dl, "D2");
  }
  s.g1_opt = get_adam(ckpt, "G1", s.g1);
  s.g2_opt = get_adam(ckpt, "G2", s.g2);
  s.d1_opt = get_adam(ckpt, "D1", s.d1);
  s.d2_opt = get_adam(ckpt, "D2", s.d2);
  s.step = ckpt.meta.value("step", std::int64_t{0});
  s.epoch = ckpt.meta.value("epoch", 0);
  if (ckpt.meta.contains("best_psnr")) {
    s.best_psnr = json_to_double(ckpt.meta.at("best_psnr"));
  }
  return s;
}

RestorationResult train_restoration(const RestorationConfig& cfg,
                                    const UnpairedDataset& data,
                                    std::span<const ValidationPair> val,
                                    std::optional<RestorationState> initial) {
  cfg.validate();
  data.validate();
  if (data.low.empty() || data.high.empty()) {
    throw DataError("restoration training needs images in both pools");
  }

  RestorationResult result;
  result.state = initial ? std::move(*initial) : init_restoration(cfg);
  RestorationState& state = result.state;
  const bool write = !cfg.output_dir.empty();
  if (write) result.history = HistoryLog(cfg.output_dir / "history.jsonl");

  std::vector<Tensor> low, high;
  for (const auto& s : data.low) low.push_back(normalize(s.pixels, RangeKind::signed_unit));
  for (const auto& s : data.high) high.push_back(normalize(s.pixels, RangeKind::signed_unit));

  std::size_t n_low = cfg.subset_low;
  std::size_t n_high = cfg.subset_high;
  if (n_low > low.size() || n_high > high.size()) {
    spdlog::warn("subset sizes {}/{} exceed pools {}/{}; using whole pools",
                 n_low, n_high, low.size(), high.size());
    n_low = std::min(n_low, low.size());
    n_high = std::min(n_high, high.size());
  }
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = std::min(n_low, n_high) / batch;
  if (steps == 0) throw DataError("batch size exceeds the per-epoch subset");

  auto remember = [&result](const fs::path& p) {
    if (std::find(result.checkpoints.begin(), result.checkpoints.end(), p) ==
        result.checkpoints.end()) {
      result.checkpoints.push_back(p);
    }
  };
  auto validate_now = [&](bool final) {
    const ValidationScores v = validate_restoration(state, cfg, val);
    ojson rec{{"step", state.step},
              {"psnr", json_number(v.psnr)},
              {"ssim", json_number(v.ssim)}};
    if (final) rec["final"] = true;
    result.history.write(rec);
    if (v.psnr > state.best_psnr) {
      state.best_psnr = v.psnr;
      if (write) {
        save_checkpoint(cfg.output_dir / "best.ckpt",
                        restoration_checkpoint(state, cfg));
        remember(cfg.output_dir / "best.ckpt");
      }
    }
    return v;
  };

  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const EpochSubset sub = sample_epoch_subset(
        data, n_low, n_high, cfg.seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<Tensor> xb, yb;
      for (std::size_t b = 0; b < batch; ++b) {
        xb.push_back(low[sub.low[s * batch + b]]);
        yb.push_back(high[sub.high[s * batch + b]]);
      }
      StepLosses l;
      try {
        l = restoration_step(state, cfg, stack_batch(xb), stack_batch(yb));
      } catch (const NumericError& e) {
        if (write) {
          ojson dump{{"error", e.what()},
                     {"epoch", epoch + 1},
                     {"step", state.step + 1},
                     {"low_ids", ojson::array()},
                     {"high_ids", ojson::array()},
                     {"params_finite",
                      {{"G1", state.g1.all_finite()},
                       {"G2", state.g2.all_finite()},
                       {"D1", state.d1.all_finite()},
                       {"D2", state.d2.all_finite()}}}};
          for (std::size_t b = 0; b < batch; ++b) {
            dump["low_ids"].push_back(data.low[sub.low[s * batch + b]].id);
            dump["high_ids"].push_back(data.high[sub.high[s * batch + b]].id);
          }
          std::ofstream(cfg.output_dir / "diagnostic.json") << dump.dump(2);
        }
        throw;
      }
      result.history.write({{"epoch", epoch + 1},
                            {"step", state.step},
                            {"loss_G", l.loss_g},
                            {"loss_D1", l.loss_d1},
                            {"loss_D2", l.loss_d2},
                            {"loss_cyc", l.loss_cyc}});
      if (!val.empty() && state.step % cfg.validate_every_steps == 0) {
        validate_now(false);
        ++result.validations;
      }
    }
    state.epoch = epoch + 1;
    spdlog::info("restoration epoch {}/{} done (step {})", state.epoch,
                 cfg.epochs, state.step);
    if (write) {
      save_checkpoint(cfg.output_dir / "last.ckpt",
                      restoration_checkpoint(state, cfg));
      remember(cfg.output_dir / "last.ckpt");
    }
  }
  if (!val.empty()) result.final_scores = validate_now(true);
  return result;
}

// ---------------------------------------------------------------------------

EarlyStopping::EarlyStopping(int patience, double min_delta)
    : patience_(patience), min_delta_(min_delta) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be >= 0");
}

bool EarlyStopping::update(double loss) {
  ++epochs_;
  if (best_epoch_ == 0 || loss <= best_ - min_delta_) {
    best_ = loss;
    best_epoch_ = epochs_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

void SegmentationConfig::validate() const {
  check_spec([&] { unet.validate(); });
  adam.validate();
  if (max_epochs < 1) throw ConfigError("epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be >= 0");
}

SegmentationConfig SegmentationConfig::from(const Config& c) {
  SegmentationConfig s;
  s.unet.base_filters = static_cast<int>(c.get_int("model.unet_base"));
  s.unet.use_cbam = c.get_bool("model.use_cbam");
  s.unet.cbam.reduction_ratio =
      static_cast<int>(c.get_int("model.cbam_reduction"));
  s.unet.cbam.spatial_kernel = static_cast<int>(c.get_int("model.cbam_kernel"));
  s.unet.threshold = c.get_double("seg.threshold");
  s.adam = {c.get_double("seg.lr"), c.get_double("seg.beta1"),
            c.get_double("seg.beta2"), c.get_double("train.adam_eps")};
  s.max_epochs = static_cast<int>(c.get_int("seg.epochs"));
  s.patience = static_cast<int>(c.get_int("seg.patience"));
  s.min_delta = c.get_double("seg.min_delta");
  s.batch_size = static_cast<int>(c.get_int("seg.batch_size"));
  s.augment = c.get_bool("seg.augment");
  s.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  s.init_std = c.get_double("model.init_std");
  s.validate();
  return s;
}

SegmentationState init_segmentation(const SegmentationConfig& cfg) {
  cfg.validate();
  SegmentationState s;
  s.unet = init_params(unet_layout(cfg.unet), Rng::derive(cfg.seed, 5).next(),
                       cfg.init_std);
  s.opt = adam_init(s.unet);
  s.rng = Rng::derive(cfg.seed, 6);
  return s;
}

namespace {

double segmentation_step_impl(SegmentationState& state,
                              const SegmentationConfig& cfg,
                              const Tensor& images, const Tensor& masks) {
  const auto p = ParamVars::leaves(state.unet);
  const Var loss =
      ag::bce_with_logits(unet_logits(Var(images), cfg.unet, p), masks);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) {
    throw NumericError("non-finite segmentation loss at step " +
                       std::to_string(state.step + 1));
  }
  loss.backward();
  adam_step(state.unet, p.gradients(), state.opt, cfg.adam);
  state.step += 1;
  return value;
}

}  // namespace

Tensor segment_probabilities(const NetParams& unet, const UNetSpec& spec,
                             const Image8& image) {
  return unet_forward(normalize(image, RangeKind::unit), spec, unet);
}

double segmentation_loss(const NetParams& unet, const UNetSpec& spec,
                         std::span<const ImageSample> samples) {
  if (samples.empty()) throw DataError("no samples for segmentation loss");
  const auto p = ParamVars::constants(unet);
  double total = 0.0;
  for (const auto& s : samples) {
    if (!s.mask) throw DataError("sample " + s.id + " has no mask");
    const Var logits =
        unet_logits(Var(normalize(s.pixels, RangeKind::unit)), spec, p);
    total += ag::bce_with_logits(logits, mask_to_tensor(*s.mask)).value()[0];
  }
  return total / static_cast<double>(samples.size());
}

Checkpoint segmentation_checkpoint(const SegmentationState& state,
                                   const SegmentationConfig& cfg) {
  Checkpoint c;
  c.meta["kind"] = "segmentation";
  c.meta["unet"] = cfg.unet;
  c.meta["use_cbam"] = cfg.unet.use_cbam;
  c.meta["step"] = state.step;
  c.meta["epoch"] = state.epoch;
  c.meta["rng"] = state.rng.state();
  c.meta["adam_t"] = {{"UNet", state.opt.t}};
  insert_group(c.tensors, "UNet", state.unet);
  put_adam(c.tensors, "UNet", state.opt);
  return c;
}

SegmentationState load_segmentation_state(const Checkpoint& ckpt,
                                          SegmentationConfig& cfg) {
  if (ckpt.meta.value("kind", "") != "segmentation") {
    throw DataError("checkpoint does not hold a segmentation model");
  }
  try {
    cfg.unet = ckpt.meta.at("unet").get<UNetSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint spec unreadable: ") + e.what());
  }
  SegmentationState s;
  s.unet = extract_group(ckpt.tensors, "UNet");
  require_same_layout(s.unet, unet_layout(cfg.unet), "UNet");
  s.opt = get_adam(ckpt, "UNet", s.unet);
  s.step = ckpt.meta.value("step", std::int64_t{0});
  s.epoch = ckpt.meta.value("epoch", 0);
  if (ckpt.meta.contains("rng")) s.rng.restore(ckpt.meta.at("rng"));
  return s;
}

SegmentationResult train_segmentation(const SegmentationConfig& cfg,
                                      std::span<const ImageSample> train,
                                      std::span<const ImageSample> val,
                                      const SegmentationHooks& hooks) {
  cfg.validate();
  if (train.empty()) throw DataError("no segmentation training images");
  bool square = true;
  for (const auto& s : train) {
    if (!s.mask) throw DataError("missing mask for training image " + s.id);
    s.validate();
    square = square && s.pixels.height == s.pixels.width;
  }
  if (val.empty() && !hooks.validation_loss) {
    spdlog::warn("no validation images; using the training set");
    val = train;
  }

  SegmentationResult result;
  result.state = init_segmentation(cfg);
  SegmentationState& state = result.state;
  const bool write = !cfg.output_dir.empty();
  if (write) result.history = HistoryLog(cfg.output_dir / "history.jsonl");

  // Identity plus the flips/rotations; quarter turns only for square inputs.
  std::vector<std::optional<AugmentOp>> ops{std::nullopt, AugmentOp::hflip,
                                            AugmentOp::vflip, AugmentOp::rot180};
  if (square) {
    ops.push_back(AugmentOp::rot90);
    ops.push_back(AugmentOp::rot270);
  }

  EarlyStopping stopper(cfg.patience, cfg.min_delta);
  result.best = state.unet;
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = sample_without_replacement(train.size(), train.size(),
                                                  state.rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      std::vector<Tensor> xs, ms;
      for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) {
        ImageSample s = train[order[i]];
        if (cfg.augment) {
          if (auto op = ops[state.rng.index(ops.size())]) s = augment(s, *op);
        }
        xs.push_back(normalize(s.pixels, RangeKind::unit));
        ms.push_back(mask_to_tensor(*s.mask));
      }
      const double loss =
          segmentation_step(state, cfg, stack_batch(xs), stack_batch(ms));
      result.history.write(
          {{"epoch", epoch}, {"step", state.step}, {"loss_bce", loss}});
    }
    state.epoch = epoch;
    const double vloss = hooks.validation_loss
                             ? hooks.validation_loss(state.unet, epoch)
                             : segmentation_loss(state.unet, cfg.unet, val);
    result.validation_losses.push_back(vloss);
    result.history.write({{"epoch", epoch}, {"val_loss", json_number(vloss)}});
    const bool stop = stopper.update(vloss);
    result.epochs_run = epoch;
    if (stopper.best_epoch() == epoch) {
      result.best = state.unet;
      if (write) {
        SegmentationState best_state = state;
        save_checkpoint(cfg.output_dir / "best.ckpt",
                        segmentation_checkpoint(best_state, cfg));
      }
    }
    spdlog::info("segmentation epoch {} val_loss {:.6f}", epoch, vloss);
    if (stop) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  return result;
}

}  // namespace fundus
