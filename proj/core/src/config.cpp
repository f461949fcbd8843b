#include "fundus/config.hpp"

#include <fstream>
#include <sstream>

#include "fundus/errors.hpp"

namespace fundus {

using ojson = nlohmann::ordered_json;

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", 0, "seed for initialization, sampling and augmentation"},
      {"data.resolution", 256, "working resolution (square), divisible by 16"},
      {"degrade.kinds", "all",
       "comma list of blur,low_illum,high_illum,uneven_illum,color_distort or all"},
      {"degrade.randomize", true, "draw degradation strength per image"},
      {"degrade.synthesize", 0,
       "number of synthetic fundus phantoms to generate when --in is absent"},
      {"degrade.val_fraction", 0.1, "fraction of ids assigned to validation"},
      {"degrade.test_fraction", 0.1, "fraction of ids assigned to test"},
      {"train.epochs", 30, "restoration epochs"},
      {"train.subset_low", 2000, "low-quality images drawn per epoch"},
      {"train.subset_high", 2000, "high-quality images drawn per epoch"},
      {"train.batch_size", 1, "restoration batch size"},
      {"train.validate_every_steps", 500, "steps between validation passes"},
      {"train.lr", 0.0002, "restoration learning rate (adaptive moments)"},
      {"train.beta1", 0.5, "restoration first-moment decay"},
      {"train.beta2", 0.999, "restoration second-moment decay"},
      {"train.adam_eps", 1e-8, "optimizer epsilon (both tasks)"},
      {"loss.lambda_cyc", 10.0, "cycle-consistency weight"},
      {"seg.epochs", 100, "maximum segmentation epochs"},
      {"seg.patience", 5, "epochs without validation improvement before stopping"},
      {"seg.min_delta", 1e-6, "minimum validation-loss decrease counted as improvement"},
      {"seg.lr", 0.0001, "segmentation learning rate"},
      {"seg.beta1", 0.9, "segmentation first-moment decay"},
      {"seg.beta2", 0.999, "segmentation second-moment decay"},
      {"seg.batch_size", 1, "segmentation batch size"},
      {"seg.augment", true, "random flips/rotations during segmentation training"},
      {"seg.threshold", 0.5, "probability threshold for vessel masks"},
      {"seg.val_fraction", 0.2,
       "held-out fraction when the dataset has no validation split"},
      {"model.use_cbam", true, "attention blocks on (ablation toggle)"},
      {"model.cbam_reduction", 16, "channel-attention reduction ratio"},
      {"model.cbam_kernel", 7, "spatial-attention kernel (odd)"},
      {"model.gen_filters", "64,128,256", "generator encoder filters"},
      {"model.res_blocks", 9, "generator residual attention blocks"},
      {"model.disc_filters", "64,128,256,512,512,1", "discriminator filters"},
      {"model.leaky_slope", 0.2, "discriminator leaky-ReLU slope"},
      {"model.unet_base", 64, "segmenter filters at the first level"},
      {"model.init_std", 0.02, "std of Gaussian weight initialization"},
      {"metrics.psnr_bins", "10,40,1", "PSNR histogram lo,hi,width (dB)"},
      {"metrics.ssim_bins", "0,1,0.02", "SSIM histogram lo,hi,width"},
      {"output.dir", "",
       "output root; empty uses $FUNDUS_OUTPUT_ROOT, then ./runs"},
  };
  return keys;
}

Config::Config() {
  values_ = ojson::object();
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  merge(j);
}

void Config::merge(const ojson& object) {
  if (!object.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : object.items()) set(k, v);
}

void Config::set(const std::string& key, ojson value) {
  if (!values_.contains(key)) throw ConfigError("unknown config key: " + key);
  const ojson& current = values_[key];
  const bool ok =
      (current.is_boolean() && value.is_boolean()) ||
      (current.is_string() && value.is_string()) ||
      (current.is_number_integer() && value.is_number_integer()) ||
      (current.is_number_float() && value.is_number());
  if (!ok) {
    throw ConfigError("config key " + key + " expects " +
                      std::string(current.type_name()) + ", got " +
                      value.dump());
  }
  if (current.is_number_float()) value = value.get<double>();
  values_[key] = std::move(value);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must be key=value: " + assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const ojson& current = raw(key);
  if (current.is_string()) {
    set(key, text);
    return;
  }
  ojson parsed;
  try {
    parsed = ojson::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("cannot parse value for " + key + ": " + text);
  }
  set(key, parsed);
}

const ojson& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key: " + key);
  return *it;
}

bool Config::get_bool(const std::string& key) const {
  return raw(key).get<bool>();
}
long long Config::get_int(const std::string& key) const {
  return raw(key).get<long long>();
}
double Config::get_double(const std::string& key) const {
  return raw(key).get<double>();
}
std::string Config::get_string(const std::string& key) const {
  return raw(key).get<std::string>();
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": bad number '" + item + "'");
    }
  }
  return out;
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (double v : get_double_list(key)) {
    if (v != static_cast<int>(v)) {
      throw ConfigError("config key " + key + " expects integers");
    }
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::string config_help() {
  std::size_t kw = 0, dw = 0;
  for (const auto& k : config_keys()) {
    kw = std::max(kw, k.key.size());
    dw = std::max(dw, k.default_value.dump().size());
  }
  std::ostringstream os;
  os << "Config keys (JSON file with flat dotted keys, or --set key=value):\n";
  for (const auto& k : config_keys()) {
    const std::string d = k.default_value.dump();
    os << "  " << k.key << std::string(kw - k.key.size() + 2, ' ') << d
       << std::string(dw - d.size() + 2, ' ') << k.help << "\n";
  }
  return os.str();
}

}  // namespace fundus
