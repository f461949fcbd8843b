#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "fundus/checkpoint.hpp"
#include "fundus/config.hpp"
#include "fundus/errors.hpp"
#include "fundus/serialize.hpp"
#include "support/oracles.hpp"
#include "support/tiny.hpp"

using namespace fundus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fundus_cfg_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST_CASE("config defaults") {
  const Config c;
  CHECK(c.get_int("train.epochs") == 30);
  CHECK(c.get_int("train.subset_low") == 2000);
  CHECK(c.get_int("train.validate_every_steps") == 500);
  CHECK(c.get_double("seg.lr") == 1e-4);
  CHECK(c.get_int("seg.patience") == 5);
  CHECK(c.get_int("seg.epochs") == 100);
  CHECK(c.get_double("loss.lambda_cyc") == 10.0);
  CHECK(c.get_bool("model.use_cbam"));
  CHECK(c.get_int_list("model.gen_filters") == std::vector<int>{64, 128, 256});
  CHECK(c.get_int_list("model.disc_filters") == std::vector<int>{64, 128, 256, 512, 512, 1});
}

TEST_CASE("config overrides and files") {
  Config c;
  c.apply_override("train.epochs=3");
  c.apply_override("loss.lambda_cyc=0");
  c.apply_override("model.use_cbam=false");
  c.apply_override("model.gen_filters=8,16,16");
  CHECK(c.get_int("train.epochs") == 3);
  CHECK(c.get_double("loss.lambda_cyc") == 0.0);
  CHECK_FALSE(c.get_bool("model.use_cbam"));
  CHECK(c.get_int_list("model.gen_filters") == std::vector<int>{8, 16, 16});
  CHECK_THROWS_AS(c.apply_override("no.such.key=1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("train.epochs=abc"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("train.epochs=1.5"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("model.use_cbam=1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("train.epochs"), ConfigError);

  const fs::path dir = scratch("file");
  write_all(dir / "c.json", R"({"seed": 7, "seg.lr": 0.001})");
  Config f;
  f.load_file(dir / "c.json");
  CHECK(f.get_int("seed") == 7);
  CHECK(f.get_double("seg.lr") == 0.001);
  write_all(dir / "bad.json", R"({"seed": 7,)");
  CHECK_THROWS_AS(f.load_file(dir / "bad.json"), ConfigError);
  write_all(dir / "unknown.json", R"({"sed": 7})");
  CHECK_THROWS_AS(f.load_file(dir / "unknown.json"), ConfigError);
  CHECK_THROWS_AS(f.load_file(dir / "missing.json"), ConfigError);
}

TEST_CASE("config help lists every key with its default") {
  const std::string help = config_help();
  for (const auto& k : config_keys()) {
    const auto line_start = help.find("  " + k.key + " ");
    REQUIRE(line_start != std::string::npos);
    const auto line = help.substr(line_start, help.find('\n', line_start) - line_start);
    CHECK(line.find(k.default_value.dump()) != std::string::npos);
    CHECK(Config().values().at(k.key) == k.default_value);
  }
}

TEST_CASE("spec serialization round trips") {
  GeneratorSpec g = tiny::generator(false);
  g.cbam.reduction_ratio = 2;
  nlohmann::ordered_json j = g;
  const auto g2 = j.get<GeneratorSpec>();
  CHECK(g2.stem_filters == g.stem_filters);
  CHECK(g2.up_filters == g.up_filters);
  CHECK(g2.n_res_blocks == g.n_res_blocks);
  CHECK(g2.use_cbam == g.use_cbam);
  CHECK(g2.cbam.reduction_ratio == 2);
  nlohmann::ordered_json dj = tiny::discriminator();
  CHECK(dj.get<DiscriminatorSpec>().filters == tiny::discriminator().filters);
  nlohmann::ordered_json uj = tiny::unet();
  CHECK(uj.get<UNetSpec>().base_filters == 4);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Checkpoint c;
  c.meta["kind"] = "test";
  c.meta["step"] = 12;
  NetParams a;
  Tensor w = oracle::random_tensor({2, 3, 3, 3}, 1);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(w[i]);
  a.add("conv.w", w);
  a.add("conv.b", Tensor({1, 2, 1, 1}, {0.5, -0.25}));
  insert_group(c.tensors, "G1", a);
  insert_group(c.tensors, "D1", a);
  const fs::path p = scratch("ckpt") / "x.ckpt";
  save_checkpoint(p, c);
  const Checkpoint back = load_checkpoint(p);
  CHECK(back.meta == c.meta);
  CHECK(back.tensors == c.tensors);
  CHECK(extract_group(back.tensors, "G1") == a);
  CHECK(extract_group(back.tensors, "G2").size() == 0);

  const std::string blob = read_all(p);
  CHECK(std::memcmp(blob.data(), "FNDSCKPT", 8) == 0);
  CHECK(blob.size() > 20 + 4 * (54 + 2) * 2);
  // Double-precision detail is dropped on save.
  Checkpoint fine;
  fine.tensors.add("x", Tensor({1, 1, 1, 1}, {0.1}));
  save_checkpoint(p, fine);
  CHECK(load_checkpoint(p).tensors.at("x")[0] == static_cast<double>(0.1f));
}

TEST_CASE("corrupt checkpoints are data errors") {
  const fs::path dir = scratch("corrupt");
  Checkpoint c;
  c.tensors.add("w", oracle::random_tensor({1, 1, 4, 4}, 2));
  save_checkpoint(dir / "ok.ckpt", c);
  const std::string blob = read_all(dir / "ok.ckpt");

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
  write_all(dir / "magic.ckpt", "XXXXXXXX" + blob.substr(8));
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), DataError);
  write_all(dir / "short.ckpt", blob.substr(0, blob.size() - 4));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);
  write_all(dir / "header.ckpt", blob.substr(0, 30));
  CHECK_THROWS_AS(load_checkpoint(dir / "header.ckpt"), DataError);
  std::string version = blob;
  version[8] = 9;
  write_all(dir / "version.ckpt", version);
  CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), DataError);
  std::string schema = blob;
  const auto pos = schema.find("\"tensors\"");
  REQUIRE(pos != std::string::npos);
  schema.replace(pos, 9, "\"tensorz\"");
  write_all(dir / "schema.ckpt", schema);
  CHECK_THROWS_AS(load_checkpoint(dir / "schema.ckpt"), DataError);
  // Parent is a regular file, so the write cannot succeed.
  CHECK_THROWS_AS(save_checkpoint(dir / "ok.ckpt" / "x.ckpt", c), DataError);
}
