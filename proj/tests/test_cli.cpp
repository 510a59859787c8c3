#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hipss/config.hpp"
#include "hipss/errors.hpp"
#include "hipss/io.hpp"
#include "oracles.hpp"

using namespace hipss;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hipss_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(HIPSS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json small_config(const fs::path& dir) {
  json j = to_json(RunConfig{});
  j["generator"]["dim"] = 16;
  j["generator"]["slides_per_class"] = 30;
  j["generator"]["regions_max"] = 5;
  j["generator"]["instances_max"] = 10;
  j["model"]["dim"] = 16;
  j["model"]["hidden"] = 8;
  j["model"]["blocks"] = 4;
  j["train"]["max_epochs"] = 10;
  j["train"]["patience"] = 5;
  j["sweep"]["folds"] = 2;
  j["data_dir"] = (dir / "data").string();
  j["out_dir"] = (dir / "out").string();
  return j;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  write_json(p, j);
  return p;
}

}  // namespace

TEST_CASE("config overlay rejects unknown keys") {
  const json defaults = to_json(RunConfig{});
  CHECK(to_json(config_from_json(defaults)) == defaults);
  CHECK(to_json(config_from_json(json::object())) == defaults);

  CHECK_THROWS_AS(config_from_json(json{{"trian", json::object()}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"dimm", 3}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(json{{"model", {{"dim", "wide"}}}}), ConfigError);

  const RunConfig c = config_from_json(json{{"model", {{"depth", 4}}}, {"seed", 3}});
  CHECK(c.model.depth == 4);
  CHECK(c.seed == 3);
  CHECK(c.model.dim == RunConfig{}.model.dim);
}

TEST_CASE("overrides apply after the config file") {
  const fs::path dir = scratch("overrides");
  json j = small_config(dir);
  j["seed"] = 5;
  const fs::path cfg = write_config(dir, j);
  Overrides o;
  o.seed = 9;
  o.depth = 3;
  o.lambda = 4.0;
  const RunConfig c = load_config(cfg.string(), o);
  CHECK(c.seed == 9);
  CHECK(c.model.depth == 3);
  CHECK(c.model.refinement.lambda == 4.0);
  CHECK(c.model.dim == 16);

  Overrides bad;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(load_config(cfg.string(), bad), ConfigError);
  CHECK_THROWS_AS(load_config((dir / "missing.json").string()), std::exception);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip") {
  RunConfig config;
  config.model.dim = 16;
  config.model.hidden = 8;
  config.model.blocks = 3;
  config.generator.dim = 16;
  config.generator.slides_per_class = 2;
  const Dataset ds = generate(config.generator);
  Checkpoint ckpt{config, Model::create(config.model, ds.prompts, 2), {{1, 0.7, 0.5, 0.6}}, 1, 0.5};
  const Checkpoint back = checkpoint_from_json(json::parse(checkpoint_to_json(ckpt).dump()));
  CHECK(back.model.trainable() == ckpt.model.trainable());
  CHECK(back.model.encoder.checksum() == ckpt.model.encoder.checksum());
  CHECK(back.best_epoch == 1);
  CHECK(checkpoint_to_json(back) == checkpoint_to_json(ckpt));

  const auto a = predict(ckpt.model, ds.slides);
  const auto b = predict(back.model, ds.slides);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].probabilities == b[i].probabilities);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch("codes");
  const fs::path cfg = write_config(dir, small_config(dir));
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("params --config " + cfg.string() + " --k notanumber") == 1);

  json bad = small_config(dir);
  bad["generator"]["tumor_region_fraction"] = 2.0;
  const fs::path bad_dir = dir / "bad";
  fs::create_directories(bad_dir);
  CHECK(run("generate --config " + write_config(bad_dir, bad).string()) == 2);
  CHECK(run("params --config " + cfg.string() + " --d-s 0") == 2);

  CHECK(run("train --config " + cfg.string() + " --data " + (dir / "nothing").string()) == 3);
  CHECK(run("eval --config " + cfg.string() + " --checkpoint " + (dir / "nope.json").string()) == 3);
  CHECK(run("params --config " + cfg.string()) == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli pipeline") {
  const fs::path dir = scratch("pipeline");
  const fs::path cfg = write_config(dir, small_config(dir));
  const std::string c = " --config " + cfg.string();

  REQUIRE(run("generate" + c) == 0);
  REQUIRE(run("generate" + c + " --data " + (dir / "data2").string()) == 0);
  json first = read_json(dir / "data" / "manifest.json");
  json second = read_json(dir / "data2" / "manifest.json");
  first["config"].erase("data_dir");
  second["config"].erase("data_dir");
  CHECK(first == second);
  CHECK(slurp(dir / "data2" / "prompts.json") == slurp(dir / "data" / "prompts.json"));
  CHECK(slurp(dir / "data2" / "slides" / "c1-0003.json") == slurp(dir / "data" / "slides" / "c1-0003.json"));

  SUBCASE("params matches the closed form") {
    REQUIRE(run("params" + c + " --d-s 3") == 0);
    const json p = read_json(dir / "out" / "params.json");
    CHECK(p["trainable"] == p["closed_form"]);
    CHECK(p["trainable"].get<std::size_t>() == 2 * 16 * 2 * 3 + 2 * (2 * 8 * 16 + 8));
    CHECK(p["by_depth"].size() == 4);
  }

  SUBCASE("train, merge and evaluate") {
    REQUIRE(run("train" + c + " --k 4") == 0);
    const fs::path ckpt = dir / "out" / "checkpoint.json";
    REQUIRE(fs::exists(ckpt));
    const json train = read_json(dir / "out" / "train.json");
    CHECK(train["epochs_run"].get<std::size_t>() >= 1);

    REQUIRE(run("merge" + c + " --checkpoint " + ckpt.string()) == 0);
    const fs::path merged = dir / "out" / "checkpoint_merged.json";
    CHECK(run("merge" + c + " --checkpoint " + merged.string()) != 0);

    REQUIRE(run("eval" + c + " --checkpoint " + ckpt.string()) == 0);
    const json plain = read_json(dir / "out" / "metrics_test.json");
    REQUIRE(run("eval" + c + " --checkpoint " + merged.string()) == 0);
    const json folded = read_json(dir / "out" / "metrics_test.json");
    CHECK(folded["merged"] == true);
    CHECK(std::abs(plain["metrics"]["auc"].get<double>() - folded["metrics"]["auc"].get<double>()) <= 1e-10);
    const auto& ps = plain["metrics"]["slides"];
    const auto& fs_ = folded["metrics"]["slides"];
    REQUIRE(ps.size() == fs_.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      worst = std::max(worst, oracle::max_abs_diff(ps[i]["probabilities"].get<Vector>(),
                                                   fs_[i]["probabilities"].get<Vector>()));
    }
    CHECK(worst <= 1e-10);

    REQUIRE(run("localize" + c + " --checkpoint " + ckpt.string()) == 0);
    CHECK(fs::exists(dir / "out" / "localize_test.json"));
    CHECK(!fs::is_empty(dir / "out" / "attention"));
  }

  SUBCASE("gradcheck writes both modes") {
    REQUIRE(run("gradcheck" + c) == 0);
    const json g = read_json(dir / "out" / "gradcheck.json");
    CHECK(g["modes"]["through_score"]["max_rel_error"].get<double>() <= 1e-4);
    CHECK(g["modes"]["detached"]["max_rel_error"].get<double>() <= 1e-4);
  }
  fs::remove_all(dir);
}
