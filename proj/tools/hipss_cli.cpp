// hipss: generate, train, eval, localize, gradcheck, merge, params.
// Exit codes: 0 ok, 1 usage, 2 config error, 3 data error, 4 numeric error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hipss/commands.hpp"
#include "hipss/errors.hpp"

namespace {

int report(const char* kind, const std::exception& e, int code) {
  nlohmann::json diag = {{"error", kind}, {"message", e.what()}, {"exit_code", code}};
  std::cerr << diag.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical text-guided pooling with scale-shift adapters"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  hipss::Overrides o;
  std::optional<std::string> checkpoint;
  std::optional<std::string> output;
  std::string split = "test";

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", o.seed, "Parameter-init and fold seed");
    sub->add_option("--k", o.k, "Shots per class");
    sub->add_option("--d-s", o.depth, "SSF depth");
    sub->add_option("--lambda", o.lambda, "Refinement factor");
    sub->add_option("--alpha", o.alpha, "Refinement threshold");
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--data", o.data_dir, "Dataset directory");
  };

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  auto* train = app.add_subcommand("train", "Fit a k-shot model and write a checkpoint");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint, or run a fold x seed sweep");
  auto* loc = app.add_subcommand("localize", "Dice and attention exports for a checkpoint");
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  auto* merge = app.add_subcommand("merge", "Fold SSF adapters into the backbone");
  auto* params = app.add_subcommand("params", "Count trainable parameters");
  for (auto* sub : {gen, train, eval, loc, grad, merge, params}) common(sub);
  for (auto* sub : {eval, loc}) sub->add_option("--split", split, "train | val | test | all");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate; omit for a sweep");
  loc->add_option("--checkpoint", checkpoint, "Checkpoint to localize with")->required();
  merge->add_option("--checkpoint", checkpoint, "Checkpoint to merge")->required();
  merge->add_option("--output", output, "Merged checkpoint path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const hipss::RunConfig config = hipss::load_config(config_path, o);
    hipss::CommandResult r;
    if (*gen) {
      r = hipss::cmd_generate(config);
    } else if (*train) {
      r = hipss::cmd_train(config);
    } else if (*eval) {
      std::optional<std::filesystem::path> ckpt;
      if (checkpoint) ckpt = *checkpoint;
      r = hipss::cmd_eval(config, ckpt, split);
    } else if (*loc) {
      r = hipss::cmd_localize(config, *checkpoint, split);
    } else if (*grad) {
      r = hipss::cmd_gradcheck(config);
    } else if (*merge) {
      std::optional<std::filesystem::path> out;
      if (output) out = *output;
      r = hipss::cmd_merge(config, *checkpoint, out);
    } else {
      r = hipss::cmd_params(config);
    }
    std::cout << r.summary << "\n" << "wrote " << r.written.string() << "\n";
    return 0;
  } catch (const hipss::ConfigError& e) {
    return report("config", e, 2);
  } catch (const hipss::DataError& e) {
    return report("data", e, 3);
  } catch (const hipss::ShapeError& e) {
    return report("data", e, 3);
  } catch (const hipss::NumericError& e) {
    return report("numeric", e, 4);
  } catch (const nlohmann::json::exception& e) {
    return report("data", e, 3);
  } catch (const std::filesystem::filesystem_error& e) {
    return report("data", e, 3);
  }
}
