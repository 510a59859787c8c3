#pragma once

// Run configuration: every field has a default; a JSON file overlays the
// defaults (unknown keys rejected), then command-line flags overlay that.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "hipss/dataeval.hpp"
#include "hipss/model.hpp"
#include "hipss/train.hpp"

namespace hipss {

struct GradcheckConfig {
  std::size_t dim = 16;
  std::size_t hidden = 8;
  std::size_t blocks = 4;
  std::size_t depth = 2;
  std::size_t regions = 2;
  std::size_t instances = 3;
  double step = 1e-6;
  double margin = 0.02;  // min distance of every cosine from 0 and alpha
  std::uint64_t seed = 1;
};

struct SweepConfig {
  std::size_t folds = 3;
  std::size_t seeds = 1;
};

struct RunConfig {
  GeneratorSpec generator;
  ModelConfig model;
  TrainConfig train;
  SplitSpec split;  // split.dataset_seed tracks generator.seed
  EvalConfig eval;
  GradcheckConfig gradcheck;
  SweepConfig sweep;
  std::uint64_t seed = 0;  // parameter init and fold sampling
  std::string data_dir = "data";
  std::string out_dir = "out";

  void validate() const;
};

/// Command-line overrides, applied after the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::size_t> depth;
  std::optional<double> lambda;
  std::optional<double> alpha;
  std::optional<std::string> out_dir;
  std::optional<std::string> data_dir;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

/// Defaults, then `path` when given, then overrides; validated.
RunConfig load_config(const std::optional<std::string>& path, const Overrides& overrides = {});

}  // namespace hipss
