#pragma once

// Subcommand implementations shared by the CLI, the Python module and the
// acceptance suite. Each writes its JSON artifact under the configured
// directories and returns it together with a one-paragraph summary.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hipss/config.hpp"
#include "hipss/dataeval.hpp"
#include "hipss/io.hpp"
#include "hipss/train.hpp"

namespace hipss {

struct CommandResult {
  nlohmann::json output;
  std::string summary;
  std::filesystem::path written;
};

struct ExperimentResult {
  SplitPlan split;
  FitResult fit;
  EvalMetrics test;
};

/// Split, initialize, fit and evaluate on the test partition.
ExperimentResult run_experiment(const RunConfig& config, std::span<const SlideBag> slides,
                                const std::vector<PromptTokens>& prompts, std::uint64_t fold_seed,
                                std::uint64_t init_seed);

struct GradcheckProblem {
  Model model;
  SlideBag bag;
  std::size_t attempts = 0;
};

/// Small model plus a regions x instances bag whose instance cosines to the
/// guidance embedding cover all three refinement branches; every cosine
/// (instance and region level) stays at least `margin` away from 0 and alpha.
GradcheckProblem make_gradcheck_problem(const RunConfig& config, GradientMode mode);

struct GradcheckReport {
  /// Against central differences of the extended-precision reference loss.
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  /// Same measure with the differences taken on the double-precision loss.
  double max_rel_error_double = 0.0;
  std::size_t parameters = 0;
  double seconds = 0.0;
};

GradcheckReport run_gradcheck(const RunConfig& config, GradientMode mode);

/// Splits a dataset by name: train | val | test | all.
std::vector<SlideBag> split_slides(const LoadedDataset& data, const RunConfig& config, const std::string& split);

CommandResult cmd_generate(const RunConfig& config);
CommandResult cmd_train(const RunConfig& config);
/// With a checkpoint: evaluate it on `split`. Without: fold x seed sweep of
/// train+test runs, reported as mean and std.
CommandResult cmd_eval(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
                       const std::string& split);
CommandResult cmd_localize(const RunConfig& config, const std::filesystem::path& checkpoint, const std::string& split);
CommandResult cmd_gradcheck(const RunConfig& config);
CommandResult cmd_merge(const RunConfig& config, const std::filesystem::path& checkpoint,
                        const std::optional<std::filesystem::path>& output);
CommandResult cmd_params(const RunConfig& config);

}  // namespace hipss
