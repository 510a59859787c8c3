#pragma once

// JSON file formats: slide bags, prompt files, dataset manifests, model
// checkpoints and metrics. Dumps are deterministic (sorted keys, shortest
// round-trip doubles) so identical inputs give byte-identical files.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hipss/config.hpp"
#include "hipss/dataeval.hpp"
#include "hipss/hierpool.hpp"
#include "hipss/model.hpp"
#include "hipss/train.hpp"

namespace hipss {

nlohmann::json read_json(const std::filesystem::path& path);
/// indent < 0 writes compact JSON.
void write_json(const std::filesystem::path& path, const nlohmann::json& j, int indent = 2);

nlohmann::json bag_to_json(const SlideBag& bag);
/// Throws DataError on schema violations; validates dims when dim > 0.
SlideBag bag_from_json(const nlohmann::json& j, std::size_t dim = 0);

nlohmann::json prompts_to_json(std::span<const PromptTokens> prompts);
std::vector<PromptTokens> prompts_from_json(const nlohmann::json& j, std::size_t dim = 0);

struct LoadedDataset {
  nlohmann::json manifest;
  std::vector<SlideBag> slides;  // sorted by slide id
  std::vector<PromptTokens> prompts;
  std::size_t num_classes = 0;
};

/// Writes manifest.json, prompts.json and slides/<id>.json under dir.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds, const RunConfig& config,
                  std::span<const SplitPlan> splits);
LoadedDataset load_dataset(const std::filesystem::path& dir);

nlohmann::json split_to_json(const SplitPlan& plan);

struct Checkpoint {
  RunConfig config;
  Model model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

nlohmann::json history_to_json(std::span<const EpochRecord> history);
nlohmann::json metrics_to_json(const EvalMetrics& metrics);

}  // namespace hipss
