#include "hipss/io.hpp"

#include <algorithm>
#include <fstream>

#include "hipss/errors.hpp"

namespace hipss {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(where + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(Vector(m.row(r).begin(), m.row(r).end()));
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& where) {
  if (!j.is_array()) throw DataError(where + ": expected an array of rows");
  std::vector<Vector> rows;
  try {
    rows = j.get<std::vector<Vector>>();
  } catch (const json::exception&) {
    throw DataError(where + ": rows must be numeric arrays");
  }
  const std::size_t cols = rows.empty() ? 0 : rows.front().size();
  Vector data;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DataError(where + ": ragged matrix");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(data));
}

GridCoord coord_from_json(const json& j, const std::string& where) {
  auto c = field<std::vector<std::int64_t>>(j, "coord", where);
  if (c.size() != 2) throw DataError(where + ": coord must have two entries");
  return {c[0], c[1]};
}

json gated_to_json(const GatedAttention& g) {
  return {{"w", g.w}, {"v1", matrix_to_json(g.v1)}, {"v2", matrix_to_json(g.v2)}};
}

GatedAttention gated_from_json(const json& j, const std::string& where) {
  GatedAttention g;
  g.w = field<Vector>(j, "w", where);
  g.v1 = matrix_from_json(j.at("v1"), where + ".v1");
  g.v2 = matrix_from_json(j.at("v2"), where + ".v2");
  return g;
}

json stack_to_json(const TextEncoderStack& s) {
  json blocks = json::array();
  for (const auto& b : s.blocks) {
    blocks.push_back({{"ln_gain", b.norm.gain},
                      {"ln_bias", b.norm.bias},
                      {"w1", matrix_to_json(b.w1)},
                      {"b1", b.b1},
                      {"w2", matrix_to_json(b.out.weight)},
                      {"b2", b.out.bias}});
  }
  return {{"dim", s.dim}, {"blocks", blocks}, {"projection", matrix_to_json(s.projection)}};
}

TextEncoderStack stack_from_json(const json& j) {
  const std::string where = "checkpoint backbone";
  TextEncoderStack s;
  s.dim = field<std::size_t>(j, "dim", where);
  for (const auto& b : j.at("blocks")) {
    EncoderBlock blk;
    blk.norm.gain = field<Vector>(b, "ln_gain", where);
    blk.norm.bias = field<Vector>(b, "ln_bias", where);
    blk.w1 = matrix_from_json(b.at("w1"), where);
    blk.b1 = field<Vector>(b, "b1", where);
    blk.out.weight = matrix_from_json(b.at("w2"), where);
    blk.out.bias = field<Vector>(b, "b2", where);
    s.blocks.push_back(std::move(blk));
  }
  s.projection = matrix_from_json(j.at("projection"), where);
  return s;
}

}  // namespace

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j, int indent) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(indent) << '\n';
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

json bag_to_json(const SlideBag& bag) {
  json regions = json::array();
  for (const auto& r : bag.regions) {
    json instances = json::array();
    for (const auto& inst : r.instances) {
      json ij = {{"coord", inst.coord}, {"embedding", inst.embedding}};
      if (inst.mask) ij["mask"] = *inst.mask;
      instances.push_back(std::move(ij));
    }
    regions.push_back({{"coord", r.coord}, {"instances", std::move(instances)}});
  }
  return {{"slide_id", bag.slide_id}, {"label", bag.label}, {"regions", std::move(regions)}};
}

SlideBag bag_from_json(const json& j, std::size_t dim) {
  if (!j.is_object()) throw DataError("bag: expected an object");
  SlideBag bag;
  bag.slide_id = field<std::string>(j, "slide_id", "bag");
  const std::string where = "bag '" + bag.slide_id + "'";
  bag.label = field<std::size_t>(j, "label", where);
  auto regions = j.find("regions");
  if (regions == j.end() || !regions->is_array()) throw DataError(where + ": missing regions array");
  for (const auto& rj : *regions) {
    Region r;
    r.coord = coord_from_json(rj, where);
    auto insts = rj.find("instances");
    if (insts == rj.end() || !insts->is_array()) throw DataError(where + ": region without instances array");
    for (const auto& ij : *insts) {
      Instance inst;
      inst.coord = coord_from_json(ij, where);
      inst.embedding = field<Vector>(ij, "embedding", where);
      if (ij.contains("mask")) inst.mask = field<int>(ij, "mask", where);
      r.instances.push_back(std::move(inst));
    }
    bag.regions.push_back(std::move(r));
  }
  bag.validate(dim > 0 ? dim : (bag.regions.empty() || bag.regions[0].instances.empty()
                                     ? 0
                                     : bag.regions[0].instances[0].embedding.size()));
  return bag;
}

json prompts_to_json(std::span<const PromptTokens> prompts) {
  json classes = json::array();
  for (const auto& p : prompts) {
    classes.push_back({{"id", p.class_id},
                       {"name", p.name},
                       {"region_tokens", matrix_to_json(p.region_tokens)},
                       {"slide_tokens", matrix_to_json(p.slide_tokens)}});
  }
  return {{"classes", classes}};
}

std::vector<PromptTokens> prompts_from_json(const json& j, std::size_t dim) {
  if (!j.is_object() || !j.contains("classes") || !j["classes"].is_array()) {
    throw DataError("prompt file: expected {\"classes\": [...]}");
  }
  std::vector<PromptTokens> out;
  for (const auto& cj : j["classes"]) {
    PromptTokens p;
    p.class_id = field<std::size_t>(cj, "id", "prompt");
    p.name = field<std::string>(cj, "name", "prompt");
    const std::string where = "prompt '" + p.name + "'";
    p.region_tokens = matrix_from_json(cj.at("region_tokens"), where + ".region_tokens");
    p.slide_tokens = matrix_from_json(cj.at("slide_tokens"), where + ".slide_tokens");
    if (p.region_tokens.rows() == 0 || p.slide_tokens.rows() == 0) throw DataError(where + ": empty token sequence");
    if (dim > 0 && (p.region_tokens.cols() != dim || p.slide_tokens.cols() != dim)) {
      throw DataError(where + ": token width does not match dim " + std::to_string(dim));
    }
    out.push_back(std::move(p));
  }
  std::sort(out.begin(), out.end(), [](const PromptTokens& a, const PromptTokens& b) { return a.class_id < b.class_id; });
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (out[c].class_id != c) throw DataError("prompt file: class ids must be 0..C-1");
  }
  return out;
}

json split_to_json(const SplitPlan& plan) {
  return {{"k", plan.k}, {"fold_seed", plan.fold_seed}, {"train", plan.train}, {"val", plan.val}, {"test", plan.test}};
}

void save_dataset(const fs::path& dir, const Dataset& ds, const RunConfig& config, std::span<const SplitPlan> splits) {
  fs::create_directories(dir / "slides");
  json files = json::array();
  json labels = json::object();
  for (const auto& bag : ds.slides) {
    const std::string rel = "slides/" + bag.slide_id + ".json";
    write_json(dir / rel, bag_to_json(bag), -1);
    files.push_back(rel);
    labels[bag.slide_id] = bag.label;
  }
  write_json(dir / "prompts.json", prompts_to_json(ds.prompts), -1);
  json split_list = json::array();
  for (const auto& s : splits) split_list.push_back(split_to_json(s));
  json manifest = {{"format", "hipss-dataset/1"},
                   {"config", to_json(config)},
                   {"num_classes", ds.spec.num_classes},
                   {"dim", ds.spec.dim},
                   {"prompts", "prompts.json"},
                   {"slides", files},
                   {"labels", labels},
                   {"splits", split_list}};
  write_json(dir / "manifest.json", manifest);
}

LoadedDataset load_dataset(const fs::path& dir) {
  LoadedDataset out;
  out.manifest = read_json(dir / "manifest.json");
  const std::string where = "manifest '" + (dir / "manifest.json").string() + "'";
  out.num_classes = field<std::size_t>(out.manifest, "num_classes", where);
  const auto dim = field<std::size_t>(out.manifest, "dim", where);
  out.prompts = prompts_from_json(read_json(dir / field<std::string>(out.manifest, "prompts", where)), dim);
  if (out.prompts.size() != out.num_classes) throw DataError(where + ": prompt count does not match num_classes");
  for (const auto& rel : field<std::vector<std::string>>(out.manifest, "slides", where)) {
    SlideBag bag = bag_from_json(read_json(dir / rel), dim);
    if (bag.label >= out.num_classes) throw DataError("slide '" + bag.slide_id + "' has an invalid label");
    out.slides.push_back(std::move(bag));
  }
  std::sort(out.slides.begin(), out.slides.end(),
            [](const SlideBag& a, const SlideBag& b) { return a.slide_id < b.slide_id; });
  return out;
}

json history_to_json(std::span<const EpochRecord> history) {
  json h = json::array();
  for (const auto& e : history) {
    h.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_auc", e.val_auc}, {"val_loss", e.val_loss}});
  }
  return h;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  const Model& m = ckpt.model;
  json sites = json::array();
  for (const auto& s : m.sites) {
    sites.push_back({{"block", s.block},
                     {"site", std::string(to_string(s.kind))},
                     {"trainable", s.trainable},
                     {"gamma", s.params.gamma},
                     {"beta", s.params.beta}});
  }
  json j = {{"format", "hipss-checkpoint/1"},
            {"config", to_json(ckpt.config)},
            {"prompts", prompts_to_json(m.prompts)},
            {"merged", m.merged()},
            {"ssf", sites},
            {"attention", {{"region", gated_to_json(m.attention.region)}, {"slide", gated_to_json(m.attention.slide)}}},
            {"trainable_count", m.trainable_count()},
            {"history", history_to_json(ckpt.history)},
            {"best_epoch", ckpt.best_epoch},
            {"best_val_auc", ckpt.best_val_auc}};
  if (m.merged()) j["backbone"] = stack_to_json(m.encoder);
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  const std::string where = "checkpoint";
  if (field<std::string>(j, "format", where) != "hipss-checkpoint/1") throw DataError("checkpoint: unknown format");
  Checkpoint c;
  try {
    c.config = config_from_json(j.at("config"));
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  Model& m = c.model;
  m.config = c.config.model;
  m.prompts = prompts_from_json(j.at("prompts"), m.config.dim);
  const bool merged = field<bool>(j, "merged", where);
  m.encoder = merged ? stack_from_json(j.at("backbone"))
                     : TextEncoderStack::build(m.config.dim, m.config.blocks, m.config.backbone_seed);
  for (const auto& sj : j.at("ssf")) {
    SsfSite s;
    s.block = field<std::size_t>(sj, "block", where);
    s.kind = site_kind_from_string(field<std::string>(sj, "site", where));
    s.trainable = field<bool>(sj, "trainable", where);
    s.params.gamma = field<Vector>(sj, "gamma", where);
    s.params.beta = field<Vector>(sj, "beta", where);
    m.sites.push_back(std::move(s));
  }
  if (merged != m.sites.empty()) throw DataError("checkpoint: merged flag disagrees with SSF records");
  if (!merged && m.sites.size() != m.config.blocks * kSitesPerBlock) {
    throw DataError("checkpoint: expected " + std::to_string(m.config.blocks * kSitesPerBlock) + " SSF records");
  }
  const json& att = j.at("attention");
  m.attention.region = gated_from_json(att.at("region"), "checkpoint attention.region");
  m.attention.slide = gated_from_json(att.at("slide"), "checkpoint attention.slide");
  for (const auto& e : j.at("history")) {
    c.history.push_back({field<std::size_t>(e, "epoch", where), field<double>(e, "train_loss", where),
                         field<double>(e, "val_auc", where), field<double>(e, "val_loss", where)});
  }
  c.best_epoch = field<std::size_t>(j, "best_epoch", where);
  c.best_val_auc = field<double>(j, "best_val_auc", where);
  return c;
}

json metrics_to_json(const EvalMetrics& metrics) {
  json slides = json::array();
  for (const auto& s : metrics.slides) {
    json sj = {{"slide_id", s.slide_id}, {"label", s.label}, {"probabilities", s.probabilities}};
    if (s.dice) sj["dice"] = *s.dice;
    slides.push_back(std::move(sj));
  }
  json j = {{"auc", metrics.auc}, {"dice_slides", metrics.dice_slides}, {"slides", slides}};
  j["dice"] = metrics.dice ? json(*metrics.dice) : json(nullptr);
  return j;
}

}  // namespace hipss
