#include "hipss/config.hpp"

#include <fstream>
#include <set>

#include "hipss/errors.hpp"

namespace hipss {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be rejected by name.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config '" + label() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + field(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void get_optional_index(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config field '" + field(key) + "' has the wrong type");
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return std::nullopt;
    return Section(*it, field(key));
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + field(it.key().c_str()) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_generator(Section& s, GeneratorSpec& g) {
  s.get("seed", g.seed);
  s.get("num_classes", g.num_classes);
  s.get("dim", g.dim);
  s.get_optional_index("normal_class", g.normal_class);
  s.get("noise", g.noise);
  s.get("slides_per_class", g.slides_per_class);
  s.get("regions_min", g.regions_min);
  s.get("regions_max", g.regions_max);
  s.get("instances_min", g.instances_min);
  s.get("instances_max", g.instances_max);
  s.get("tumor_region_fraction", g.tumor_region_fraction);
  s.get("tumor_instance_fraction", g.tumor_instance_fraction);
  s.get("rho", g.rho);
  s.get("region_tokens", g.region_tokens);
  s.get("slide_tokens", g.slide_tokens);
  s.get("max_prototype_cosine", g.max_prototype_cosine);
  s.finish();
}

void read_model(Section& s, ModelConfig& m) {
  s.get("dim", m.dim);
  s.get("hidden", m.hidden);
  s.get("blocks", m.blocks);
  s.get("depth", m.depth);
  s.get("backbone_seed", m.backbone_seed);
  s.get("sigma_init", m.sigma_init);
  s.get("tau", m.tau);
  std::string guidance = to_string(m.guidance.kind);
  s.get("guidance", guidance);
  m.guidance.kind = guidance_kind_from_string(guidance);
  s.get("tumor_class", m.guidance.tumor_class);
  if (auto r = s.child("refinement")) {
    r->get("lambda", m.refinement.lambda);
    r->get("alpha", m.refinement.alpha);
    r->get("enabled", m.refinement.enabled);
    std::string mode = to_string(m.refinement.mode);
    r->get("gradient_mode", mode);
    m.refinement.mode = gradient_mode_from_string(mode);
    r->finish();
  }
  s.finish();
}

void read_train(Section& s, TrainConfig& t) {
  s.get("lr", t.adam.lr);
  s.get("beta1", t.adam.beta1);
  s.get("beta2", t.adam.beta2);
  s.get("eps", t.adam.eps);
  s.get("max_epochs", t.max_epochs);
  s.get("patience", t.patience);
  s.finish();
}

}  // namespace

void RunConfig::validate() const {
  generator.validate();
  model.validate();
  train.validate();
  if (generator.dim != model.dim) throw ConfigError("generator.dim must equal model.dim");
  if (split.k < 1) throw ConfigError("split.k must be >= 1");
  if (split.val_per_class < 1) throw ConfigError("split.val_per_class must be >= 1");
  if (split.test_per_class < 1) throw ConfigError("split.test_per_class must be >= 1");
  if (!(eval.dice_threshold >= 0.0 && eval.dice_threshold <= 1.0)) {
    throw ConfigError("eval.dice_threshold must lie in [0, 1]");
  }
  if (gradcheck.regions < 1 || gradcheck.instances < 1) throw ConfigError("gradcheck bag must be nonempty");
  if (!(gradcheck.step > 0.0)) throw ConfigError("gradcheck.step must be > 0");
  if (sweep.folds < 1 || sweep.seeds < 1) throw ConfigError("sweep.folds and sweep.seeds must be >= 1");
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("data_dir", c.data_dir);
  root.get("out_dir", c.out_dir);
  if (auto s = root.child("generator")) read_generator(*s, c.generator);
  if (auto s = root.child("model")) read_model(*s, c.model);
  if (auto s = root.child("train")) read_train(*s, c.train);
  if (auto s = root.child("split")) {
    s->get("k", c.split.k);
    s->get("val_per_class", c.split.val_per_class);
    s->get("test_per_class", c.split.test_per_class);
    s->finish();
  }
  if (auto s = root.child("eval")) {
    s->get("dice_threshold", c.eval.dice_threshold);
    std::string mode = to_string(c.eval.saliency);
    s->get("saliency", mode);
    c.eval.saliency = saliency_mode_from_string(mode);
    s->finish();
  }
  if (auto s = root.child("gradcheck")) {
    s->get("dim", c.gradcheck.dim);
    s->get("hidden", c.gradcheck.hidden);
    s->get("blocks", c.gradcheck.blocks);
    s->get("depth", c.gradcheck.depth);
    s->get("regions", c.gradcheck.regions);
    s->get("instances", c.gradcheck.instances);
    s->get("step", c.gradcheck.step);
    s->get("margin", c.gradcheck.margin);
    s->get("seed", c.gradcheck.seed);
    s->finish();
  }
  if (auto s = root.child("sweep")) {
    s->get("folds", c.sweep.folds);
    s->get("seeds", c.sweep.seeds);
    s->finish();
  }
  root.finish();
  c.split.dataset_seed = c.generator.seed;
  c.split.fold_seed = c.seed;
  return c;
}

json to_json(const RunConfig& c) {
  const auto& g = c.generator;
  const auto& m = c.model;
  json normal = g.normal_class ? json(*g.normal_class) : json(nullptr);
  return {
      {"seed", c.seed},
      {"data_dir", c.data_dir},
      {"out_dir", c.out_dir},
      {"generator",
       {{"seed", g.seed},
        {"num_classes", g.num_classes},
        {"dim", g.dim},
        {"normal_class", normal},
        {"noise", g.noise},
        {"slides_per_class", g.slides_per_class},
        {"regions_min", g.regions_min},
        {"regions_max", g.regions_max},
        {"instances_min", g.instances_min},
        {"instances_max", g.instances_max},
        {"tumor_region_fraction", g.tumor_region_fraction},
        {"tumor_instance_fraction", g.tumor_instance_fraction},
        {"rho", g.rho},
        {"region_tokens", g.region_tokens},
        {"slide_tokens", g.slide_tokens},
        {"max_prototype_cosine", g.max_prototype_cosine}}},
      {"model",
       {{"dim", m.dim},
        {"hidden", m.hidden},
        {"blocks", m.blocks},
        {"depth", m.depth},
        {"backbone_seed", m.backbone_seed},
        {"sigma_init", m.sigma_init},
        {"tau", m.tau},
        {"guidance", to_string(m.guidance.kind)},
        {"tumor_class", m.guidance.tumor_class},
        {"refinement",
         {{"lambda", m.refinement.lambda},
          {"alpha", m.refinement.alpha},
          {"enabled", m.refinement.enabled},
          {"gradient_mode", to_string(m.refinement.mode)}}}}},
      {"train",
       {{"lr", c.train.adam.lr},
        {"beta1", c.train.adam.beta1},
        {"beta2", c.train.adam.beta2},
        {"eps", c.train.adam.eps},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience}}},
      {"split", {{"k", c.split.k}, {"val_per_class", c.split.val_per_class}, {"test_per_class", c.split.test_per_class}}},
      {"eval", {{"dice_threshold", c.eval.dice_threshold}, {"saliency", to_string(c.eval.saliency)}}},
      {"gradcheck",
       {{"dim", c.gradcheck.dim},
        {"hidden", c.gradcheck.hidden},
        {"blocks", c.gradcheck.blocks},
        {"depth", c.gradcheck.depth},
        {"regions", c.gradcheck.regions},
        {"instances", c.gradcheck.instances},
        {"step", c.gradcheck.step},
        {"margin", c.gradcheck.margin},
        {"seed", c.gradcheck.seed}}},
      {"sweep", {{"folds", c.sweep.folds}, {"seeds", c.sweep.seeds}}},
  };
}

RunConfig load_config(const std::optional<std::string>& path, const Overrides& o) {
  json j = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file '" + *path + "'");
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file '" + *path + "' is not valid JSON: " + e.what());
    }
  }
  RunConfig c = config_from_json(j);
  if (o.seed) c.seed = *o.seed;
  if (o.k) c.split.k = *o.k;
  if (o.depth) c.model.depth = *o.depth;
  if (o.lambda) c.model.refinement.lambda = *o.lambda;
  if (o.alpha) c.model.refinement.alpha = *o.alpha;
  if (o.out_dir) c.out_dir = *o.out_dir;
  if (o.data_dir) c.data_dir = *o.data_dir;
  c.split.dataset_seed = c.generator.seed;
  c.split.fold_seed = c.seed;
  c.validate();
  return c;
}

}  // namespace hipss
