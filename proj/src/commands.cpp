#include "hipss/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hipss/errors.hpp"
#include "hipss/gradcheck.hpp"
#include "hipss/reference.hpp"

namespace hipss {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

SplitSpec split_spec(const RunConfig& config, std::uint64_t fold_seed) {
  SplitSpec s = config.split;
  s.dataset_seed = config.generator.seed;
  s.fold_seed = fold_seed;
  return s;
}

PromptTokens random_prompt(Rng& rng, std::size_t class_id, std::size_t dim) {
  PromptTokens p;
  p.class_id = class_id;
  p.name = "class" + std::to_string(class_id);
  p.region_tokens = random_normal(rng, 3, dim, 1.0);
  p.slide_tokens = random_normal(rng, 2, dim, 1.0);
  return p;
}

Vector unit_orthogonal(Rng& rng, std::span<const double> t) {
  for (;;) {
    Vector u = random_normal(rng, t.size(), 0.0, 1.0);
    const double proj = dot(u, t);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] -= proj * t[i];
    if (!is_degenerate(u)) return l2_normalize(u);
  }
}

bool clear_of_boundaries(double c, double alpha, double margin) {
  return std::abs(c) >= margin && std::abs(c - alpha) >= margin;
}

Checkpoint load_checkpoint(const fs::path& path) { return checkpoint_from_json(read_json(path)); }

}  // namespace

ExperimentResult run_experiment(const RunConfig& config, std::span<const SlideBag> slides,
                                const std::vector<PromptTokens>& prompts, std::uint64_t fold_seed,
                                std::uint64_t init_seed) {
  ExperimentResult r;
  r.split = kshot_split(slides, prompts.size(), split_spec(config, fold_seed));
  const auto train = select(slides, r.split.train);
  const auto val = select(slides, r.split.val);
  const auto test = select(slides, r.split.test);
  TrainConfig tc = config.train;
  tc.k = r.split.k;
  r.fit = fit(Model::create(config.model, prompts, init_seed), train, val, tc);
  r.test = evaluate(r.fit.model, test, config.eval);
  return r;
}

GradcheckProblem make_gradcheck_problem(const RunConfig& config, GradientMode mode) {
  const GradcheckConfig& gc = config.gradcheck;
  ModelConfig mc = config.model;
  mc.dim = gc.dim;
  mc.hidden = gc.hidden;
  mc.blocks = gc.blocks;
  mc.depth = gc.depth;
  mc.sigma_init = 0.2;
  mc.refinement.mode = mode;
  mc.refinement.enabled = true;
  mc.validate();

  static constexpr double kTargets[] = {0.3, 0.1, -0.3, 0.26, 0.05, -0.4};
  const double alpha = mc.refinement.alpha;
  Rng rng(gc.seed);
  GradcheckProblem p;
  for (p.attempts = 1; p.attempts <= 1000; ++p.attempts) {
    std::vector<PromptTokens> prompts;
    for (std::size_t c = 0; c < 2; ++c) prompts.push_back(random_prompt(rng, c, mc.dim));
    Model model = Model::create(mc, prompts, rng.below(1u << 30));
    const auto texts = model.class_embeddings();
    const auto t = refinement_embedding(texts, mc.guidance);
    if (!t) continue;

    SlideBag bag;
    bag.slide_id = "gradcheck";
    bag.label = 1;
    std::size_t n = 0;
    for (std::size_t m = 0; m < gc.regions; ++m) {
      Region region;
      region.coord = {0, static_cast<std::int64_t>(m)};
      for (std::size_t j = 0; j < gc.instances; ++j, ++n) {
        const double c = kTargets[n % std::size(kTargets)];
        const Vector u = unit_orthogonal(rng, *t);
        const double scale = 0.5 + 1.5 * rng.uniform();
        Vector h(mc.dim);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = scale * (c * (*t)[i] + std::sqrt(1.0 - c * c) * u[i]);
        region.instances.push_back({{0, static_cast<std::int64_t>(j)}, std::move(h), std::nullopt});
      }
      bag.regions.push_back(std::move(region));
    }

    bool clear = true;
    for (const auto& region : bag.regions) {
      for (const auto& inst : region.instances) clear = clear && clear_of_boundaries(cosine(inst.embedding, *t), alpha, gc.margin);
      const RegionOutput r = region_encode(region, t, model.attention, mc.refinement);
      clear = clear && clear_of_boundaries(cosine(r.embedding, *t), alpha, gc.margin);
    }
    if (!clear) continue;
    // Label the less likely class so the loss is far from saturation.
    const Vector probs = predict(model, std::span<const SlideBag>(&bag, 1)).front().probabilities;
    bag.label = probs[0] < probs[1] ? 0 : 1;
    p.model = std::move(model);
    p.bag = std::move(bag);
    return p;
  }
  throw NumericError("gradcheck: no boundary-free toy problem found");
}

GradcheckReport run_gradcheck(const RunConfig& config, GradientMode mode) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckProblem p = make_gradcheck_problem(config, mode);
  const Vector x0 = p.model.trainable();

  // Detached scores are constants of the objective: freeze them at x0.
  ScoreLog frozen;
  loss(p.model, p.bag, &frozen);
  frozen.mode = ScoreLog::Mode::kReplay;
  const bool detached = mode == GradientMode::kDetached;

  Model work = p.model;
  const ExtendedScalarFn reference = [&](std::span<const double> x) {
    work.set_trainable(x);
    return reference_loss(work, p.bag, detached ? &frozen : nullptr);
  };
  const ScalarFn plain = [&](std::span<const double> x) {
    work.set_trainable(x);
    ScoreLog replay = frozen;
    return loss(work, p.bag, detached ? &replay : nullptr);
  };
  const GradientFn g = [&](std::span<const double> x) {
    work.set_trainable(x);
    return loss_and_grad(work, std::span<const SlideBag>(&p.bag, 1)).grad;
  };
  const double step = config.gradcheck.step;
  const GradCheckResult r = grad_check(reference, g, x0, step);
  GradcheckReport out;
  out.max_rel_error = r.max_rel_error;
  out.worst_index = r.worst_index;
  out.max_rel_error_double = grad_check(plain, g, x0, step).max_rel_error;
  out.parameters = x0.size();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::vector<SlideBag> split_slides(const LoadedDataset& data, const RunConfig& config, const std::string& split) {
  if (split == "all") return data.slides;
  const SplitPlan plan = kshot_split(data.slides, data.num_classes, split_spec(config, config.seed));
  if (split == "train") return select(data.slides, plan.train);
  if (split == "val") return select(data.slides, plan.val);
  if (split == "test") return select(data.slides, plan.test);
  throw ConfigError("split must be train|val|test|all, got '" + split + "'");
}

CommandResult cmd_generate(const RunConfig& config) {
  const Dataset ds = generate(config.generator);
  std::vector<SplitPlan> plans;
  for (std::size_t f = 0; f < config.sweep.folds; ++f) {
    plans.push_back(kshot_split(ds.slides, ds.prompts.size(), split_spec(config, config.seed + f)));
  }
  const fs::path dir = config.data_dir;
  save_dataset(dir, ds, config, plans);

  CommandResult r;
  r.written = dir / "manifest.json";
  r.output = read_json(r.written);
  std::size_t instances = 0;
  for (const auto& s : ds.slides) instances += s.num_instances();
  r.summary = "generated " + std::to_string(ds.slides.size()) + " slides (" + std::to_string(instances) +
              " instances, " + std::to_string(ds.prompts.size()) + " classes) in " + dir.string();
  return r;
}

CommandResult cmd_train(const RunConfig& config) {
  const LoadedDataset data = load_dataset(config.data_dir);
  const SplitPlan plan = kshot_split(data.slides, data.num_classes, split_spec(config, config.seed));
  const auto train = select(data.slides, plan.train);
  const auto val = select(data.slides, plan.val);
  TrainConfig tc = config.train;
  tc.k = plan.k;
  const FitResult fitted = fit(Model::create(config.model, data.prompts, config.seed), train, val, tc);

  const fs::path out = config.out_dir;
  Checkpoint ckpt{config, fitted.model, fitted.history, fitted.best_epoch, fitted.best_val_auc};
  write_json(out / "checkpoint.json", checkpoint_to_json(ckpt));
  {
    std::ofstream log(out / "metrics.jsonl");
    for (const json& line : history_to_json(fitted.history)) log << line.dump() << '\n';
    if (!log) throw DataError("cannot write '" + (out / "metrics.jsonl").string() + "'");
  }

  CommandResult r;
  r.written = out / "train.json";
  r.output = {{"config", to_json(config)},
              {"split", split_to_json(plan)},
              {"trainable_count", fitted.model.trainable_count()},
              {"epochs_run", fitted.history.size()},
              {"best_epoch", fitted.best_epoch},
              {"best_val_auc", fitted.best_val_auc},
              {"best_val_loss", fitted.best_val_loss},
              {"history", history_to_json(fitted.history)},
              {"checkpoint", "checkpoint.json"}};
  write_json(r.written, r.output);
  r.summary = "trained k=" + std::to_string(plan.k) + " for " + std::to_string(fitted.history.size()) +
              " epochs; best epoch " + std::to_string(fitted.best_epoch) + " val AUC " + fmt(fitted.best_val_auc) +
              "; checkpoint " + (out / "checkpoint.json").string();
  return r;
}

CommandResult cmd_eval(const RunConfig& config, const std::optional<fs::path>& checkpoint, const std::string& split) {
  const LoadedDataset data = load_dataset(config.data_dir);
  const fs::path out = config.out_dir;
  CommandResult r;

  if (checkpoint) {
    const Checkpoint ckpt = load_checkpoint(*checkpoint);
    const auto bags = split_slides(data, ckpt.config, split);
    const EvalMetrics m = evaluate(ckpt.model, bags, config.eval);
    r.written = out / ("metrics_" + split + ".json");
    r.output = {{"config", to_json(ckpt.config)}, {"split", split}, {"merged", ckpt.model.merged()},
                {"metrics", metrics_to_json(m)}};
    write_json(r.written, r.output);
    r.summary = split + ": AUC " + fmt(m.auc) + (m.dice ? ", dice " + fmt(*m.dice) : std::string()) + " over " +
                std::to_string(bags.size()) + " slides";
    return r;
  }

  json runs = json::array();
  std::vector<double> aucs, dices;
  for (std::size_t f = 0; f < config.sweep.folds; ++f) {
    for (std::size_t s = 0; s < config.sweep.seeds; ++s) {
      const std::uint64_t fold_seed = config.seed + f;
      const std::uint64_t init_seed = fold_seed + 7919 * s;
      const ExperimentResult e = run_experiment(config, data.slides, data.prompts, fold_seed, init_seed);
      aucs.push_back(e.test.auc);
      if (e.test.dice) dices.push_back(*e.test.dice);
      runs.push_back({{"fold", f},
                      {"fold_seed", fold_seed},
                      {"init_seed", init_seed},
                      {"best_epoch", e.fit.best_epoch},
                      {"auc", e.test.auc},
                      {"dice", optional_json(e.test.dice)}});
    }
  }
  const MeanStd auc = mean_std(aucs);
  json summary = {{"auc", {{"mean", auc.mean}, {"std", auc.std}}}};
  std::string dice_text;
  if (!dices.empty()) {
    const MeanStd d = mean_std(dices);
    summary["dice"] = {{"mean", d.mean}, {"std", d.std}};
    dice_text = ", dice " + fmt(d.mean) + " +/- " + fmt(d.std);
  }
  r.written = out / "sweep.json";
  r.output = {{"config", to_json(config)}, {"split", "test"}, {"runs", runs}, {"summary", summary}};
  write_json(r.written, r.output);
  r.summary = std::to_string(runs.size()) + " runs (k=" + std::to_string(config.split.k) + "): AUC " + fmt(auc.mean) +
              " +/- " + fmt(auc.std) + dice_text;
  return r;
}

CommandResult cmd_localize(const RunConfig& config, const fs::path& checkpoint, const std::string& split) {
  const LoadedDataset data = load_dataset(config.data_dir);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto bags = split_slides(data, ckpt.config, split);
  const EvalMetrics m = evaluate(ckpt.model, bags, config.eval);
  const auto predictions = predict(ckpt.model, bags);

  const fs::path out = config.out_dir;
  json exports = json::array();
  for (std::size_t i = 0; i < bags.size(); ++i) {
    const std::string rel = "attention/" + bags[i].slide_id + ".json";
    write_json(out / rel, export_attention(bags[i], predictions[i].pooled, config.eval.saliency));
    exports.push_back(rel);
  }
  CommandResult r;
  r.written = out / ("localize_" + split + ".json");
  r.output = {{"config", to_json(ckpt.config)},
              {"split", split},
              {"dice_threshold", config.eval.dice_threshold},
              {"saliency", to_string(config.eval.saliency)},
              {"metrics", metrics_to_json(m)},
              {"attention", exports}};
  write_json(r.written, r.output);
  r.summary = split + ": dice " + (m.dice ? fmt(*m.dice) : std::string("n/a")) + " over " +
              std::to_string(m.dice_slides) + " slides with positive masks; " + std::to_string(exports.size()) +
              " attention exports in " + (out / "attention").string();
  return r;
}

CommandResult cmd_gradcheck(const RunConfig& config) {
  CommandResult r;
  r.output = {{"config", to_json(config)}, {"step", config.gradcheck.step}};
  std::string text;
  double worst = 0.0;
  for (GradientMode mode : {GradientMode::kThroughScore, GradientMode::kDetached}) {
    const GradcheckReport g = run_gradcheck(config, mode);
    worst = std::max(worst, g.max_rel_error);
    r.output["modes"][to_string(mode)] = {{"max_rel_error", g.max_rel_error},
                                          {"worst_index", g.worst_index},
                                          {"max_rel_error_double_fd", g.max_rel_error_double},
                                          {"parameters", g.parameters}};
    std::ostringstream e;
    e.precision(3);
    e << to_string(mode) << " " << g.max_rel_error;
    text += (text.empty() ? "" : ", ") + e.str();
  }
  r.output["max_rel_error"] = worst;
  r.written = fs::path(config.out_dir) / "gradcheck.json";
  write_json(r.written, r.output);
  r.summary = "max relative error: " + text;
  return r;
}

CommandResult cmd_merge(const RunConfig& config, const fs::path& checkpoint, const std::optional<fs::path>& output) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.model.merged()) throw DataError("checkpoint '" + checkpoint.string() + "' is already merged");
  const std::size_t sites = ckpt.model.sites.size();
  ckpt.model = ckpt.model.merge();
  CommandResult r;
  r.written = output ? *output : fs::path(config.out_dir) / "checkpoint_merged.json";
  r.output = checkpoint_to_json(ckpt);
  write_json(r.written, r.output);
  r.summary = "folded " + std::to_string(sites) + " SSF sites into the backbone; wrote " + r.written.string();
  return r;
}

CommandResult cmd_params(const RunConfig& config) {
  const ModelConfig& mc = config.model;
  Rng rng(0);
  std::vector<PromptTokens> prompts;
  for (std::size_t c = 0; c < 2; ++c) prompts.push_back(random_prompt(rng, c, mc.dim));
  const Model model = Model::create(mc, prompts, 0);

  ParamCountConfig pc = mc.param_count();
  const std::size_t ssf = 2 * mc.dim * kSitesPerBlock * mc.depth;
  json by_depth = json::array();
  for (std::size_t d = 1; d <= mc.blocks; ++d) {
    pc.depth = d;
    by_depth.push_back({{"depth", d}, {"trainable", count_trainable(pc)}});
  }
  CommandResult r;
  r.output = {{"config", to_json(config)},
              {"trainable", model.trainable_count()},
              {"closed_form", count_trainable(mc.param_count())},
              {"ssf", ssf},
              {"attention", model.attention.count()},
              {"by_depth", by_depth}};
  r.written = fs::path(config.out_dir) / "params.json";
  write_json(r.written, r.output);
  r.summary = "trainable parameters: " + std::to_string(model.trainable_count()) + " (SSF " + std::to_string(ssf) +
              " at depth " + std::to_string(mc.depth) + ", attention " + std::to_string(model.attention.count()) + ")";
  return r;
}

}  // namespace hipss
