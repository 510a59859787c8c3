#include "hipss/dataeval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <unordered_map>

#include "hipss/errors.hpp"

namespace hipss {

void GeneratorSpec::validate() const {
  auto fraction_ok = [](double f) { return f > 0.0 && f <= 1.0; };
  if (num_classes < 2) throw ConfigError("generator.num_classes must be >= 2");
  if (dim < 2) throw ConfigError("generator.dim must be >= 2");
  if (normal_class && *normal_class >= num_classes) throw ConfigError("generator.normal_class is not a valid class");
  if (!(noise > 0.0)) throw ConfigError("generator.noise must be > 0");
  if (slides_per_class < 1) throw ConfigError("generator.slides_per_class must be >= 1");
  if (regions_min < 1 || regions_min > regions_max) throw ConfigError("generator.regions_min/regions_max invalid");
  if (instances_min < 1 || instances_min > instances_max) {
    throw ConfigError("generator.instances_min/instances_max invalid");
  }
  if (!fraction_ok(tumor_region_fraction)) throw ConfigError("generator.tumor_region_fraction must lie in (0, 1]");
  if (!fraction_ok(tumor_instance_fraction)) throw ConfigError("generator.tumor_instance_fraction must lie in (0, 1]");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("generator.rho must lie in [0, 1]");
  if (region_tokens < 1 || slide_tokens < 1) throw ConfigError("generator token counts must be >= 1");
  if (!(max_prototype_cosine > -1.0 && max_prototype_cosine <= 0.5)) {
    throw ConfigError("generator.max_prototype_cosine must lie in (-1, 0.5]");
  }
}

namespace {

Vector random_unit(Rng& rng, std::size_t dim) {
  Vector v = random_normal(rng, dim, 0.0, 1.0);
  return l2_normalize(v);
}

std::size_t uniform_between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

std::size_t planted_count(double fraction, std::size_t n) {
  const auto c = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(c, 1, n);
}

/// Chosen subset of {0..n-1} with the given size, as a 0/1 indicator.
std::vector<int> choose(Rng& rng, std::size_t n, std::size_t count) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::vector<int> flag(n, 0);
  for (std::size_t i = 0; i < count; ++i) flag[idx[i]] = 1;
  return flag;
}

GridCoord grid_position(std::size_t index, std::size_t count) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count))));
  return {static_cast<std::int64_t>(index / cols), static_cast<std::int64_t>(index % cols)};
}

Matrix prompt_tokens(Rng& rng, const Vector& prototype, std::size_t count, double rho) {
  const std::size_t dim = prototype.size();
  Matrix tokens(count, dim);
  for (std::size_t t = 0; t < count; ++t) {
    const Vector noise = random_unit(rng, dim);
    Vector mix(dim);
    for (std::size_t i = 0; i < dim; ++i) mix[i] = rho * prototype[i] + (1.0 - rho) * noise[i];
    const Vector unit = l2_normalize(mix);
    std::copy(unit.begin(), unit.end(), tokens.row(t).begin());
  }
  return tokens;
}

std::string slide_name(std::size_t cls, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "c%zu-%04zu", cls, index);
  return buf;
}

}  // namespace

Dataset generate(const GeneratorSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset ds;
  ds.spec = spec;

  // Rejection-sample prototypes until every pair is separated.
  std::vector<Vector> accepted;
  const std::size_t needed = 1 + spec.num_classes - (spec.normal_class ? 1 : 0);
  for (std::size_t attempt = 0; accepted.size() < needed; ++attempt) {
    if (attempt > 100000) throw ConfigError("generator: could not separate prototypes; lower num_classes");
    Vector cand = random_unit(rng, spec.dim);
    const bool ok = std::all_of(accepted.begin(), accepted.end(), [&](const Vector& p) {
      return dot(p, cand) <= spec.max_prototype_cosine;
    });
    if (ok) accepted.push_back(std::move(cand));
  }
  ds.background = accepted[0];
  for (std::size_t c = 0, next = 1; c < spec.num_classes; ++c) {
    ds.prototypes.push_back(spec.normal_class == c ? ds.background : accepted[next++]);
  }

  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const bool tumor_class = spec.normal_class != c;
    for (std::size_t s = 0; s < spec.slides_per_class; ++s) {
      SlideBag bag;
      bag.slide_id = slide_name(c, s);
      bag.label = c;
      const std::size_t num_regions = uniform_between(rng, spec.regions_min, spec.regions_max);
      const auto tumor_regions = tumor_class ? choose(rng, num_regions, planted_count(spec.tumor_region_fraction, num_regions))
                                             : std::vector<int>(num_regions, 0);
      for (std::size_t m = 0; m < num_regions; ++m) {
        Region region;
        region.coord = grid_position(m, num_regions);
        const std::size_t n = uniform_between(rng, spec.instances_min, spec.instances_max);
        const auto mask = tumor_regions[m] ? choose(rng, n, planted_count(spec.tumor_instance_fraction, n))
                                           : std::vector<int>(n, 0);
        for (std::size_t j = 0; j < n; ++j) {
          const Vector& center = mask[j] ? ds.prototypes[c] : ds.background;
          Instance inst;
          inst.coord = grid_position(j, n);
          inst.embedding.resize(spec.dim);
          for (std::size_t i = 0; i < spec.dim; ++i) inst.embedding[i] = center[i] + rng.normal(0.0, spec.noise);
          inst.mask = mask[j];
          region.instances.push_back(std::move(inst));
        }
        bag.regions.push_back(std::move(region));
      }
      ds.slides.push_back(std::move(bag));
    }
  }
  std::sort(ds.slides.begin(), ds.slides.end(),
            [](const SlideBag& a, const SlideBag& b) { return a.slide_id < b.slide_id; });

  const char* default_names[] = {"normal", "tumor"};
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    PromptTokens p;
    p.class_id = c;
    if (spec.num_classes == 2 && spec.normal_class == 0) {
      p.name = default_names[c];
    } else {
      p.name = "class_" + std::to_string(c);
    }
    p.region_tokens = prompt_tokens(rng, ds.prototypes[c], spec.region_tokens, spec.rho);
    p.slide_tokens = prompt_tokens(rng, ds.prototypes[c], spec.slide_tokens, spec.rho);
    ds.prompts.push_back(std::move(p));
  }
  return ds;
}

SplitPlan kshot_split(std::span<const SlideBag> slides, std::size_t num_classes, const SplitSpec& spec) {
  std::vector<std::vector<std::string>> by_class(num_classes);
  for (const auto& s : slides) {
    if (s.label >= num_classes) throw DataError("kshot_split: slide '" + s.slide_id + "' has an invalid label");
    by_class[s.label].push_back(s.slide_id);
  }
  SplitPlan plan;
  plan.k = spec.k;
  plan.fold_seed = spec.fold_seed;
  const std::size_t need = spec.k + spec.val_per_class + spec.test_per_class;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto ids = by_class[c];
    if (ids.size() < need) {
      throw DataError("kshot_split: class " + std::to_string(c) + " has " + std::to_string(ids.size()) +
                      " slides, needs " + std::to_string(need));
    }
    std::sort(ids.begin(), ids.end());
    Rng test_rng(spec.dataset_seed * 7919ULL + c);
    test_rng.shuffle(ids);
    plan.test.insert(plan.test.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(spec.test_per_class));
    std::vector<std::string> pool(ids.begin() + static_cast<std::ptrdiff_t>(spec.test_per_class), ids.end());
    std::sort(pool.begin(), pool.end());
    Rng fold_rng(spec.fold_seed * 104729ULL + 31ULL * c + 1);
    fold_rng.shuffle(pool);
    plan.train.insert(plan.train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.k));
    plan.val.insert(plan.val.end(), pool.begin() + static_cast<std::ptrdiff_t>(spec.k),
                    pool.begin() + static_cast<std::ptrdiff_t>(spec.k + spec.val_per_class));
  }
  for (auto* list : {&plan.train, &plan.val, &plan.test}) std::sort(list->begin(), list->end());
  return plan;
}

std::vector<SlideBag> select(std::span<const SlideBag> slides, std::span<const std::string> ids) {
  std::unordered_map<std::string, const SlideBag*> index;
  for (const auto& s : slides) index[s.slide_id] = &s;
  std::vector<SlideBag> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("unknown slide id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

EvalMetrics evaluate(const Model& model, std::span<const SlideBag> bags, const EvalConfig& config) {
  if (bags.empty()) throw DataError("evaluate: no slides");
  const auto preds = predict(model, bags);
  EvalMetrics out;
  std::vector<Vector> probs;
  std::vector<std::size_t> labels;
  double dice_total = 0.0;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    SlideResult r{bags[i].slide_id, bags[i].label, preds[i].probabilities, std::nullopt};
    if (bags[i].has_mask()) {
      const auto truth = truth_mask(bags[i]);
      if (std::any_of(truth.begin(), truth.end(), [](int v) { return v != 0; })) {
        const auto predicted = predicted_mask(instance_saliency(preds[i].pooled, config.saliency), config.dice_threshold);
        r.dice = dice(predicted, truth);
        dice_total += *r.dice;
        ++out.dice_slides;
      }
    }
    probs.push_back(preds[i].probabilities);
    labels.push_back(bags[i].label);
    out.slides.push_back(std::move(r));
  }
  out.auc = auc_multiclass(probs, labels, model.num_classes());
  if (out.dice_slides > 0) out.dice = dice_total / static_cast<double>(out.dice_slides);
  std::sort(out.slides.begin(), out.slides.end(),
            [](const SlideResult& a, const SlideResult& b) { return a.slide_id < b.slide_id; });
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double denom = values.size() > 1 ? static_cast<double>(values.size() - 1) : 1.0;
  return {mean, std::sqrt(var / denom)};
}

}  // namespace hipss
