// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "hipss/commands.hpp"
#include "hipss/config.hpp"
#include "hipss/io.hpp"
#include "oracles.hpp"

using namespace hipss;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void criterion(int id, const std::string& title, const std::function<void(Outcome&)>& body) {
  Outcome out;
  try {
    body(out);
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail << " [exception: " << e.what() << "]";
  }
  if (!out.pass) ++failures;
  std::printf("%s criterion %d: %s%s\n", out.pass ? "PASS" : "FAIL", id, title.c_str(), out.detail.str().c_str());
  std::fflush(stdout);
}

RunConfig shipped_config() { return load_config(std::string(HIPSS_CONFIG_DIR) + "/default.json"); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SlideBag random_bag(Rng& rng, std::size_t regions, std::size_t instances, std::size_t dim) {
  SlideBag bag{"bag", 0, {}};
  for (std::size_t m = 0; m < regions; ++m) {
    Region r{{static_cast<std::int64_t>(m), 0}, {}};
    for (std::size_t j = 0; j < instances; ++j) {
      r.instances.push_back({{static_cast<std::int64_t>(j), 0}, random_normal(rng, dim, 0.0, 1.0), std::nullopt});
    }
    bag.regions.push_back(std::move(r));
  }
  return bag;
}

double sum(const Vector& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

struct Sweep {
  double mean_auc = 0.0;
  double mean_dice = 0.0;
  double slowest = 0.0;
  std::size_t test_slides = 0;
};

Sweep sweep(const RunConfig& config, const Dataset& data, std::size_t k) {
  RunConfig c = config;
  c.split.k = k;
  Sweep s;
  constexpr std::uint64_t kSeeds = 5;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const auto start = Clock::now();
    const ExperimentResult r = run_experiment(c, data.slides, data.prompts, seed, seed);
    s.slowest = std::max(s.slowest, seconds_since(start));
    s.mean_auc += r.test.auc / kSeeds;
    s.mean_dice += r.test.dice.value_or(0.0) / kSeeds;
    s.test_slides = r.split.test.size();
  }
  return s;
}

}  // namespace

int main() {
  const RunConfig config = shipped_config();

  criterion(1, "gradient check in both refinement modes", [&](Outcome& o) {
    const auto start = Clock::now();
    for (GradientMode mode : {GradientMode::kThroughScore, GradientMode::kDetached}) {
      const GradcheckReport r = run_gradcheck(config, mode);
      o.detail << " " << to_string(mode) << "=" << r.max_rel_error;
      o.require(r.max_rel_error <= 1e-4, to_string(mode) + " error > 1e-4");
    }
    const double t = seconds_since(start);
    o.detail << " time=" << t << "s";
    o.require(t < 5.0, "runtime >= 5 s");
  });

  criterion(2, "re-parameterization merge is exact", [&](Outcome& o) {
    ModelConfig mc = config.model;
    mc.depth = mc.blocks;
    mc.sigma_init = 0.2;
    const Dataset data = generate(config.generator);
    const Model model = Model::create(mc, data.prompts, 3);
    const Model merged = model.merge();

    Rng rng(100);
    double encoder_diff = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Matrix tokens = random_normal(rng, 1 + rng.below(6), mc.dim, 1.0);
      const Vector a = encode(model.encoder, tokens, model.sites);
      const Vector b = encode_frozen(merged.encoder, tokens);
      encoder_diff = std::max(encoder_diff, oracle::max_abs_diff(a, b));
    }
    double prob_diff = 0.0;
    const auto pa = predict(model, data.slides);
    const auto pb = predict(merged, data.slides);
    for (std::size_t i = 0; i < pa.size(); ++i) {
      prob_diff = std::max(prob_diff, oracle::max_abs_diff(pa[i].probabilities, pb[i].probabilities));
    }
    o.detail << " encoder=" << encoder_diff << " probabilities=" << prob_diff << " slides=" << pa.size();
    o.require(encoder_diff <= 1e-12, "encoder difference > 1e-12");
    o.require(prob_diff <= 1e-10, "probability difference > 1e-10");
  });

  criterion(3, "identity adapters and zero guidance are neutral", [&](Outcome& o) {
    const ModelConfig& mc = config.model;
    const TextEncoderStack stack = TextEncoderStack::build(mc.dim, mc.blocks, mc.backbone_seed);
    const auto identity = make_sites(mc.blocks, mc.blocks, mc.dim, 1, 0.0);
    Rng rng(7);
    double ssf_diff = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Matrix tokens = random_normal(rng, std::size_t{5}, mc.dim, 1.0);
      ssf_diff = std::max(ssf_diff, oracle::max_abs_diff(encode(stack, tokens, identity), encode_frozen(stack, tokens)));
    }

    const Vector t = l2_normalize(random_normal(rng, mc.dim, 0.0, 1.0));
    Vector neg = t;
    for (double& v : neg) v = -v;
    const std::vector<Vector> antipodal{t, neg};
    const auto guidance = refinement_embedding(antipodal, GuidanceSpec{GuidanceKind::kMean, 1});
    o.require(!guidance.has_value(), "antipodal mean not flagged degenerate");

    const AttentionParams params = AttentionParams::init(mc.dim, mc.hidden, 5);
    double pool_diff = 0.0;
    for (int i = 0; i < 20; ++i) {
      const SlideBag bag = random_bag(rng, 1, 6, mc.dim);
      const RegionOutput got = region_encode(bag.regions[0], guidance, params, mc.refinement);
      std::vector<Vector> items;
      for (const auto& inst : bag.regions[0].instances) items.push_back(inst.embedding);
      const oracle::Pooled plain = oracle::attention_pool(items, params.region, std::nullopt, 10.0, 0.2);
      pool_diff = std::max({pool_diff, oracle::max_abs_diff(got.embedding, plain.embedding),
                            oracle::max_abs_diff(got.weights, plain.weights)});
    }
    o.detail << " identity_ssf=" << ssf_diff << " zero_guidance=" << pool_diff;
    o.require(ssf_diff <= 1e-12, "identity SSF differs from frozen stack");
    o.require(pool_diff <= 1e-12, "zero guidance differs from plain gated attention");
  });

  criterion(4, "refinement score branch table", [&](Outcome& o) {
    const RefinementConfig cfg{10.0, 0.2};
    const std::optional<Vector> text = Vector{1.0, 0.0, 0.0, 0.0};
    struct Row {
      Vector h;
      double cosine;
      double expected;
    };
    // Integer embeddings with integer norms give exactly representable cosines.
    const Row rows[] = {
        {{1, 1, 1, 1}, 0.5, 5.0},     {{1, 2, 4, 2}, 0.2, 0.2},  {{1, 3, 3, 9}, 0.1, 0.1},
        {{0, 1, 0, 0}, 0.0, 0.0},     {{-1, 2, 4, 2}, -0.2, 0.0}, {{3, 4, 0, 0}, 0.6, 6.0},
        {{-1, -1, -1, -1}, -0.5, 0.0}, {{1, 0, 0, 0}, 1.0, 10.0},
    };
    for (const Row& r : rows) {
      const double c = cosine(r.h, *text);
      const double s = refinement_score(r.h, text, cfg);
      ad::Tape tape;
      const auto sv = refinement_score(tape, tape.constant(r.h), tape.constant(*text), cfg);
      const double st = sv ? tape.scalar(*sv) : 0.0;
      o.detail << " (" << r.cosine << "->" << s << ")";
      o.require(c == r.cosine, "cosine not exact");
      o.require(s == r.expected && st == r.expected, "score mismatch at c=" + std::to_string(r.cosine));
    }
  });

  criterion(5, "softmax sums, permutation equivariance, depth formula", [&](Outcome& o) {
    const ModelConfig& mc = config.model;
    const AttentionParams params = AttentionParams::init(mc.dim, mc.hidden, 11);
    Rng rng(12);
    double sum_err = 0.0, perm_err = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t regions = 2 + rng.below(5), instances = 2 + rng.below(8);
      const SlideBag bag = random_bag(rng, regions, instances, mc.dim);
      const std::optional<Vector> text = l2_normalize(random_normal(rng, mc.dim, 0.0, 1.0));
      const SlideOutput out = wsi_encode(bag, text, params, mc.refinement);
      sum_err = std::max(sum_err, std::abs(sum(out.region_weights) - 1.0));
      for (const auto& r : out.regions) sum_err = std::max(sum_err, std::abs(sum(r.weights) - 1.0));

      std::vector<std::size_t> ro(regions), io(instances);
      std::iota(ro.begin(), ro.end(), 0);
      std::iota(io.begin(), io.end(), 0);
      rng.shuffle(ro);
      rng.shuffle(io);
      SlideBag shuffled = bag;
      for (std::size_t m = 0; m < regions; ++m)
        for (std::size_t j = 0; j < instances; ++j) shuffled.regions[m].instances[j] = bag.regions[ro[m]].instances[io[j]];
      const SlideOutput p = wsi_encode(shuffled, text, params, mc.refinement);
      perm_err = std::max(perm_err, oracle::max_abs_diff(p.embedding, out.embedding));
      for (std::size_t m = 0; m < regions; ++m) {
        perm_err = std::max(perm_err, std::abs(p.region_weights[m] - out.region_weights[ro[m]]));
        for (std::size_t j = 0; j < instances; ++j)
          perm_err = std::max(perm_err, std::abs(p.regions[m].weights[j] - out.regions[ro[m]].weights[io[j]]));
      }
    }
    const std::vector<Vector> texts{l2_normalize(random_normal(rng, mc.dim, 0.0, 1.0)),
                                    l2_normalize(random_normal(rng, mc.dim, 0.0, 1.0))};
    const Vector probs = class_probabilities(random_normal(rng, mc.dim, 0.0, 1.0), texts, mc.tau);
    sum_err = std::max(sum_err, std::abs(sum(probs) - 1.0));

    bool depth_ok = true;
    const std::size_t blocks = 12;
    for (std::size_t d = 1; d <= blocks; ++d) {
      std::vector<std::size_t> want;
      for (std::size_t b = blocks - d + 1; b <= blocks; ++b) want.push_back(b);
      depth_ok = depth_ok && attach_depth(blocks, d) == want;
      for (const SsfSite& s : make_sites(blocks, d, 4, 1, 0.02)) depth_ok = depth_ok && s.trainable == (s.block > blocks - d);
    }
    o.detail << " sum_err=" << sum_err << " perm_err=" << perm_err << " depth=" << (depth_ok ? "exact" : "wrong");
    o.require(sum_err <= 1e-12, "softmax group does not sum to 1");
    o.require(perm_err <= 1e-9, "permutation equivariance violated");
    o.require(depth_ok, "depth formula");
  });

  const Dataset data = generate(config.generator);

  criterion(6, "few-shot AUC at k=4 and k=1, refinement ablation", [&](Outcome& o) {
    const Sweep k4 = sweep(config, data, 4);
    const Sweep k1 = sweep(config, data, 1);
    RunConfig off = config;
    off.model.refinement.enabled = false;
    const Sweep k4_off = sweep(off, data, 4);
    const Sweep k1_off = sweep(off, data, 1);
    const double slowest = std::max({k4.slowest, k1.slowest, k4_off.slowest, k1_off.slowest});
    o.detail << " k4=" << k4.mean_auc << " k1=" << k1.mean_auc << " k4_no_refine=" << k4_off.mean_auc
             << " k1_no_refine=" << k1_off.mean_auc << " test_slides=" << k4.test_slides << " slowest_run=" << slowest
             << "s";
    o.require(k4.test_slides == 40, "test split is not 40 slides");
    o.require(k4.mean_auc >= 0.95, "k=4 mean AUC < 0.95");
    o.require(k1.mean_auc >= 0.80, "k=1 mean AUC < 0.80");
    o.require(k4.mean_auc >= k4_off.mean_auc, "refinement lowers k=4 mean AUC");
    o.require(k1.mean_auc >= k1_off.mean_auc, "refinement lowers k=1 mean AUC");
    o.require(slowest < 60.0, "a run took >= 60 s");
  });

  criterion(7, "localization dice after k=8 training", [&](Outcome& o) {
    const Sweep k8 = sweep(config, data, 8);
    o.detail << " dice=" << k8.mean_dice << " auc=" << k8.mean_auc;
    o.require(k8.mean_dice >= 0.70, "mean dice < 0.70");
  });

  const fs::path scratch = fs::temp_directory_path() / ("hipss_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(scratch);

  criterion(8, "parameter accounting", [&](Outcome& o) {
    RunConfig c = config;
    c.out_dir = (scratch / "params").string();
    const nlohmann::json p = cmd_params(c).output;
    const ModelConfig& mc = config.model;
    const std::size_t closed = 2 * mc.dim * 2 * mc.depth + 2 * (2 * mc.hidden * mc.dim + mc.hidden);

    const Model model = Model::create(mc, data.prompts, 0);
    std::size_t hand = model.attention.region.w.size() + model.attention.region.v1.size() +
                       model.attention.region.v2.size() + model.attention.slide.w.size() +
                       model.attention.slide.v1.size() + model.attention.slide.v2.size();
    for (const SsfSite& s : model.sites)
      if (s.trainable) hand += s.params.gamma.size() + s.params.beta.size();

    bool increasing = true;
    for (std::size_t i = 1; i < p["by_depth"].size(); ++i) {
      increasing = increasing && p["by_depth"][i]["trainable"] > p["by_depth"][i - 1]["trainable"];
    }
    o.detail << " params=" << p["trainable"] << " closed_form=" << closed << " hand_count=" << hand
             << " depths=" << p["by_depth"].size();
    o.require(p["trainable"].get<std::size_t>() == closed, "params != closed form");
    o.require(hand == closed, "hand count != closed form");
    o.require(closed == 8768, "default count != 8768");
    o.require(p["by_depth"].size() == mc.blocks && increasing, "count not strictly increasing in depth");
  });

  criterion(9, "generate, train and eval are deterministic", [&](Outcome& o) {
    RunConfig c = config;
    c.data_dir = (scratch / "data").string();
    c.out_dir = (scratch / "out").string();
    c.split.k = 4;
    std::string first;
    for (int pass = 0; pass < 2; ++pass) {
      fs::remove_all(scratch / "data");
      fs::remove_all(scratch / "out");
      cmd_generate(c);
      cmd_train(c);
      const fs::path metrics = cmd_eval(c, fs::path(c.out_dir) / "checkpoint.json", "test").written;
      const std::string bytes = slurp(metrics);
      if (pass == 0) first = bytes;
      else o.require(!first.empty() && bytes == first, "metrics JSON differs between runs");
    }
    o.detail << " bytes=" << first.size();
  });

  fs::remove_all(scratch);
  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
