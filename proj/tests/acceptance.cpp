// Acceptance gate. Runs the ten release criteria end to end and prints one
// PASS/FAIL line per criterion; exits nonzero if any fail. Criterion 8 needs
// URNET_REFERENCE_DIR (the committed reference benchmark) and criterion 9
// needs URNET_CLI; ctest wires both.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "urnet/datagen.hpp"
#include "urnet/model.hpp"
#include "urnet/numerics.hpp"
#include "urnet/pipeline.hpp"
#include "urnet/reweight.hpp"
#include "urnet/rng.hpp"

using namespace urnet;

namespace {

std::string g_detail;

void fail(std::string detail) {
  if (g_detail.empty()) g_detail = std::move(detail);
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr ? std::string(v) : fallback;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::string& path) {
  auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

Matrix random_batch(Rng& rng, std::size_t n, std::size_t d) {
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.uniform(-1.5, 1.5);
  }
  return x;
}

ClassifierConfig tiny_config() {
  ClassifierConfig config;
  config.input_dim = 5;
  config.hidden = {8, 6};
  config.num_classes = 4;
  config.bag_hidden = 5;
  return config;
}

// ---------------------------------------------------------------- criterion 1

bool c1_class_weights() {
  const std::uint32_t sizes[] = {1, 3};
  auto full = class_weights(sizes, 1.0);
  if (!near(full.weights[0], 0.75, 1e-12) || !near(full.weights[1], 0.25, 1e-12)) {
    fail("alpha=1 expected [0.75,0.25]");
    return false;
  }
  auto half = class_weights(sizes, 0.5);
  if (!near(half.weights[0], 0.875, 1e-12) || !near(half.weights[1], 0.625, 1e-12)) {
    fail("alpha=0.5 expected [0.875,0.625]");
    return false;
  }
  for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    for (std::uint32_t c : {2u, 3u, 7u, 16u}) {
      std::vector<std::uint32_t> equal(c, 9);
      auto w = class_weights(equal, alpha);
      for (double v : w.weights) {
        if (!near(v, w.weights[0], 1e-12)) {
          fail("equal sizes not uniform at alpha=" + std::to_string(alpha));
          return false;
        }
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------- criterion 2

bool c2_group_weights() {
  const std::uint32_t sizes[] = {10, 20, 30, 20, 20};
  auto w = group_weights_from_sizes(sizes);
  const double expected[] = {0.1, 0.2, 0.3, 0.2, 0.2};
  for (std::size_t g = 0; g < 5; ++g) {
    if (!near(w[g], expected[g], 1e-12)) {
      fail("hand case group " + std::to_string(g));
      return false;
    }
  }
  Rng rng(77);
  for (int it = 0; it < 1000; ++it) {
    std::uint32_t fuzz[5];
    for (auto& s : fuzz) {
      s = 1 + static_cast<std::uint32_t>(rng.index(1000000));
    }
    auto fw = group_weights_from_sizes(fuzz);
    double sum = 0.0;
    for (double v : fw) sum += v;
    if (!near(sum, 1.0, 1e-9)) {
      fail("fuzz case " + std::to_string(it) + " sum " + std::to_string(sum));
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- criterion 3

// one gradient check of the composite loss under the given weight/target setup
double loss_grad_err(Rng& rng, std::size_t n, bool smoothed, bool bags,
                     const std::function<double(Rng&, std::uint32_t)>& weight_of) {
  ClassifierConfig config = tiny_config();
  Classifier model = init_classifier(config, rng);
  Matrix x = random_batch(rng, n, config.input_dim);
  std::vector<Target> targets(n);
  std::vector<double> weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    targets[i].label = static_cast<std::uint32_t>(rng.index(config.num_classes));
    targets[i].predicted =
        static_cast<std::uint32_t>(rng.index(config.num_classes));
    targets[i].beta = smoothed ? 0.8 : 1.0;
    weights[i] = weight_of(rng, targets[i].label);
  }
  BagBatch bag_batch;
  const BagBatch* bag_ptr = nullptr;
  if (bags) {
    bag_batch.features = random_batch(rng, 2 * config.bag_size, config.input_dim);
    bag_batch.labels = {static_cast<std::uint32_t>(rng.index(config.num_classes)),
                        static_cast<std::uint32_t>(rng.index(config.num_classes))};
    bag_ptr = &bag_batch;
  }
  const double lambda = bags ? 1.0 : 0.0;

  auto params = flatten(model);
  auto loss_fn = [&](std::span<const double> p) {
    Classifier m = model;
    unflatten(m, p);
    Gradients g(m);
    return total_loss(m, x, targets, weights, bag_ptr, lambda, g).total;
  };
  auto grad_fn = [&](std::span<const double> p) {
    Classifier m = model;
    unflatten(m, p);
    Gradients g(m);
    total_loss(m, x, targets, weights, bag_ptr, lambda, g);
    return flatten(g);
  };
  Rng check_rng = rng.fork(999);
  return grad_check(loss_fn, grad_fn, params, check_rng);
}

bool c3_gradient_suite() {
  auto unit = [](Rng&, std::uint32_t) { return 1.0; };
  auto by_class = [](Rng& rng, std::uint32_t label) {
    std::uint32_t sizes[4];
    for (auto& s : sizes) s = 1 + static_cast<std::uint32_t>(rng.index(50));
    return class_weights(sizes, 0.5).weights[label];
  };
  auto by_cluster = [&](Rng& rng, std::uint32_t label) {
    std::uint32_t sizes[5];
    for (auto& s : sizes) s = 1 + static_cast<std::uint32_t>(rng.index(40));
    auto gw = group_weights_from_sizes(sizes);
    return by_class(rng, label) * gw[rng.index(5)];
  };
  auto combined = [&](Rng& rng, std::uint32_t label) {
    const std::uint64_t ids[] = {1, 2, 3, 4, 5};
    double wc[5], wg[5], wi[5];
    for (std::size_t i = 0; i < 5; ++i) {
      wc[i] = 0.2 + rng.uniform();
      wg[i] = 0.05 + 0.5 * rng.uniform();
      wi[i] = rng.uniform();
    }
    return combine(ids, wc, wg, wi).combined[label % 5];
  };

  struct Case {
    const char* name;
    std::size_t n;
    bool smoothed;
    bool bags;
    std::function<double(Rng&, std::uint32_t)> weight;
  };
  const Case cases[] = {
      {"plain", 1, false, false, unit},
      {"class-weighted", 1, false, false, by_class},
      {"cluster-weighted", 1, false, false, by_cluster},
      {"combined-weights", 5, false, false, combined},
      {"smoothed-targets", 1, true, false, combined},
      {"bag-total", 3, true, true, combined},
  };
  for (const Case& c : cases) {
    for (std::uint64_t inst = 0; inst < 20; ++inst) {
      Rng rng(3000 + inst * 31);
      const double err = loss_grad_err(rng, c.n, c.smoothed, c.bags, c.weight);
      if (!(err < 1e-5)) {
        fail(std::string(c.name) + " instance " + std::to_string(inst) +
             " rel err " + std::to_string(err));
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------- criterion 4

bool c4_reduction_contract() {
  for (std::uint64_t seed = 401; seed <= 405; ++seed) {
    Rng rng(seed);
    ClassifierConfig config = tiny_config();
    Classifier model = init_classifier(config, rng);
    const std::size_t n = 8;
    Matrix x = random_batch(rng, n, config.input_dim);
    std::vector<Target> targets(n);
    for (auto& t : targets) {
      t.label = static_cast<std::uint32_t>(rng.index(config.num_classes));
      t.predicted = static_cast<std::uint32_t>(rng.index(config.num_classes));
      t.beta = 1.0;  // smoothing disabled
    }
    std::vector<double> ones(n, 1.0);
    BagBatch bags;
    bags.features = random_batch(rng, 2 * config.bag_size, config.input_dim);
    bags.labels = {0, 1};

    const double baseline_loss =
        weighted_ce(forward(model, x).logits, targets, ones).loss;
    Gradients g_off(model), g_null(model);
    auto off = total_loss(model, x, targets, ones, &bags, 0.0, g_off);
    auto null_bags = total_loss(model, x, targets, ones, nullptr, 0.0, g_null);
    if (off.total != baseline_loss || null_bags.total != baseline_loss) {
      fail("composite loss differs from plain CE at seed " + std::to_string(seed));
      return false;
    }
    if (off.bag_loss != 0.0 || off.instance_loss != off.total) {
      fail("disabled bag branch left residue");
      return false;
    }
    if (flatten(g_off) != flatten(g_null)) {
      fail("bag batch with lambda 0 changed gradients");
      return false;
    }
  }

  // pipeline level: an empty strategy set must hand the loss unit weights and
  // one-hot targets exactly
  GenConfig gen;
  gen.num_classes = 4;
  gen.feature_dim = 6;
  gen.size_min = 12;
  gen.size_max = 24;
  gen.seed = 42;
  Dataset ds = generate(gen);
  Rng split_rng = Rng(gen.seed).fork(rng_stream::kSplit);
  split(ds, 0.25, split_rng);
  Rng model_rng(9);
  ClassifierConfig mconfig;
  mconfig.input_dim = 6;
  mconfig.hidden = {8};
  mconfig.num_classes = 4;
  Classifier baseline = init_classifier(mconfig, model_rng);
  ArtifactStore store(baseline, ds);
  StageConfig stage;  // all strategies off
  auto inputs = stage_inputs(ds, stage, store);
  for (std::size_t i = 0; i < inputs.ids.size(); ++i) {
    if (inputs.w_class[i] != 1.0 || inputs.w_cluster[i] != 1.0 ||
        inputs.w_confidence[i] != 1.0 || inputs.ledger.combined[i] != 1.0 ||
        inputs.targets[i].beta != 1.0) {
      fail("disabled strategies left non-unit inputs");
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- criterion 5

bool c5_smoothing_identity() {
  for (std::uint64_t seed = 501; seed <= 520; ++seed) {
    Rng rng(seed);
    const std::size_t n = 6, c = 5;
    Matrix logits = random_batch(rng, n, c);
    std::vector<double> w(n);
    for (double& v : w) v = rng.uniform(0.1, 2.0);
    std::vector<Target> smoothed(n), plain(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::uint32_t>(rng.index(c));
      smoothed[i] = Target{y, y, 0.8};  // supposed label equals observed
      plain[i] = Target{y, y, 1.0};
    }
    auto a = weighted_ce(logits, smoothed, w);
    auto b = weighted_ce(logits, plain, w);
    if (a.loss != b.loss) {
      fail("loss changed at seed " + std::to_string(seed));
      return false;
    }
    if (!(a.dlogits == b.dlogits)) {
      fail("gradient changed at seed " + std::to_string(seed));
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- criterion 6

bool c6_kmeans() {
  Rng rng(606);
  for (int it = 0; it < 200; ++it) {
    const std::size_t k = 1 + rng.index(5);
    const std::size_t n = k + rng.index(50);
    const std::size_t d = 1 + rng.index(5);
    Matrix points(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) points(i, j) = rng.uniform(-2.0, 2.0);
    }
    Rng seed_rng = rng.fork(static_cast<std::uint64_t>(it));
    auto result = kmeans(points, static_cast<std::uint32_t>(k), seed_rng);
    for (std::size_t t = 1; t < result.objective_history.size(); ++t) {
      if (!(result.objective_history[t] <= result.objective_history[t - 1])) {
        fail("objective rose at fuzz case " + std::to_string(it));
        return false;
      }
    }
  }

  const double sigma = 0.05;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng blob_rng(9000 + seed);
    const std::size_t d = 3;
    std::vector<double> c1(d), dir(d);
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      c1[j] = blob_rng.uniform(-1.0, 1.0);
      dir[j] = blob_rng.normal();
      norm += dir[j] * dir[j];
    }
    norm = std::sqrt(norm);
    std::vector<double> c2(d);
    for (std::size_t j = 0; j < d; ++j) {
      c2[j] = c1[j] + dir[j] / norm * 12.0 * sigma;  // centers 12 sigma apart
    }
    Matrix points(60, d);
    for (int i = 0; i < 30; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        points(i, j) = c1[j] + sigma * blob_rng.normal();
      }
    }
    for (int i = 30; i < 60; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        points(i, j) = c2[j] + sigma * blob_rng.normal();
      }
    }
    Rng fit_rng(seed);
    auto result = kmeans(points, 2, fit_rng);
    for (std::size_t i = 1; i < 30; ++i) {
      if (result.assignments[i] != result.assignments[0]) {
        fail("blob 1 split at seed " + std::to_string(seed));
        return false;
      }
    }
    for (std::size_t i = 31; i < 60; ++i) {
      if (result.assignments[i] != result.assignments[30]) {
        fail("blob 2 split at seed " + std::to_string(seed));
        return false;
      }
    }
    if (result.assignments[0] == result.assignments[30]) {
      fail("blobs merged at seed " + std::to_string(seed));
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- criterion 7

bool c7_confidence() {
  GenConfig gen;
  gen.num_classes = 10;
  gen.feature_dim = 16;
  gen.size_min = 60;
  gen.size_max = 60;
  gen.representative_fraction = 0.6;
  gen.sigma_near = 0.25;
  gen.sigma_far = 1.0;
  gen.prototype_scale = 1.8;
  gen.seed = 70;
  Dataset ds = generate(gen);
  Rng split_rng = Rng(gen.seed).fork(rng_stream::kSplit);
  split(ds, 0.25, split_rng);

  ClassifierConfig mconfig;
  mconfig.input_dim = gen.feature_dim;
  mconfig.hidden = {24};
  mconfig.num_classes = gen.num_classes;
  OptConfig opt;
  opt.epochs = 12;
  opt.batch_size = 32;
  opt.lr = 0.1;
  opt.lr_decay_every = 0;

  const auto index = ds.id_index();
  double fraction_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Classifier baseline = train_baseline(ds, mconfig, opt, seed);
    ConfidenceConfig config;  // the fixed budget: 40 epochs, lr 0.05, rank 30
    Rng train_rng(700 + seed);
    auto model = train_confidence(baseline, ds, ds.train_ids, config, train_rng);

    std::size_t wins = 0, pairs = 0;
    for (std::uint64_t id : ds.val_ids) {
      const Instance& inst = ds.instances[index.at(id)];
      Matrix x(1, inst.features.size());
      for (std::size_t j = 0; j < inst.features.size(); ++j) {
        x(0, j) = inst.features[j];
      }
      auto row = forward(baseline, x).penultimate().row(0);
      const std::vector<double> pen(row.begin(), row.end());
      const double pos =
          raw_confidence(model, pen, ds.classes[inst.observed_label].token_ids);
      for (std::uint32_t c = 0; c < ds.num_classes; ++c) {
        if (c == inst.observed_label) continue;
        const double neg = raw_confidence(model, pen, ds.classes[c].token_ids);
        wins += pos > neg ? 1 : 0;
        ++pairs;
      }
    }
    fraction_sum += static_cast<double>(wins) / static_cast<double>(pairs);
  }
  const double mean_fraction = fraction_sum / 5.0;
  if (!(mean_fraction >= 0.95)) {
    fail("positive beats negative on only " + std::to_string(mean_fraction * 100.0) +
         "% of held-out pairs");
    return false;
  }
  return true;
}

// ---------------------------------------------------------------- criterion 8

bool c8_reference_ablation() {
  const std::string ref_dir = env_or("URNET_REFERENCE_DIR", "benchmarks/reference");
  GenConfig gen;
  try {
    gen = load_gen_config(ref_dir + "/gen.cfg");
  } catch (const Error& e) {
    fail("cannot load reference config: " + std::string(e.what()));
    return false;
  }
  Dataset ds = generate(gen);
  Rng split_rng = Rng(gen.seed).fork(rng_stream::kSplit);
  split(ds, 0.25, split_rng);

  // the committed benchmark and this regeneration must be the same bytes
  const auto committed = read_bytes(ref_dir + "/data/dataset.bin");
  if (committed.empty() || serialize(ds) != committed) {
    fail("regenerated dataset differs from the committed benchmark");
    return false;
  }

  AblateConfig config;
  config.model.input_dim = ds.feature_dim;
  config.model.num_classes = ds.num_classes;
  config.model.hidden = {32};
  config.model.bag_hidden = 32;
  config.baseline_opt.epochs = 25;
  config.baseline_opt.batch_size = 64;
  config.baseline_opt.lr = 0.1;
  config.baseline_opt.lr_decay_every = 0;
  config.stage_opt = config.baseline_opt;
  config.stage_opt.epochs = 20;
  config.stage_opt.lr = 0.02;
  config.seeds = {1, 2, 3, 4, 5};
  auto report = ablate(ds, config);

  // same numbers the committed run shows
  const std::string committed_csv = read_text(ref_dir + "/run/aggregate.csv");
  if (committed_csv.empty() || aggregate_csv(report) != committed_csv) {
    fail("ablation does not reproduce the committed aggregate table");
    return false;
  }

  const StageAggregate& baseline = report.aggregates.front();
  const StageAggregate& class_only = report.aggregates[1];
  const StageAggregate& full = report.aggregates.back();
  const double gain_pp = (full.top1_mean - baseline.top1_mean) * 100.0;
  if (!(gain_pp >= 2.0)) {
    fail("full stack gains only " + std::to_string(gain_pp) + "pp top-1");
    return false;
  }
  if (!(class_only.macro_mean >= baseline.macro_mean)) {
    fail("class-only macro top-1 fell below the baseline");
    return false;
  }
  return true;
}

// ---------------------------------------------------------------- criterion 9

bool c9_determinism() {
  const std::string cli = env_or("URNET_CLI", "");
  if (cli.empty()) {
    fail("URNET_CLI not set");
    return false;
  }
  namespace fs = std::filesystem;
  const fs::path dir =
      fs::temp_directory_path() / ("urnet_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);

  GenConfig gen;
  gen.num_classes = 5;
  gen.feature_dim = 8;
  gen.size_min = 14;
  gen.size_max = 40;
  gen.size_exponent = 1.5;
  gen.flip_rate = 0.2;
  gen.confusable_pairs = {{0, 1}, {2, 3}};
  gen.representative_fraction = 0.5;
  gen.ambiguous_fraction = 0.1;
  gen.seed = 90;
  Dataset ds = generate(gen);
  Rng split_rng = Rng(gen.seed).fork(rng_stream::kSplit);
  split(ds, 0.25, split_rng);
  save(ds, (dir / "dataset.bin").string());

  const std::string flags =
      " --seeds 1,2 --threads 1 --baseline-epochs 6 --stage-epochs 4"
      " --batch-size 32 --hidden 12 --hidden-layers 1 --bag-hidden 8"
      " --confidence-epochs 4 --top-rank 8";
  for (const char* run : {"a", "b"}) {
    const std::string cmd = cli + " ablate --dataset " +
                            (dir / "dataset.bin").string() + " --out " +
                            (dir / run).string() + flags + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      fail(std::string("ablate run ") + run + " exited nonzero");
      return false;
    }
  }
  for (const char* name : {"report.csv", "aggregate.csv"}) {
    const auto a = read_bytes((dir / "a" / name).string());
    const auto b = read_bytes((dir / "b" / name).string());
    if (a.empty() || a != b) {
      fail(std::string(name) + " differs between identical runs");
      return false;
    }
  }
  fs::remove_all(dir);
  return true;
}

// --------------------------------------------------------------- criterion 10

bool c10_round_trips() {
  Rng rng(1010);
  for (int it = 0; it < 100; ++it) {
    GenConfig gen;
    gen.num_classes = 2 + static_cast<std::uint32_t>(rng.index(7));
    gen.feature_dim = 1 + static_cast<std::uint32_t>(rng.index(12));
    gen.size_min = 1 + static_cast<std::uint32_t>(rng.index(10));
    gen.size_max = gen.size_min + static_cast<std::uint32_t>(rng.index(30));
    gen.size_exponent = rng.uniform(0.0, 2.0);
    gen.flip_rate = rng.uniform(0.0, 0.5);
    gen.representative_fraction = rng.uniform();
    gen.ambiguous_fraction = rng.uniform(0.0, 0.3);
    gen.tokens_per_class = 1 + static_cast<std::uint32_t>(rng.index(3));
    gen.seed = rng.next_u64();
    if (it % 2 == 0 && gen.num_classes >= 4) {
      gen.confusable_pairs = {{0, 1}, {2, 3}};
    }
    Dataset ds = generate(gen);
    if (it % 2 == 0) {
      Rng split_rng = Rng(gen.seed).fork(rng_stream::kSplit);
      split(ds, 0.25, split_rng);
    }
    const auto bytes = serialize(ds);
    Dataset back = deserialize(bytes);
    if (!(back == ds) || serialize(back) != bytes) {
      fail("dataset round trip case " + std::to_string(it));
      return false;
    }
  }

  for (int it = 0; it < 100; ++it) {
    ClassifierConfig config;
    config.input_dim = 1 + static_cast<std::uint32_t>(rng.index(9));
    config.hidden = {static_cast<std::uint32_t>(1 + rng.index(12))};
    if (it % 3 == 0) config.hidden.push_back(static_cast<std::uint32_t>(1 + rng.index(8)));
    config.num_classes = 2 + static_cast<std::uint32_t>(rng.index(7));
    config.bag_hidden = 1 + static_cast<std::uint32_t>(rng.index(6));
    Classifier model = init_classifier(config, rng);
    for (Affine* layer : all_layers(model)) {
      for (double& v : layer->w.data()) v += rng.uniform(-3.0, 3.0);
      for (double& v : layer->b) v += rng.uniform(-3.0, 3.0);
    }
    round_to_checkpoint_precision(model);
    const auto bytes = serialize_checkpoint(model);
    Classifier back = deserialize_checkpoint(bytes);
    if (!(back == model) || serialize_checkpoint(back) != bytes) {
      fail("checkpoint round trip case " + std::to_string(it));
      return false;
    }
  }
  return true;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    bool (*run)();
  };
  const Criterion criteria[] = {
      {"class weight formula", c1_class_weights},
      {"cluster group weights", c2_group_weights},
      {"gradient suite", c3_gradient_suite},
      {"reduction contract", c4_reduction_contract},
      {"smoothing identity", c5_smoothing_identity},
      {"k-means invariants", c6_kmeans},
      {"confidence separation", c7_confidence},
      {"reference ablation margins", c8_reference_ablation},
      {"ablate determinism", c9_determinism},
      {"serialization round trips", c10_round_trips},
  };

  int failures = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    g_detail.clear();
    const auto start = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = criteria[i].run();
    } catch (const std::exception& e) {
      fail(std::string("exception: ") + e.what());
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (ok) {
      std::printf("[PASS] %2zu %s (%.1fs)\n", i + 1, criteria[i].name, secs);
    } else {
      std::printf("[FAIL] %2zu %s (%.1fs): %s\n", i + 1, criteria[i].name, secs,
                  g_detail.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
