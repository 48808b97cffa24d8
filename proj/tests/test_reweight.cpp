#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "urnet/datagen.hpp"
#include "urnet/errors.hpp"
#include "urnet/numerics.hpp"
#include "urnet/reweight.hpp"

using namespace urnet;

namespace {

// backbone that never moves: logits equal the head bias
Classifier constant_model(std::uint32_t input_dim, std::uint32_t classes,
                          std::vector<double> head_bias) {
  ClassifierConfig config;
  config.input_dim = input_dim;
  config.hidden = {4};
  config.num_classes = classes;
  Rng rng(1);
  Classifier model = init_classifier(config, rng);
  for (Affine* layer : all_layers(model)) {
    std::fill(layer->w.data().begin(), layer->w.data().end(), 0.0);
    std::fill(layer->b.begin(), layer->b.end(), 0.0);
  }
  model.head.b = std::move(head_bias);
  return model;
}

Dataset toy_dataset(std::uint32_t classes, std::uint32_t per_class,
                    std::uint64_t seed) {
  GenConfig config;
  config.num_classes = classes;
  config.feature_dim = 6;
  config.size_min = per_class;
  config.size_max = per_class;
  config.sigma_near = 0.2;
  config.representative_fraction = 1.0;
  config.prototype_scale = 2.0;
  config.seed = seed;
  return generate(config);
}

std::vector<std::uint64_t> all_ids(const Dataset& ds) {
  std::vector<std::uint64_t> ids;
  for (const auto& inst : ds.instances) ids.push_back(inst.id);
  return ids;
}

std::vector<double> penultimate_of(const Classifier& model,
                                   const Instance& inst) {
  Matrix x(1, inst.features.size());
  for (std::size_t k = 0; k < inst.features.size(); ++k) {
    x(0, k) = inst.features[k];
  }
  auto cache = forward(model, x);
  auto row = cache.penultimate().row(0);
  return {row.begin(), row.end()};
}

}  // namespace

TEST_CASE("class_weights: hand values and interpolation endpoints") {
  const std::uint32_t sizes[] = {1, 3};
  auto full = class_weights(sizes, 1.0);
  CHECK(std::abs(full.weights[0] - 0.75) < 1e-12);
  CHECK(std::abs(full.weights[1] - 0.25) < 1e-12);

  auto half = class_weights(sizes, 0.5);
  CHECK(std::abs(half.weights[0] - 0.875) < 1e-12);
  CHECK(std::abs(half.weights[1] - 0.625) < 1e-12);

  auto off = class_weights(sizes, 0.0);
  CHECK(off.weights[0] == 1.0);
  CHECK(off.weights[1] == 1.0);

  const std::uint32_t equal[] = {7, 7, 7, 7};
  for (double alpha : {0.0, 0.3, 1.0}) {
    auto w = class_weights(equal, alpha);
    for (double v : w.weights) {
      CHECK(std::abs(v - ((1.0 - alpha) + alpha / 4.0)) < 1e-12);
    }
  }
}

TEST_CASE("class_weights: scale-free in sizes, validation") {
  const std::uint32_t sizes[] = {2, 5, 9};
  const std::uint32_t scaled[] = {20, 50, 90};
  auto a = class_weights(sizes, 0.7);
  auto b = class_weights(scaled, 0.7);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::abs(a.weights[j] - b.weights[j]) < 1e-12);
  }

  const std::uint32_t with_zero[] = {3, 0};
  CHECK_THROWS_AS(class_weights(with_zero, 0.5), InvalidInputError);
  CHECK_THROWS_AS(class_weights(sizes, 1.5), InvalidInputError);
  CHECK_THROWS_AS(class_weights(sizes, -0.1), InvalidInputError);
  CHECK_THROWS_AS(class_weights({}, 0.5), InvalidInputError);
}

TEST_CASE("confusion_matrix: constant predictor, manual tally, threads") {
  auto ds = toy_dataset(3, 8, 4);
  auto ids = all_ids(ds);

  auto constant = constant_model(6, 3, {1.0, 0.0, 0.0});
  auto m = confusion_matrix(constant, ds, ids);
  CHECK(m.total() == ds.instances.size());
  for (std::uint32_t j = 0; j < 3; ++j) {
    CHECK(m.row_sum(j) == ds.classes[j].size);
    CHECK(m.at(j, 0) == ds.classes[j].size);  // everything lands in column 0
  }

  // manual tally against per-instance top-1
  Rng rng(11);
  ClassifierConfig config;
  config.input_dim = 6;
  config.hidden = {5};
  config.num_classes = 3;
  Classifier random_model = init_classifier(config, rng);
  auto tallied = confusion_matrix(random_model, ds, ids);
  ConfusionMatrix manual(3);
  for (const auto& inst : ds.instances) {
    Matrix x(1, 6);
    for (std::size_t k = 0; k < 6; ++k) x(0, k) = inst.features[k];
    auto cache = forward(random_model, x);
    manual.at(inst.observed_label, predict_topk(cache.logits.row(0), 1)[0]) += 1;
  }
  CHECK(tallied == manual);

  CHECK(confusion_matrix(random_model, ds, ids, 3) == tallied);
  CHECK(confusion_matrix(random_model, ds, ids, 7) == tallied);

  CHECK_THROWS_AS(confusion_matrix(random_model, ds, {}), InvalidInputError);
}

TEST_CASE("top_confused: ordering and tie-breaks") {
  ConfusionMatrix m(6);
  m.at(2, 2) = 50;
  m.at(2, 0) = 9;
  m.at(2, 1) = 7;
  m.at(2, 3) = 5;
  m.at(2, 4) = 3;
  m.at(2, 5) = 1;
  CHECK(top_confused(m, 2) == std::array<std::uint32_t, 4>{0, 1, 3, 4});

  ConfusionMatrix zero(6);
  CHECK(top_confused(zero, 2) == std::array<std::uint32_t, 4>{0, 1, 3, 4});
  CHECK(top_confused(zero, 0) == std::array<std::uint32_t, 4>{1, 2, 3, 4});

  ConfusionMatrix tie(5);
  tie.at(0, 1) = 4;
  tie.at(0, 2) = 4;
  tie.at(0, 3) = 9;
  tie.at(0, 4) = 4;
  CHECK(top_confused(tie, 0) == std::array<std::uint32_t, 4>{3, 1, 2, 4});

  ConfusionMatrix small(4);
  CHECK_THROWS_AS(top_confused(small, 0), InvalidInputError);
}

TEST_CASE("group weights: hand values, fuzzed sum, monotone in size") {
  const std::uint32_t sizes[] = {10, 20, 30, 20, 20};
  auto w = group_weights_from_sizes(sizes);
  const double expected[] = {0.1, 0.2, 0.3, 0.2, 0.2};
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(w[i] - expected[i]) < 1e-12);

  Rng rng(31);
  for (int rep = 0; rep < 1000; ++rep) {
    std::uint32_t g[5];
    std::uint32_t total = 0;
    for (auto& v : g) {
      v = static_cast<std::uint32_t>(rng.index(100));
      total += v;
    }
    if (total == 0) g[rng.index(5)] = 1;
    auto weights = group_weights_from_sizes(g);
    double sum = 0.0;
    for (double v : weights) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
    for (std::size_t a = 0; a < 5; ++a) {
      for (std::size_t b = 0; b < 5; ++b) {
        if (g[a] > g[b]) CHECK(weights[a] >= weights[b]);
      }
    }
  }

  const std::uint32_t zeros[] = {0, 0};
  CHECK_THROWS_AS(group_weights_from_sizes(zeros), InvalidInputError);
}

TEST_CASE("cluster_weights: pooling, weights, and the own-class rule") {
  auto ds = toy_dataset(6, 20, 9);
  auto ids = all_ids(ds);
  Rng rng(3);
  ClassifierConfig config;
  config.input_dim = 6;
  config.hidden = {8};
  config.num_classes = 6;
  Classifier baseline = init_classifier(config, rng);
  auto m = confusion_matrix(baseline, ds, ids);

  Rng cluster_rng(17);
  auto cw = cluster_weights(baseline, ds, ids, m, 2, cluster_rng);
  CHECK(cw.class_id == 2);
  CHECK(cw.group_weights.size() == 5);
  double sum = 0.0;
  for (double v : cw.group_weights) sum += v;
  CHECK(std::abs(sum - 1.0) < 1e-9);

  CHECK(cw.member_weight.size() == ds.classes[2].size);
  for (auto [id, weight] : cw.member_weight) {
    const auto& inst = ds.instances[ds.id_index().at(id)];
    CHECK(inst.observed_label == 2);
    CHECK(std::find_if(cw.group_weights.begin(), cw.group_weights.end(),
                       [&](double g) { return g == weight; }) !=
          cw.group_weights.end());
  }

  Rng again(17);
  auto repeat = cluster_weights(baseline, ds, ids, m, 2, again);
  CHECK(repeat.group_weights == cw.group_weights);
  CHECK(repeat.member_weight == cw.member_weight);

  std::vector<std::uint64_t> tiny(ids.begin(), ids.begin() + 3);
  Rng r2(1);
  CHECK_THROWS_AS(cluster_weights(baseline, ds, tiny, m, 2, r2),
                  InvalidInputError);
}

TEST_CASE("confidence: pair loss gradient matches central differences") {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    Rng rng(seed);
    ConfidenceConfig config;
    config.token_dim = 4;
    config.embed_hidden = 6;
    config.embed_dim = 5;
    ConfidenceModel model = init_confidence(config, 7, 5, rng);
    std::vector<double> pen(7);
    for (double& v : pen) v = rng.uniform(-1.0, 1.0);
    const std::uint32_t pos[] = {0, 1};
    const std::uint32_t neg[] = {2, 3, 4};

    auto params = flatten(model);
    auto loss_fn = [&](std::span<const double> p) {
      ConfidenceModel m = model;
      unflatten(m, p);
      return confidence_pair_grad(m, pen, pos, neg).first;
    };
    auto grad_fn = [&](std::span<const double> p) {
      ConfidenceModel m = model;
      unflatten(m, p);
      return confidence_pair_grad(m, pen, pos, neg).second;
    };
    Rng check(seed + 100);
    CHECK(grad_check(loss_fn, grad_fn, params, check) < 1e-5);
  }
}

TEST_CASE("confidence: a step raises the positive cosine, lowers the negative") {
  Rng rng(8);
  ConfidenceConfig config;
  config.token_dim = 4;
  ConfidenceModel model = init_confidence(config, 6, 4, rng);
  std::vector<double> pen(6);
  for (double& v : pen) v = rng.uniform(-1.0, 1.0);
  const std::uint32_t pos[] = {0, 1};
  const std::uint32_t neg[] = {2, 3};

  const double cos_pos_before = cosine(project_image(model, pen),
                                       project_text(model, pos));
  const double cos_neg_before = cosine(project_image(model, pen),
                                       project_text(model, neg));
  const double loss_before = confidence_pair_step(model, pen, pos, neg, 1e-3);
  const double cos_pos_after = cosine(project_image(model, pen),
                                      project_text(model, pos));
  const double cos_neg_after = cosine(project_image(model, pen),
                                      project_text(model, neg));
  CHECK(cos_pos_after > cos_pos_before);
  CHECK(cos_neg_after < cos_neg_before);
  CHECK(cos_neg_after - cos_pos_after < loss_before);
}

TEST_CASE("confidence: trained two-class toy separates positive from negative") {
  auto ds = toy_dataset(2, 40, 21);
  Rng split_rng(2);
  split(ds, 0.25, split_rng);

  Rng rng(5);
  ClassifierConfig mconfig;
  mconfig.input_dim = 6;
  mconfig.hidden = {10};
  mconfig.num_classes = 2;
  Classifier baseline = init_classifier(mconfig, rng);

  ConfidenceConfig config;
  config.epochs = 30;
  config.top_rank = 35;
  Rng train_rng(100);
  std::vector<std::string> warnings;
  auto model = train_confidence(baseline, ds, ds.train_ids, config, train_rng,
                                &warnings);
  CHECK(warnings.size() == 2);  // both classes hold fewer than 35 train members

  double pos_sum = 0.0, neg_sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t id : ds.val_ids) {
    const auto& inst = ds.instances[ds.id_index().at(id)];
    auto pen = penultimate_of(baseline, inst);
    pos_sum += raw_confidence(model, pen,
                              ds.classes[inst.observed_label].token_ids);
    neg_sum += raw_confidence(model, pen,
                              ds.classes[1 - inst.observed_label].token_ids);
    ++count;
  }
  CHECK(pos_sum / count > neg_sum / count);
}

TEST_CASE("confidence: clamped score hits the documented anchor values") {
  ConfidenceConfig config;
  config.token_dim = 2;
  config.embed_hidden = 2;
  config.embed_dim = 2;
  Rng rng(1);
  ConfidenceModel model = init_confidence(config, 2, 2, rng);
  // silence both towers so the projections equal the output biases
  for (Affine* layer : {&model.img1, &model.img2, &model.txt1, &model.txt2}) {
    std::fill(layer->w.data().begin(), layer->w.data().end(), 0.0);
    std::fill(layer->b.begin(), layer->b.end(), 0.0);
  }
  model.img2.b = {1.0, 0.0};
  const std::vector<double> pen{0.3, -0.4};
  const std::uint32_t tokens[] = {0};

  model.txt2.b = {1.0, 0.0};
  CHECK(instance_confidence(model, pen, tokens) == doctest::Approx(1.0));
  model.txt2.b = {-1.0, 0.0};
  CHECK(raw_confidence(model, pen, tokens) == doctest::Approx(-1.0));
  CHECK(instance_confidence(model, pen, tokens) == 0.0);
  model.txt2.b = {0.5, std::sqrt(3.0) / 2.0};
  CHECK(instance_confidence(model, pen, tokens) == doctest::Approx(0.5).epsilon(1e-9));

  const std::uint32_t bad_token[] = {9};
  CHECK_THROWS_AS(raw_confidence(model, pen, bad_token), InvalidInputError);
  CHECK_THROWS_AS(project_text(model, {}), InvalidInputError);
}

TEST_CASE("smooth_targets: field mapping and validation") {
  const std::uint32_t observed[] = {1, 2, 0};
  const std::uint32_t predicted[] = {1, 0, 0};
  auto targets = smooth_targets(observed, predicted, 0.8);
  CHECK(targets.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(targets[i].label == observed[i]);
    CHECK(targets[i].predicted == predicted[i]);
    CHECK(targets[i].beta == 0.8);
  }
  CHECK_THROWS_AS(smooth_targets(observed, predicted, 1.2), InvalidInputError);
  CHECK_THROWS_AS(smooth_targets(observed, std::span(predicted, 2), 0.5),
                  InvalidInputError);
}

TEST_CASE("combine: product form, renormalization, degenerate batch") {
  const std::uint64_t ids[] = {10, 11, 12};
  const double ones[] = {1.0, 1.0, 1.0};
  auto identity = combine(ids, ones, ones, ones);
  CHECK(identity.normalization == 1.0);
  for (double v : identity.combined) CHECK(v == 1.0);

  const double wc[] = {0.875, 1.0, 1.0};
  const double wg[] = {0.2, 1.0, 1.0};
  const double wi[] = {0.5, 1.0, 1.0};
  auto raw = combine(ids, wc, wg, wi, false);
  CHECK(std::abs(raw.combined[0] - 0.0875) < 1e-12);
  CHECK(raw.normalization == 1.0);

  Rng rng(12);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.index(32);
    std::vector<std::uint64_t> bids(n);
    std::vector<double> a(n), b(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
      bids[i] = i;
      a[i] = rng.uniform(0.0, 2.0);
      b[i] = rng.uniform(0.0, 1.0);
      c[i] = rng.uniform(0.1, 1.0);
    }
    auto ledger = combine(bids, a, b, c);
    double mean = 0.0;
    for (double v : ledger.combined) mean += v;
    mean /= static_cast<double>(n);
    CHECK(std::abs(mean - 1.0) < 1e-6);
  }

  const double zeros[] = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(combine(ids, zeros, ones, ones), DegenerateBatchError);
  const double negative[] = {-1.0, 1.0, 1.0};
  CHECK_THROWS_AS(combine(ids, negative, ones, ones), InvalidInputError);
}

TEST_CASE("csv exports: shape and spot values") {
  WeightLedger ledger;
  ledger.ids = {5, 6};
  ledger.w_class = {0.875, 1.0};
  ledger.w_cluster = {0.2, 1.0};
  ledger.w_confidence = {0.5, 1.0};
  ledger.combined = {0.0875, 1.0};
  auto csv = ledger_csv(ledger);
  CHECK(csv.find("id,w_class,w_cluster,w_confidence,combined\n") == 0);
  CHECK(csv.find("5,0.875,0.2,0.5,0.0875\n") != std::string::npos);

  ConfusionMatrix m(2);
  m.at(0, 0) = 3;
  m.at(0, 1) = 1;
  m.at(1, 1) = 7;
  auto mcsv = confusion_csv(m);
  CHECK(mcsv == "observed,0,1\n0,3,1\n1,0,7\n");
}
