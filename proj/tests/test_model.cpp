#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "urnet/errors.hpp"
#include "urnet/model.hpp"
#include "urnet/numerics.hpp"

using namespace urnet;

namespace {

ClassifierConfig small_config() {
  ClassifierConfig config;
  config.input_dim = 5;
  config.hidden = {8, 6};
  config.num_classes = 4;
  config.bag_hidden = 5;
  config.bag_size = 3;
  return config;
}

Matrix random_batch(Rng& rng, std::size_t n, std::size_t d) {
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rng.uniform(-1.5, 1.5);
  }
  return x;
}

BagBatch random_bags(Rng& rng, std::size_t num_bags,
                     const ClassifierConfig& config) {
  BagBatch bags;
  bags.features = random_batch(rng, num_bags * config.bag_size, config.input_dim);
  for (std::size_t g = 0; g < num_bags; ++g) {
    bags.labels.push_back(static_cast<std::uint32_t>(rng.index(config.num_classes)));
  }
  return bags;
}

// runs grad_check on the full composite loss for one weight/target setup
double check_total_gradient(std::uint64_t seed, bool class_like_weights,
                            bool varied_weights, double beta, double lambda_bag) {
  Rng rng(seed);
  ClassifierConfig config = small_config();
  Classifier model = init_classifier(config, rng);
  const std::size_t n = 6;
  Matrix x = random_batch(rng, n, config.input_dim);
  std::vector<Target> targets(n);
  std::vector<double> weights(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    targets[i].label = static_cast<std::uint32_t>(rng.index(config.num_classes));
    targets[i].predicted =
        static_cast<std::uint32_t>(rng.index(config.num_classes));
    targets[i].beta = beta;
    if (class_like_weights) weights[i] = 0.5 + 0.5 * rng.uniform();
    if (varied_weights) weights[i] *= 0.2 + rng.uniform();
  }
  BagBatch bags = random_bags(rng, 2, config);
  const BagBatch* bag_ptr = lambda_bag != 0.0 ? &bags : nullptr;

  auto params = flatten(model);
  auto loss_fn = [&](std::span<const double> p) {
    Classifier m = model;
    unflatten(m, p);
    Gradients g(m);
    return total_loss(m, x, targets, weights, bag_ptr, lambda_bag, g).total;
  };
  auto grad_fn = [&](std::span<const double> p) {
    Classifier m = model;
    unflatten(m, p);
    Gradients g(m);
    total_loss(m, x, targets, weights, bag_ptr, lambda_bag, g);
    return flatten(g);
  };
  Rng check_rng(seed + 5000);
  return grad_check(loss_fn, grad_fn, params, check_rng);
}

}  // namespace

TEST_CASE("forward: zero parameters give zero logits, batch rows independent") {
  Rng rng(1);
  Classifier model = init_classifier(small_config(), rng);
  for (Affine* layer : all_layers(model)) {
    std::fill(layer->w.data().begin(), layer->w.data().end(), 0.0);
    std::fill(layer->b.begin(), layer->b.end(), 0.0);
  }
  Matrix x = random_batch(rng, 3, model.config.input_dim);
  auto cache = forward(model, x);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < model.config.num_classes; ++j) {
      CHECK(cache.logits(i, j) == 0.0);
    }
  }

  Classifier trained = init_classifier(small_config(), rng);
  auto full = forward(trained, x);
  Matrix one_row(1, model.config.input_dim);
  std::copy_n(x.row(1).begin(), x.cols(), one_row.row(0).begin());
  auto single = forward(trained, one_row);
  for (std::size_t j = 0; j < model.config.num_classes; ++j) {
    CHECK(single.logits(0, j) == full.logits(1, j));
  }

  Matrix wrong(2, model.config.input_dim + 1);
  CHECK_THROWS_AS(forward(trained, wrong), InvalidInputError);
}

TEST_CASE("weighted_ce: uniform logits, one-hot, unit weight gives ln C") {
  const std::size_t n = 3, c = 7;
  Matrix logits(n, c, 0.25);  // equal per row
  std::vector<Target> targets(n);
  for (std::size_t i = 0; i < n; ++i) targets[i].label = targets[i].predicted = 2;
  std::vector<double> ones(n, 1.0);
  auto result = weighted_ce(logits, targets, ones);
  CHECK(std::abs(result.loss - std::log(7.0)) < 1e-12);
}

TEST_CASE("weighted_ce: zero weights zero everything; doubling is exact") {
  Rng rng(3);
  Matrix logits = random_batch(rng, 4, 5);
  std::vector<Target> targets(4);
  for (auto& t : targets) {
    t.label = static_cast<std::uint32_t>(rng.index(5));
    t.predicted = static_cast<std::uint32_t>(rng.index(5));
    t.beta = 0.8;
  }
  std::vector<double> zeros(4, 0.0);
  auto z = weighted_ce(logits, targets, zeros);
  CHECK(z.loss == 0.0);
  for (double v : z.dlogits.data()) CHECK(v == 0.0);

  std::vector<double> w(4);
  for (double& v : w) v = 0.25 + rng.uniform();
  auto base = weighted_ce(logits, targets, w);
  std::vector<double> w2 = w;
  for (double& v : w2) v *= 2.0;
  auto doubled = weighted_ce(logits, targets, w2);
  CHECK(doubled.loss == 2.0 * base.loss);
  for (std::size_t i = 0; i < base.dlogits.data().size(); ++i) {
    CHECK(doubled.dlogits.data()[i] == 2.0 * base.dlogits.data()[i]);
  }

  std::vector<double> negative(4, -0.5);
  CHECK_THROWS_AS(weighted_ce(logits, targets, negative), InvalidInputError);
}

TEST_CASE("weighted_ce: smoothing identity and reduction path are bitwise") {
  Rng rng(4);
  Matrix logits = random_batch(rng, 5, 6);
  std::vector<double> w(5);
  for (double& v : w) v = rng.uniform(0.1, 2.0);

  std::vector<Target> smoothed(5), plain(5);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto y = static_cast<std::uint32_t>(rng.index(6));
    smoothed[i] = Target{y, y, 0.8};  // supposed label equals observed
    plain[i] = Target{y, y, 1.0};
  }
  auto a = weighted_ce(logits, smoothed, w);
  auto b = weighted_ce(logits, plain, w);
  CHECK(a.loss == b.loss);
  CHECK(a.dlogits == b.dlogits);
}

TEST_CASE("bag_forward: uniform saliency averages, saturation selects") {
  Rng rng(5);
  Classifier model = init_classifier(small_config(), rng);
  // zero scorer output weights: every saliency logit equals the bias
  std::fill(model.bag_score_out.w.data().begin(),
            model.bag_score_out.w.data().end(), 0.0);
  const std::size_t h = model.config.hidden.back();
  Matrix pen = random_batch(rng, 3, h);
  auto fwd = bag_forward(model, pen);
  double sal_sum = 0.0;
  for (double s : fwd.saliency) {
    CHECK(s == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    sal_sum += s;
  }
  CHECK(sal_sum == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t k = 0; k < h; ++k) {
    const double mean = (pen(0, k) + pen(1, k) + pen(2, k)) / 3.0;
    CHECK(fwd.bag_features[k] == doctest::Approx(mean).epsilon(1e-12));
  }

  Matrix wrong(2, h);
  CHECK_THROWS_AS(bag_forward(model, wrong), InvalidInputError);
}

TEST_CASE("bag_forward: saturated saliency picks one instance within 1e-10") {
  ClassifierConfig config;
  config.input_dim = 3;
  config.hidden = {3};
  config.num_classes = 2;
  config.bag_hidden = 1;
  config.bag_size = 3;
  Rng rng(6);
  Classifier model = init_classifier(config, rng);
  model.bag_score_hidden.w = Matrix::from_data(1, 3, {100.0, 0.0, 0.0});
  model.bag_score_hidden.b = {0.0};
  model.bag_score_out.w = Matrix::from_data(1, 1, {100.0});
  model.bag_score_out.b = {0.0};

  Matrix pen = Matrix::from_data(3, 3, {1.0, 0.4, -0.2,
                                        -1.0, 2.0, 0.7,
                                        -1.0, -0.9, 0.1});
  auto fwd = bag_forward(model, pen);
  CHECK(fwd.saliency[0] > 0.999999);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(fwd.bag_features[k] - pen(0, k)) < 1e-10);
  }
}

TEST_CASE("gradients: every loss configuration matches central differences") {
  // plain CE, class-weighted, composite weights, smoothed labels, bag branch
  CHECK(check_total_gradient(11, false, false, 1.0, 0.0) < 1e-5);
  CHECK(check_total_gradient(12, true, false, 1.0, 0.0) < 1e-5);
  CHECK(check_total_gradient(13, true, true, 1.0, 0.0) < 1e-5);
  CHECK(check_total_gradient(14, true, true, 0.8, 0.0) < 1e-5);
  CHECK(check_total_gradient(15, false, false, 1.0, 1.0) < 1e-5);
  CHECK(check_total_gradient(16, true, true, 0.8, 1.0) < 1e-5);
  CHECK(check_total_gradient(17, true, true, 0.8, 0.5) < 1e-5);
}

TEST_CASE("total_loss: lambda 0 equals instance-only gradients bitwise") {
  Rng rng(21);
  ClassifierConfig config = small_config();
  Classifier model = init_classifier(config, rng);
  Matrix x = random_batch(rng, 4, config.input_dim);
  std::vector<Target> targets(4);
  for (auto& t : targets) {
    t.label = t.predicted = static_cast<std::uint32_t>(rng.index(config.num_classes));
  }
  std::vector<double> w(4, 1.0);
  BagBatch bags = random_bags(rng, 2, config);

  Gradients with_bags(model), without(model);
  auto a = total_loss(model, x, targets, w, &bags, 0.0, with_bags);
  auto b = total_loss(model, x, targets, w, nullptr, 0.0, without);
  CHECK(a.total == b.total);
  CHECK(a.bag_loss == 0.0);
  for (std::size_t l = 0; l < with_bags.layers.size(); ++l) {
    CHECK(with_bags.layers[l] == without.layers[l]);
  }

  Gradients active(model);
  auto c = total_loss(model, x, targets, w, &bags, 1.0, active);
  CHECK(c.total == c.instance_loss + 1.0 * c.bag_loss);
  CHECK(c.bag_loss > 0.0);
}

TEST_CASE("predict_topk: ordering, ties, shift invariance, errors") {
  std::vector<double> logits{3.0, 1.0, 2.0};
  CHECK(predict_topk(logits, 2) == std::vector<std::uint32_t>{0, 2});
  CHECK(predict_topk(logits, 3) == std::vector<std::uint32_t>{0, 2, 1});

  std::vector<double> tied{1.0, 5.0, 5.0, 0.0};
  CHECK(predict_topk(tied, 2) == std::vector<std::uint32_t>{1, 2});

  std::vector<double> shifted{3.0 + 42.0, 1.0 + 42.0, 2.0 + 42.0};
  CHECK(predict_topk(shifted, 2) == predict_topk(logits, 2));

  CHECK_THROWS_AS(predict_topk(logits, 4), InvalidInputError);
  CHECK_THROWS_AS(predict_topk(logits, 0), InvalidInputError);
}

TEST_CASE("checkpoint: round trip is bit-exact across shapes") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    ClassifierConfig config;
    config.input_dim = 1 + static_cast<std::uint32_t>(rng.index(9));
    config.hidden = {static_cast<std::uint32_t>(1 + rng.index(12)),
                     static_cast<std::uint32_t>(1 + rng.index(12))};
    if (seed % 3 == 0) config.hidden.push_back(4);
    config.num_classes = 2 + static_cast<std::uint32_t>(rng.index(7));
    config.bag_hidden = 1 + static_cast<std::uint32_t>(rng.index(6));
    Classifier model = init_classifier(config, rng);
    auto data = serialize_checkpoint(model);
    Classifier back = deserialize_checkpoint(data);
    CHECK(back == model);
    CHECK(serialize_checkpoint(back) == data);
  }
}

TEST_CASE("checkpoint: corruption and version errors") {
  Rng rng(9);
  Classifier model = init_classifier(small_config(), rng);
  auto data = serialize_checkpoint(model);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9},
                          data.size() / 2, data.size() - 1}) {
    CHECK_THROWS_AS(deserialize_checkpoint(std::span(data.data(), cut)),
                    FormatError);
  }

  auto versioned = data;
  versioned[5] = '3';
  CHECK_THROWS_AS(deserialize_checkpoint(versioned), VersionError);

  auto trailing = data;
  trailing.push_back(7);
  CHECK_THROWS_AS(deserialize_checkpoint(trailing), FormatError);

  // corrupt a parameter into a NaN (all-ones exponent, nonzero mantissa)
  auto nan_param = data;
  const std::size_t param_at = nan_param.size() - 4;
  nan_param[param_at] = 0x01;
  nan_param[param_at + 1] = 0x00;
  nan_param[param_at + 2] = 0x80;
  nan_param[param_at + 3] = 0x7f;
  CHECK_THROWS_AS(deserialize_checkpoint(nan_param), FormatError);
}

TEST_CASE("flatten/unflatten: inverse pair with strict length checks") {
  Rng rng(2);
  Classifier model = init_classifier(small_config(), rng);
  auto params = flatten(model);
  Classifier copy = model;
  for (double& p : params) p += 0.125;
  unflatten(copy, params);
  CHECK(flatten(copy) == params);

  params.pop_back();
  CHECK_THROWS_AS(unflatten(copy, params), InvalidInputError);
  params.push_back(0.0);
  params.push_back(0.0);
  CHECK_THROWS_AS(unflatten(copy, params), InvalidInputError);
}
