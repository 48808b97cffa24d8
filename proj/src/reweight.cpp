#include "urnet/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "urnet/errors.hpp"
#include "urnet/numerics.hpp"

namespace urnet {

ClassWeights class_weights(std::span<const std::uint32_t> sizes, double alpha) {
  if (sizes.empty()) throw InvalidInputError("class_weights: no class sizes");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidInputError("alpha must be in [0,1]");
  }
  ClassWeights out;
  out.alpha = alpha;
  out.weights.resize(sizes.size());
  double sum_r = 0.0;
  for (std::uint32_t n : sizes) {
    if (n == 0) throw InvalidInputError("class size must be at least 1");
    sum_r += 1.0 / static_cast<double>(n);
  }
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    const double r = 1.0 / static_cast<double>(sizes[j]);
    out.weights[j] = (1.0 - alpha) + alpha * (r / sum_r);
  }
  return out;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::uint32_t j) const {
  std::uint64_t sum = 0;
  for (std::uint32_t k = 0; k < num_classes; ++k) sum += at(j, k);
  return sum;
}

namespace {

// forward a contiguous range of instances and tally observed vs top-1;
// integer counts keep the merged result independent of the chunking
void tally_range(const Classifier& model, const Dataset& dataset,
                 std::span<const std::uint64_t> ids,
                 const std::unordered_map<std::uint64_t, std::size_t>& index,
                 ConfusionMatrix& local) {
  constexpr std::size_t kChunk = 256;
  const std::uint32_t d = model.config.input_dim;
  for (std::size_t start = 0; start < ids.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, ids.size() - start);
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const Instance& inst = dataset.instances[index.at(ids[start + i])];
      for (std::uint32_t k = 0; k < d; ++k) x(i, k) = inst.features[k];
    }
    auto cache = forward(model, x);
    for (std::size_t i = 0; i < n; ++i) {
      const Instance& inst = dataset.instances[index.at(ids[start + i])];
      const auto top = predict_topk(cache.logits.row(i), 1);
      local.at(inst.observed_label, top[0]) += 1;
    }
  }
}

}  // namespace

ConfusionMatrix confusion_matrix(const Classifier& model, const Dataset& dataset,
                                 std::span<const std::uint64_t> ids,
                                 std::uint32_t threads) {
  if (ids.empty()) throw InvalidInputError("confusion_matrix: empty split");
  if (dataset.num_classes != model.config.num_classes) {
    throw InvalidInputError("dataset classes do not match model");
  }
  const auto index = dataset.id_index();
  ConfusionMatrix result(dataset.num_classes);
  const std::uint32_t t = std::max<std::uint32_t>(
      1, std::min<std::uint32_t>(threads, static_cast<std::uint32_t>(ids.size())));
  if (t == 1) {
    tally_range(model, dataset, ids, index, result);
    return result;
  }
  std::vector<ConfusionMatrix> locals(t, ConfusionMatrix(dataset.num_classes));
  std::vector<std::thread> workers;
  const std::size_t per = (ids.size() + t - 1) / t;
  for (std::uint32_t w = 0; w < t; ++w) {
    const std::size_t lo = std::min(ids.size(), w * per);
    const std::size_t hi = std::min(ids.size(), lo + per);
    workers.emplace_back([&, w, lo, hi] {
      tally_range(model, dataset, ids.subspan(lo, hi - lo), index, locals[w]);
    });
  }
  for (auto& worker : workers) worker.join();
  for (const auto& local : locals) {
    for (std::size_t i = 0; i < result.counts.size(); ++i) {
      result.counts[i] += local.counts[i];
    }
  }
  return result;
}

std::array<std::uint32_t, 4> top_confused(const ConfusionMatrix& m,
                                          std::uint32_t j) {
  if (m.num_classes < 5) {
    throw InvalidInputError("top_confused needs at least 5 classes");
  }
  if (j >= m.num_classes) throw InvalidInputError("class id out of range");
  std::vector<std::uint32_t> order;
  order.reserve(m.num_classes - 1);
  for (std::uint32_t k = 0; k < m.num_classes; ++k) {
    if (k != j) order.push_back(k);
  }
  std::partial_sort(order.begin(), order.begin() + 4, order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (m.at(j, a) != m.at(j, b)) return m.at(j, a) > m.at(j, b);
                      return a < b;
                    });
  return {order[0], order[1], order[2], order[3]};
}

std::vector<double> group_weights_from_sizes(std::span<const std::uint32_t> sizes) {
  if (sizes.empty()) throw InvalidInputError("no group sizes");
  std::uint64_t total = 0;
  for (std::uint32_t n : sizes) total += n;
  if (total == 0) throw InvalidInputError("all groups empty");
  std::vector<double> weights(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    weights[i] = static_cast<double>(sizes[i]) / static_cast<double>(total);
  }
  return weights;
}

ClusterWeights cluster_weights(const Classifier& baseline, const Dataset& dataset,
                               std::span<const std::uint64_t> ids,
                               const ConfusionMatrix& m, std::uint32_t j,
                               Rng& rng) {
  ClusterWeights out;
  out.class_id = j;
  out.confused = top_confused(m, j);

  auto in_pool = [&](std::uint32_t label) {
    if (label == j) return true;
    return std::find(out.confused.begin(), out.confused.end(), label) !=
           out.confused.end();
  };

  const auto index = dataset.id_index();
  std::vector<std::size_t> pooled;
  for (std::uint64_t id : ids) {
    const std::size_t at = index.at(id);
    if (in_pool(dataset.instances[at].observed_label)) pooled.push_back(at);
  }
  if (pooled.size() < 5) {
    throw InvalidInputError("pooled set for class " + std::to_string(j) +
                            " has fewer than 5 instances");
  }

  const std::uint32_t d = baseline.config.input_dim;
  const std::uint32_t h = baseline.config.hidden.back();
  Matrix features(pooled.size(), h);
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < pooled.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, pooled.size() - start);
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const Instance& inst = dataset.instances[pooled[start + i]];
      for (std::uint32_t k = 0; k < d; ++k) x(i, k) = inst.features[k];
    }
    auto cache = forward(baseline, x);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(cache.penultimate().row(i).begin(), h,
                  features.row(start + i).begin());
    }
  }

  auto clusters = kmeans(features, 5, rng);
  std::vector<std::uint32_t> group_sizes(5, 0);
  for (std::uint32_t a : clusters.assignments) group_sizes[a] += 1;
  out.group_weights = group_weights_from_sizes(group_sizes);

  for (std::size_t i = 0; i < pooled.size(); ++i) {
    const Instance& inst = dataset.instances[pooled[i]];
    if (inst.observed_label == j) {
      out.member_weight.emplace(inst.id,
                                out.group_weights[clusters.assignments[i]]);
    }
  }
  return out;
}

ConfidenceModel init_confidence(const ConfidenceConfig& config,
                                std::uint32_t penultimate_dim,
                                std::uint32_t vocab, Rng& rng) {
  if (vocab < 1) throw InvalidInputError("vocabulary must be non-empty");
  if (config.token_dim < 1 || config.embed_hidden < 1 || config.embed_dim < 1) {
    throw ConfigError("confidence dims must be at least 1");
  }
  ConfidenceModel model;
  model.config = config;
  model.embedding = Matrix(vocab, config.token_dim);
  const double embed_scale = 1.0 / std::sqrt(double(config.token_dim));
  for (std::size_t i = 0; i < model.embedding.rows(); ++i) {
    for (std::size_t k = 0; k < model.embedding.cols(); ++k) {
      model.embedding(i, k) = rng.normal() * embed_scale;
    }
  }
  auto init_affine = [&](Affine& a, std::uint32_t out_dim, std::uint32_t in_dim) {
    a = Affine(out_dim, in_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (std::size_t i = 0; i < a.w.rows(); ++i) {
      for (std::size_t k = 0; k < a.w.cols(); ++k) {
        a.w(i, k) = rng.normal() * scale;
      }
    }
  };
  init_affine(model.img1, config.embed_hidden, penultimate_dim);
  init_affine(model.img2, config.embed_dim, config.embed_hidden);
  init_affine(model.txt1, config.embed_hidden, config.token_dim);
  init_affine(model.txt2, config.embed_dim, config.embed_hidden);
  return model;
}

namespace {

std::vector<const Affine*> tower_layers(const ConfidenceModel& m) {
  return {&m.img1, &m.img2, &m.txt1, &m.txt2};
}

std::vector<Affine*> tower_layers(ConfidenceModel& m) {
  return {&m.img1, &m.img2, &m.txt1, &m.txt2};
}

std::vector<double> pool_tokens(const ConfidenceModel& model,
                                std::span<const std::uint32_t> token_ids) {
  if (token_ids.empty()) throw InvalidInputError("token_ids must be non-empty");
  std::vector<double> pooled(model.embedding.cols(), 0.0);
  for (std::uint32_t t : token_ids) {
    if (t >= model.embedding.rows()) {
      throw InvalidInputError("token id out of vocabulary");
    }
    for (std::size_t k = 0; k < pooled.size(); ++k) {
      pooled[k] += model.embedding(t, k);
    }
  }
  const double inv = 1.0 / static_cast<double>(token_ids.size());
  for (double& v : pooled) v *= inv;
  return pooled;
}

struct TowerCache {
  std::vector<double> hidden;  // post-tanh
  std::vector<double> out;
};

TowerCache tower_forward(const Affine& l1, const Affine& l2,
                         std::span<const double> input) {
  if (input.size() != l1.w.cols()) {
    throw InvalidInputError("projection input dim mismatch");
  }
  TowerCache cache;
  cache.hidden.resize(l1.w.rows());
  for (std::size_t o = 0; o < cache.hidden.size(); ++o) {
    double acc = l1.b[o];
    for (std::size_t k = 0; k < input.size(); ++k) acc += l1.w(o, k) * input[k];
    cache.hidden[o] = std::tanh(acc);
  }
  cache.out.resize(l2.w.rows());
  for (std::size_t o = 0; o < cache.out.size(); ++o) {
    double acc = l2.b[o];
    for (std::size_t k = 0; k < cache.hidden.size(); ++k) {
      acc += l2.w(o, k) * cache.hidden[k];
    }
    cache.out[o] = acc;
  }
  return cache;
}

// dW/db accumulation for one tower; returns gradient w.r.t. the tower input
std::vector<double> tower_backward(const Affine& l1, const Affine& l2,
                                   std::span<const double> input,
                                   const TowerCache& cache,
                                   std::span<const double> dout, Affine& g1,
                                   Affine& g2) {
  std::vector<double> dh(cache.hidden.size(), 0.0);
  for (std::size_t o = 0; o < dout.size(); ++o) {
    const double g = dout[o];
    if (g == 0.0) continue;
    g2.b[o] += g;
    for (std::size_t k = 0; k < cache.hidden.size(); ++k) {
      g2.w(o, k) += g * cache.hidden[k];
      dh[k] += g * l2.w(o, k);
    }
  }
  std::vector<double> din(input.size(), 0.0);
  for (std::size_t o = 0; o < dh.size(); ++o) {
    const double a = cache.hidden[o];
    const double dz = dh[o] * (1.0 - a * a);
    if (dz == 0.0) continue;
    g1.b[o] += dz;
    for (std::size_t k = 0; k < input.size(); ++k) {
      g1.w(o, k) += dz * input[k];
      din[k] += dz * l1.w(o, k);
    }
  }
  return din;
}

// d cos(a,b) / da = b / (|a||b|) - cos * a / |a|^2
void cosine_backward(std::span<const double> a, std::span<const double> b,
                     double cos_ab, double scale, std::span<double> da) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  for (std::size_t k = 0; k < a.size(); ++k) {
    da[k] += scale * (b[k] / (na * nb) - cos_ab * a[k] / (na * na));
  }
}

}  // namespace

std::vector<double> flatten(const ConfidenceModel& model) {
  std::vector<double> out(model.embedding.data().begin(),
                          model.embedding.data().end());
  for (const Affine* layer : tower_layers(model)) {
    out.insert(out.end(), layer->w.data().begin(), layer->w.data().end());
    out.insert(out.end(), layer->b.begin(), layer->b.end());
  }
  return out;
}

void unflatten(ConfidenceModel& model, std::span<const double> params) {
  std::size_t pos = 0;
  auto take = [&](std::vector<double>& dst) {
    if (pos + dst.size() > params.size()) {
      throw InvalidInputError("parameter vector too short");
    }
    std::copy_n(params.begin() + pos, dst.size(), dst.begin());
    pos += dst.size();
  };
  take(model.embedding.data());
  for (Affine* layer : tower_layers(model)) {
    take(layer->w.data());
    take(layer->b);
  }
  if (pos != params.size()) throw InvalidInputError("parameter vector too long");
}

std::vector<double> project_image(const ConfidenceModel& model,
                                  std::span<const double> penultimate) {
  return tower_forward(model.img1, model.img2, penultimate).out;
}

std::vector<double> project_text(const ConfidenceModel& model,
                                 std::span<const std::uint32_t> token_ids) {
  const auto pooled = pool_tokens(model, token_ids);
  return tower_forward(model.txt1, model.txt2, pooled).out;
}

std::pair<double, std::vector<double>> confidence_pair_grad(
    const ConfidenceModel& model, std::span<const double> penultimate,
    std::span<const std::uint32_t> pos_tokens,
    std::span<const std::uint32_t> neg_tokens) {
  const auto pooled_pos = pool_tokens(model, pos_tokens);
  const auto pooled_neg = pool_tokens(model, neg_tokens);
  const TowerCache img = tower_forward(model.img1, model.img2, penultimate);
  const TowerCache pos = tower_forward(model.txt1, model.txt2, pooled_pos);
  const TowerCache neg = tower_forward(model.txt1, model.txt2, pooled_neg);

  const double cos_pos = cosine(img.out, pos.out);
  const double cos_neg = cosine(img.out, neg.out);
  const double loss = cos_neg - cos_pos;

  ConfidenceModel grads = model;
  std::fill(grads.embedding.data().begin(), grads.embedding.data().end(), 0.0);
  for (Affine* layer : tower_layers(grads)) {
    std::fill(layer->w.data().begin(), layer->w.data().end(), 0.0);
    std::fill(layer->b.begin(), layer->b.end(), 0.0);
  }

  const std::size_t e = img.out.size();
  std::vector<double> dvi(e, 0.0), dvp(e, 0.0), dvn(e, 0.0);
  cosine_backward(img.out, neg.out, cos_neg, 1.0, dvi);
  cosine_backward(img.out, pos.out, cos_pos, -1.0, dvi);
  cosine_backward(pos.out, img.out, cos_pos, -1.0, dvp);
  cosine_backward(neg.out, img.out, cos_neg, 1.0, dvn);

  tower_backward(model.img1, model.img2, penultimate, img, dvi, grads.img1,
                 grads.img2);
  const auto dpooled_pos = tower_backward(model.txt1, model.txt2, pooled_pos,
                                          pos, dvp, grads.txt1, grads.txt2);
  const auto dpooled_neg = tower_backward(model.txt1, model.txt2, pooled_neg,
                                          neg, dvn, grads.txt1, grads.txt2);

  const double inv_pos = 1.0 / static_cast<double>(pos_tokens.size());
  for (std::uint32_t t : pos_tokens) {
    for (std::size_t k = 0; k < dpooled_pos.size(); ++k) {
      grads.embedding(t, k) += dpooled_pos[k] * inv_pos;
    }
  }
  const double inv_neg = 1.0 / static_cast<double>(neg_tokens.size());
  for (std::uint32_t t : neg_tokens) {
    for (std::size_t k = 0; k < dpooled_neg.size(); ++k) {
      grads.embedding(t, k) += dpooled_neg[k] * inv_neg;
    }
  }
  return {loss, flatten(grads)};
}

double confidence_pair_step(ConfidenceModel& model,
                            std::span<const double> penultimate,
                            std::span<const std::uint32_t> pos_tokens,
                            std::span<const std::uint32_t> neg_tokens,
                            double lr) {
  auto [loss, grad] = confidence_pair_grad(model, penultimate, pos_tokens,
                                           neg_tokens);
  auto params = flatten(model);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
  unflatten(model, params);
  return loss;
}

ConfidenceModel train_confidence(const Classifier& baseline,
                                 const Dataset& dataset,
                                 std::span<const std::uint64_t> train_ids,
                                 const ConfidenceConfig& config, Rng& rng,
                                 std::vector<std::string>* warnings) {
  if (dataset.num_classes < 2) {
    throw InvalidInputError("confidence training requires at least 2 classes");
  }
  if (train_ids.empty()) throw InvalidInputError("empty train split");
  std::uint32_t vocab = 0;
  for (const ClassMeta& cls : dataset.classes) {
    if (cls.token_ids.empty()) {
      throw InvalidInputError("class " + std::to_string(cls.id) +
                              " has no query tokens");
    }
    for (std::uint32_t t : cls.token_ids) vocab = std::max(vocab, t + 1);
  }

  const auto index = dataset.id_index();
  std::vector<std::vector<std::size_t>> members(dataset.num_classes);
  for (std::uint64_t id : train_ids) {
    const std::size_t at = index.at(id);
    members[dataset.instances[at].observed_label].push_back(at);
  }

  // positives: best-ranked members per class
  struct PairRef {
    std::uint32_t cls;
    std::size_t row;  // into the feature matrix below
  };
  std::vector<PairRef> pairs;
  std::vector<std::size_t> positive_rows;
  for (std::uint32_t j = 0; j < dataset.num_classes; ++j) {
    auto& ids = members[j];
    if (ids.empty()) {
      if (warnings) {
        warnings->push_back("class " + std::to_string(j) +
                            " has no train instances for confidence training");
      }
      continue;
    }
    std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
      return dataset.instances[a].source_rank < dataset.instances[b].source_rank;
    });
    const std::size_t take = std::min<std::size_t>(config.top_rank, ids.size());
    if (take < config.top_rank && warnings) {
      warnings->push_back("class " + std::to_string(j) + " has only " +
                          std::to_string(ids.size()) +
                          " instances for confidence training");
    }
    for (std::size_t i = 0; i < take; ++i) {
      pairs.push_back({j, positive_rows.size()});
      positive_rows.push_back(ids[i]);
    }
  }
  if (pairs.empty()) throw InvalidInputError("no positive pairs available");

  // frozen-backbone features of every positive
  const std::uint32_t d = baseline.config.input_dim;
  const std::uint32_t h = baseline.config.hidden.back();
  Matrix features(positive_rows.size(), h);
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < positive_rows.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, positive_rows.size() - start);
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const Instance& inst = dataset.instances[positive_rows[start + i]];
      for (std::uint32_t k = 0; k < d; ++k) x(i, k) = inst.features[k];
    }
    auto cache = forward(baseline, x);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(cache.penultimate().row(i).begin(), h,
                  features.row(start + i).begin());
    }
  }

  ConfidenceModel model = init_confidence(config, h, vocab, rng);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t at : order) {
      const PairRef& pair = pairs[at];
      // negatives resampled every epoch, never the pair's own class
      std::uint32_t neg = static_cast<std::uint32_t>(
          rng.below(dataset.num_classes - 1));
      if (neg >= pair.cls) ++neg;
      confidence_pair_step(model, features.row(pair.row),
                           dataset.classes[pair.cls].token_ids,
                           dataset.classes[neg].token_ids, config.lr);
    }
  }
  return model;
}

double raw_confidence(const ConfidenceModel& model,
                      std::span<const double> penultimate,
                      std::span<const std::uint32_t> token_ids) {
  return cosine(project_image(model, penultimate),
                project_text(model, token_ids));
}

double instance_confidence(const ConfidenceModel& model,
                           std::span<const double> penultimate,
                           std::span<const std::uint32_t> token_ids) {
  return std::clamp(raw_confidence(model, penultimate, token_ids), 0.0, 1.0);
}

std::vector<Target> smooth_targets(std::span<const std::uint32_t> observed,
                                   std::span<const std::uint32_t> predicted,
                                   double beta) {
  if (observed.size() != predicted.size()) {
    throw InvalidInputError("smooth_targets: size mismatch");
  }
  if (!(beta >= 0.0 && beta <= 1.0)) {
    throw InvalidInputError("beta must be in [0,1]");
  }
  std::vector<Target> out(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) {
    out[i] = Target{observed[i], predicted[i], beta};
  }
  return out;
}

WeightLedger combine(std::span<const std::uint64_t> ids,
                     std::span<const double> w_class,
                     std::span<const double> w_cluster,
                     std::span<const double> w_confidence, bool renormalize) {
  const std::size_t n = ids.size();
  if (n == 0) throw InvalidInputError("combine: empty batch");
  if (w_class.size() != n || w_cluster.size() != n || w_confidence.size() != n) {
    throw InvalidInputError("combine: component size mismatch");
  }
  WeightLedger ledger;
  ledger.ids.assign(ids.begin(), ids.end());
  ledger.w_class.assign(w_class.begin(), w_class.end());
  ledger.w_cluster.assign(w_cluster.begin(), w_cluster.end());
  ledger.w_confidence.assign(w_confidence.begin(), w_confidence.end());
  ledger.combined.resize(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (double v : {w_class[i], w_cluster[i], w_confidence[i]}) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InvalidInputError("weights must be non-negative");
      }
    }
    ledger.combined[i] = w_class[i] * w_cluster[i] * w_confidence[i];
    sum += ledger.combined[i];
  }
  if (renormalize) {
    const double mean = sum / static_cast<double>(n);
    if (mean == 0.0) {
      throw DegenerateBatchError("all combined weights are zero in batch");
    }
    ledger.normalization = mean;
    for (double& v : ledger.combined) v /= mean;
  }
  return ledger;
}

std::string ledger_csv(const WeightLedger& ledger) {
  std::string out = "id,w_class,w_cluster,w_confidence,combined\n";
  char buf[160];
  for (std::size_t i = 0; i < ledger.ids.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<unsigned long long>(ledger.ids[i]),
                  ledger.w_class[i], ledger.w_cluster[i],
                  ledger.w_confidence[i], ledger.combined[i]);
    out += buf;
  }
  return out;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "observed";
  char buf[32];
  for (std::uint32_t k = 0; k < m.num_classes; ++k) {
    std::snprintf(buf, sizeof buf, ",%u", k);
    out += buf;
  }
  out += '\n';
  for (std::uint32_t j = 0; j < m.num_classes; ++j) {
    std::snprintf(buf, sizeof buf, "%u", j);
    out += buf;
    for (std::uint32_t k = 0; k < m.num_classes; ++k) {
      std::snprintf(buf, sizeof buf, ",%llu",
                    static_cast<unsigned long long>(m.at(j, k)));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace urnet
