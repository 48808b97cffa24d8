#include "urnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "urnet/bytes.hpp"
#include "urnet/errors.hpp"
#include "urnet/numerics.hpp"

namespace urnet {

namespace {

constexpr std::string_view kCheckpointMagic = "URNCK1";

void validate_config(const ClassifierConfig& config) {
  if (config.input_dim < 1) throw ConfigError("input_dim must be at least 1");
  if (config.hidden.empty()) {
    throw ConfigError("hidden must name at least one layer width");
  }
  for (std::uint32_t h : config.hidden) {
    if (h < 1) throw ConfigError("hidden widths must be at least 1");
  }
  if (config.num_classes < 1) throw ConfigError("num_classes must be at least 1");
  if (config.bag_hidden < 1) throw ConfigError("bag_hidden must be at least 1");
  if (config.bag_size < 1) throw ConfigError("bag_size must be at least 1");
}

// y = x W^T + b, row per batch element
Matrix affine_apply(const Affine& layer, const Matrix& x) {
  const std::size_t n = x.rows();
  const std::size_t out = layer.w.rows();
  const std::size_t in = layer.w.cols();
  Matrix y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = layer.b[o];
      for (std::size_t k = 0; k < in; ++k) acc += layer.w(o, k) * x(i, k);
      y(i, o) = acc;
    }
  }
  return y;
}

void tanh_inplace(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = std::tanh(m(i, j));
  }
}

// shifted log-softmax of one logits row; returns log(sum exp(z - m)) users
// need for probabilities
double log_softmax_row(std::span<const double> z, std::vector<double>& lp) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) {
    if (!std::isfinite(v)) throw InvalidInputError("non-finite logit");
    m = std::max(m, v);
  }
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double log_sum = std::log(sum);
  lp.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) lp[j] = (z[j] - m) - log_sum;
  return log_sum;
}

// dW += gz^T x, db += column sums of gz, returns gz W
Matrix affine_backward(const Affine& layer, const Matrix& x, const Matrix& gz,
                       Affine& grad) {
  const std::size_t n = x.rows();
  const std::size_t out = layer.w.rows();
  const std::size_t in = layer.w.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gz(i, o);
      if (g == 0.0) continue;
      grad.b[o] += g;
      for (std::size_t k = 0; k < in; ++k) grad.w(o, k) += g * x(i, k);
    }
  }
  Matrix dx(n, in);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gz(i, o);
      if (g == 0.0) continue;
      for (std::size_t k = 0; k < in; ++k) dx(i, k) += g * layer.w(o, k);
    }
  }
  return dx;
}

// grads layer indices follow all_layers order
void backbone_backward(const Classifier& model, const ForwardCache& cache,
                       Matrix dpenultimate, Gradients& grads) {
  Matrix g = std::move(dpenultimate);
  for (std::size_t l = model.backbone.size(); l-- > 0;) {
    const Matrix& a = cache.activations[l];
    Matrix gz(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        gz(i, j) = g(i, j) * (1.0 - a(i, j) * a(i, j));
      }
    }
    const Matrix& input = l == 0 ? cache.input : cache.activations[l - 1];
    g = affine_backward(model.backbone[l], input, gz, grads.layers[l]);
  }
}

}  // namespace

Classifier init_classifier(const ClassifierConfig& config, Rng& rng) {
  validate_config(config);
  Classifier model;
  model.config = config;
  std::uint32_t in = config.input_dim;
  for (std::uint32_t h : config.hidden) {
    model.backbone.emplace_back(h, in);
    in = h;
  }
  const std::uint32_t penultimate = config.hidden.back();
  model.head = Affine(config.num_classes, penultimate);
  model.bag_score_hidden = Affine(config.bag_hidden, penultimate);
  model.bag_score_out = Affine(1, config.bag_hidden);
  model.bag_head = Affine(config.num_classes, penultimate);

  for (Affine* layer : all_layers(model)) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer->w.cols()));
    for (std::size_t i = 0; i < layer->w.rows(); ++i) {
      for (std::size_t j = 0; j < layer->w.cols(); ++j) {
        layer->w(i, j) = rng.normal() * scale;
      }
    }
  }
  round_to_checkpoint_precision(model);
  return model;
}

void round_to_checkpoint_precision(Classifier& model) {
  for (Affine* layer : all_layers(model)) {
    for (std::size_t i = 0; i < layer->w.rows(); ++i) {
      for (std::size_t j = 0; j < layer->w.cols(); ++j) {
        layer->w(i, j) = static_cast<double>(static_cast<float>(layer->w(i, j)));
      }
    }
    for (double& v : layer->b) v = static_cast<double>(static_cast<float>(v));
  }
}

std::vector<Affine*> all_layers(Classifier& model) {
  std::vector<Affine*> layers;
  for (Affine& a : model.backbone) layers.push_back(&a);
  layers.push_back(&model.head);
  layers.push_back(&model.bag_score_hidden);
  layers.push_back(&model.bag_score_out);
  layers.push_back(&model.bag_head);
  return layers;
}

std::vector<const Affine*> all_layers(const Classifier& model) {
  std::vector<const Affine*> layers;
  for (const Affine& a : model.backbone) layers.push_back(&a);
  layers.push_back(&model.head);
  layers.push_back(&model.bag_score_hidden);
  layers.push_back(&model.bag_score_out);
  layers.push_back(&model.bag_head);
  return layers;
}

Gradients::Gradients(const Classifier& model) {
  for (const Affine* layer : all_layers(model)) {
    layers.emplace_back(static_cast<std::uint32_t>(layer->w.rows()),
                        static_cast<std::uint32_t>(layer->w.cols()));
  }
}

void Gradients::zero() {
  for (Affine& layer : layers) {
    std::fill(layer.w.data().begin(), layer.w.data().end(), 0.0);
    std::fill(layer.b.begin(), layer.b.end(), 0.0);
  }
}

std::vector<double> flatten(const Classifier& model) {
  std::vector<double> out;
  for (const Affine* layer : all_layers(model)) {
    out.insert(out.end(), layer->w.data().begin(), layer->w.data().end());
    out.insert(out.end(), layer->b.begin(), layer->b.end());
  }
  return out;
}

void unflatten(Classifier& model, std::span<const double> params) {
  std::size_t pos = 0;
  for (Affine* layer : all_layers(model)) {
    const std::size_t nw = layer->w.data().size();
    if (pos + nw + layer->b.size() > params.size()) {
      throw InvalidInputError("parameter vector too short");
    }
    std::copy_n(params.begin() + pos, nw, layer->w.data().begin());
    pos += nw;
    std::copy_n(params.begin() + pos, layer->b.size(), layer->b.begin());
    pos += layer->b.size();
  }
  if (pos != params.size()) {
    throw InvalidInputError("parameter vector too long");
  }
}

std::vector<double> flatten(const Gradients& grads) {
  std::vector<double> out;
  for (const Affine& layer : grads.layers) {
    out.insert(out.end(), layer.w.data().begin(), layer.w.data().end());
    out.insert(out.end(), layer.b.begin(), layer.b.end());
  }
  return out;
}

ForwardCache forward(const Classifier& model, const Matrix& features) {
  if (features.cols() != model.config.input_dim) {
    throw InvalidInputError("feature dim " + std::to_string(features.cols()) +
                            " does not match model input dim " +
                            std::to_string(model.config.input_dim));
  }
  ForwardCache cache;
  cache.input = features;
  const Matrix* x = &cache.input;
  for (const Affine& layer : model.backbone) {
    Matrix a = affine_apply(layer, *x);
    tanh_inplace(a);
    cache.activations.push_back(std::move(a));
    x = &cache.activations.back();
  }
  cache.logits = affine_apply(model.head, *x);
  return cache;
}

InstanceLossResult weighted_ce(const Matrix& logits,
                               std::span<const Target> targets,
                               std::span<const double> weights) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  if (n == 0) throw InvalidInputError("weighted_ce: empty batch");
  if (targets.size() != n || weights.size() != n) {
    throw InvalidInputError("weighted_ce: batch size mismatch");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvalidInputError("weights must be non-negative");
    }
  }
  InstanceLossResult result;
  result.dlogits = Matrix(n, c);
  std::vector<double> lp;
  double loss_sum = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Target& t = targets[i];
    if (t.label >= c || t.predicted >= c) {
      throw InvalidInputError("target class id out of range");
    }
    if (!(t.beta >= 0.0 && t.beta <= 1.0)) {
      throw InvalidInputError("beta must be in [0,1]");
    }
    const double w = weights[i];
    if (w == 0.0) continue;
    log_softmax_row(logits.row(i), lp);
    const bool single = t.beta == 1.0 || t.predicted == t.label;
    const double base = single
        ? -lp[t.label]
        : -(t.beta * lp[t.label] + (1.0 - t.beta) * lp[t.predicted]);
    loss_sum += w * base;
    const double scale = w * inv_n;
    for (std::size_t j = 0; j < c; ++j) {
      double target_mass = 0.0;
      if (single) {
        target_mass = j == t.label ? 1.0 : 0.0;
      } else {
        if (j == t.label) target_mass += t.beta;
        if (j == t.predicted) target_mass += 1.0 - t.beta;
      }
      result.dlogits(i, j) = scale * (std::exp(lp[j]) - target_mass);
    }
  }
  result.loss = loss_sum * inv_n;
  return result;
}

BagForward bag_forward(const Classifier& model, const Matrix& bag_penultimate) {
  if (bag_penultimate.rows() != model.config.bag_size) {
    throw InvalidInputError("bag of " + std::to_string(bag_penultimate.rows()) +
                            " instances, expected " +
                            std::to_string(model.config.bag_size));
  }
  if (bag_penultimate.cols() != model.config.hidden.back()) {
    throw InvalidInputError("bag feature dim mismatch");
  }
  BagForward out;
  out.score_hidden = affine_apply(model.bag_score_hidden, bag_penultimate);
  tanh_inplace(out.score_hidden);
  Matrix score = affine_apply(model.bag_score_out, out.score_hidden);
  std::vector<double> score_logits(score.rows());
  for (std::size_t b = 0; b < score.rows(); ++b) score_logits[b] = score(b, 0);
  out.saliency = softmax(score_logits);

  const std::size_t h = bag_penultimate.cols();
  out.bag_features.assign(h, 0.0);
  for (std::size_t b = 0; b < bag_penultimate.rows(); ++b) {
    for (std::size_t k = 0; k < h; ++k) {
      out.bag_features[k] += out.saliency[b] * bag_penultimate(b, k);
    }
  }
  out.bag_logits.resize(model.config.num_classes);
  for (std::size_t o = 0; o < out.bag_logits.size(); ++o) {
    double acc = model.bag_head.b[o];
    for (std::size_t k = 0; k < h; ++k) {
      acc += model.bag_head.w(o, k) * out.bag_features[k];
    }
    out.bag_logits[o] = acc;
  }
  return out;
}

namespace {

// backward through FC4, the saliency softmax, FC3 and FC2 of one bag;
// returns the gradient w.r.t. the bag's penultimate rows
Matrix bag_backward(const Classifier& model, const Matrix& bag_penultimate,
                    const BagForward& fwd, std::span<const double> dbag_logits,
                    Gradients& grads) {
  const std::size_t nb = bag_penultimate.rows();
  const std::size_t h = bag_penultimate.cols();
  const std::size_t layer_base = model.backbone.size();
  Affine& g_head = grads.layers[layer_base + 3];      // bag_head
  Affine& g_hid = grads.layers[layer_base + 1];       // bag_score_hidden
  Affine& g_out = grads.layers[layer_base + 2];       // bag_score_out

  std::vector<double> dbag_features(h, 0.0);
  for (std::size_t o = 0; o < dbag_logits.size(); ++o) {
    const double g = dbag_logits[o];
    if (g == 0.0) continue;
    g_head.b[o] += g;
    for (std::size_t k = 0; k < h; ++k) {
      g_head.w(o, k) += g * fwd.bag_features[k];
      dbag_features[k] += g * model.bag_head.w(o, k);
    }
  }

  Matrix dpen(nb, h);
  std::vector<double> dsal(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
      acc += dbag_features[k] * bag_penultimate(b, k);
      dpen(b, k) = fwd.saliency[b] * dbag_features[k];
    }
    dsal[b] = acc;
  }

  // softmax jacobian: du_b = S_b (dS_b - sum_c dS_c S_c)
  double mix = 0.0;
  for (std::size_t b = 0; b < nb; ++b) mix += dsal[b] * fwd.saliency[b];
  for (std::size_t b = 0; b < nb; ++b) {
    const double du = fwd.saliency[b] * (dsal[b] - mix);
    g_out.b[0] += du;
    for (std::size_t a = 0; a < fwd.score_hidden.cols(); ++a) {
      g_out.w(0, a) += du * fwd.score_hidden(b, a);
      const double dh = du * model.bag_score_out.w(0, a);
      const double act = fwd.score_hidden(b, a);
      const double dz = dh * (1.0 - act * act);
      g_hid.b[a] += dz;
      for (std::size_t k = 0; k < h; ++k) {
        g_hid.w(a, k) += dz * bag_penultimate(b, k);
        dpen(b, k) += dz * model.bag_score_hidden.w(a, k);
      }
    }
  }
  return dpen;
}

}  // namespace

LossBreakdown total_loss(const Classifier& model,
                         const Matrix& batch_features,
                         std::span<const Target> targets,
                         std::span<const double> weights,
                         const BagBatch* bags,
                         double lambda_bag,
                         Gradients& grads) {
  if (grads.layers.size() != all_layers(model).size()) {
    throw InvalidInputError("gradient buffer does not match model");
  }
  LossBreakdown breakdown;

  ForwardCache cache = forward(model, batch_features);
  InstanceLossResult inst = weighted_ce(cache.logits, targets, weights);
  breakdown.instance_loss = inst.loss;
  Matrix dpen = affine_backward(model.head, cache.penultimate(), inst.dlogits,
                                grads.layers[model.backbone.size()]);
  backbone_backward(model, cache, std::move(dpen), grads);

  const bool use_bags =
      lambda_bag != 0.0 && bags != nullptr && !bags->labels.empty();
  if (use_bags) {
    const std::size_t nb = model.config.bag_size;
    const std::size_t num_bags = bags->labels.size();
    if (bags->features.rows() != num_bags * nb) {
      throw InvalidInputError("bag batch shape mismatch");
    }
    ForwardCache bag_cache = forward(model, bags->features);
    const Matrix& pen = bag_cache.penultimate();
    const std::size_t h = pen.cols();

    std::vector<BagForward> fwds;
    fwds.reserve(num_bags);
    Matrix bag_logits(num_bags, model.config.num_classes);
    std::vector<Target> bag_targets(num_bags);
    std::vector<double> ones(num_bags, 1.0);
    Matrix bag_pen(nb, h);
    for (std::size_t g = 0; g < num_bags; ++g) {
      for (std::size_t b = 0; b < nb; ++b) {
        std::copy_n(pen.row(g * nb + b).begin(), h, bag_pen.row(b).begin());
      }
      fwds.push_back(bag_forward(model, bag_pen));
      std::copy_n(fwds.back().bag_logits.begin(), model.config.num_classes,
                  bag_logits.row(g).begin());
      bag_targets[g] = Target{bags->labels[g], bags->labels[g], 1.0};
    }
    InstanceLossResult bag_ce = weighted_ce(bag_logits, bag_targets, ones);
    breakdown.bag_loss = bag_ce.loss;

    Matrix dpen_bags(num_bags * nb, h);
    std::vector<double> dbag_logits(model.config.num_classes);
    for (std::size_t g = 0; g < num_bags; ++g) {
      for (std::size_t j = 0; j < dbag_logits.size(); ++j) {
        dbag_logits[j] = lambda_bag * bag_ce.dlogits(g, j);
      }
      for (std::size_t b = 0; b < nb; ++b) {
        std::copy_n(pen.row(g * nb + b).begin(), h, bag_pen.row(b).begin());
      }
      Matrix dpen_one = bag_backward(model, bag_pen, fwds[g], dbag_logits, grads);
      for (std::size_t b = 0; b < nb; ++b) {
        std::copy_n(dpen_one.row(b).begin(), h, dpen_bags.row(g * nb + b).begin());
      }
    }
    backbone_backward(model, bag_cache, std::move(dpen_bags), grads);
  }

  breakdown.total = use_bags
      ? breakdown.instance_loss + lambda_bag * breakdown.bag_loss
      : breakdown.instance_loss;
  return breakdown;
}

std::vector<std::uint32_t> predict_topk(std::span<const double> logits,
                                        std::uint32_t k) {
  if (k < 1 || k > logits.size()) {
    throw InvalidInputError("k must be in [1, C]");
  }
  std::vector<std::uint32_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0u);
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });
  order.resize(k);
  return order;
}

std::vector<std::uint8_t> serialize_checkpoint(const Classifier& model) {
  bytes::Writer w;
  w.magic(kCheckpointMagic);
  w.u32(model.config.input_dim);
  w.u32(static_cast<std::uint32_t>(model.config.hidden.size()));
  for (std::uint32_t h : model.config.hidden) w.u32(h);
  w.u32(model.config.num_classes);
  w.u32(model.config.bag_hidden);
  w.u32(model.config.bag_size);
  for (const Affine* layer : all_layers(model)) {
    w.u32(static_cast<std::uint32_t>(layer->w.rows()));
    w.u32(static_cast<std::uint32_t>(layer->w.cols()));
    for (double v : layer->w.data()) w.f32(static_cast<float>(v));
    for (double v : layer->b) w.f32(static_cast<float>(v));
  }
  return std::move(w.buf);
}

Classifier deserialize_checkpoint(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  r.magic(kCheckpointMagic);

  ClassifierConfig config;
  std::size_t at = r.offset();
  config.input_dim = r.u32();
  const std::uint32_t n_hidden = r.u32();
  config.hidden.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) config.hidden.push_back(r.u32());
  config.num_classes = r.u32();
  config.bag_hidden = r.u32();
  config.bag_size = r.u32();
  try {
    validate_config(config);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad config block: ") + e.what(), at);
  }

  Classifier model;
  model.config = config;
  std::uint32_t in = config.input_dim;
  for (std::uint32_t h : config.hidden) {
    model.backbone.emplace_back(h, in);
    in = h;
  }
  const std::uint32_t penultimate = config.hidden.back();
  model.head = Affine(config.num_classes, penultimate);
  model.bag_score_hidden = Affine(config.bag_hidden, penultimate);
  model.bag_score_out = Affine(1, config.bag_hidden);
  model.bag_head = Affine(config.num_classes, penultimate);

  for (Affine* layer : all_layers(model)) {
    at = r.offset();
    const std::uint32_t out_dim = r.u32();
    const std::uint32_t in_dim = r.u32();
    if (out_dim != layer->w.rows() || in_dim != layer->w.cols()) {
      throw FormatError("layer shape does not match config", at);
    }
    if (std::uint64_t{out_dim} * in_dim * 4 + out_dim * 4 > r.remaining()) {
      throw FormatError("parameter block exceeds file size", r.offset());
    }
    for (double& v : layer->w.data()) {
      at = r.offset();
      v = static_cast<double>(r.f32());
      if (!std::isfinite(v)) throw FormatError("non-finite parameter", at);
    }
    for (double& v : layer->b) {
      at = r.offset();
      v = static_cast<double>(r.f32());
      if (!std::isfinite(v)) throw FormatError("non-finite parameter", at);
    }
  }
  r.expect_eof();
  return model;
}

void save_checkpoint(const Classifier& model, const std::string& path) {
  bytes::write_file(path, serialize_checkpoint(model));
}

Classifier load_checkpoint(const std::string& path) {
  auto data = bytes::read_file(path);
  return deserialize_checkpoint(data);
}

}  // namespace urnet
