#pragma once

// Feed-forward classifier with a penultimate feature layer, a classification
// head, and a bag-attention branch that pools three same-class instances by a
// learned saliency softmax. All gradients are hand-derived; tanh keeps the
// losses smooth enough for central-difference checks.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "urnet/matrix.hpp"
#include "urnet/rng.hpp"

namespace urnet {

struct ClassifierConfig {
  std::uint32_t input_dim = 16;
  std::vector<std::uint32_t> hidden = {64, 64};  // last entry is the penultimate dim
  std::uint32_t num_classes = 10;
  std::uint32_t bag_hidden = 32;  // saliency scorer hidden width
  std::uint32_t bag_size = 3;     // instances pooled per bag

  bool operator==(const ClassifierConfig&) const = default;
};

struct Affine {
  Matrix w;               // out x in
  std::vector<double> b;  // out

  Affine() = default;
  Affine(std::uint32_t out, std::uint32_t in) : w(out, in), b(out, 0.0) {}

  bool operator==(const Affine&) const = default;
};

struct Classifier {
  ClassifierConfig config;
  std::vector<Affine> backbone;  // affine + tanh each
  Affine head;                   // H -> C
  Affine bag_score_hidden;       // H -> A
  Affine bag_score_out;          // A -> 1
  Affine bag_head;               // H -> C

  bool operator==(const Classifier&) const = default;
};

Classifier init_classifier(const ClassifierConfig& config, Rng& rng);

// Snaps every parameter to its 32-bit stored value so that what is in memory
// equals what a checkpoint round-trips.
void round_to_checkpoint_precision(Classifier& model);

// fixed layer order: backbone..., head, bag_score_hidden, bag_score_out, bag_head
std::vector<Affine*> all_layers(Classifier& model);
std::vector<const Affine*> all_layers(const Classifier& model);

struct Gradients {
  std::vector<Affine> layers;  // same order/shapes as all_layers

  Gradients() = default;
  explicit Gradients(const Classifier& model);
  void zero();
};

std::vector<double> flatten(const Classifier& model);
void unflatten(Classifier& model, std::span<const double> params);
std::vector<double> flatten(const Gradients& grads);

struct ForwardCache {
  Matrix input;                     // batch x D
  std::vector<Matrix> activations;  // post-tanh per backbone layer
  Matrix logits;                    // batch x C

  const Matrix& penultimate() const { return activations.back(); }
};

ForwardCache forward(const Classifier& model, const Matrix& features);

// Instance-loss target: mass beta on the observed label and 1-beta on the
// baseline's prediction. beta = 1 or predicted == label takes the plain
// one-hot path, so the unsmoothed loss is the identical computation.
struct Target {
  std::uint32_t label = 0;
  std::uint32_t predicted = 0;
  double beta = 1.0;
};

struct InstanceLossResult {
  double loss = 0.0;  // mean over the batch
  Matrix dlogits;     // batch x C, gradient of the mean
};

InstanceLossResult weighted_ce(const Matrix& logits,
                               std::span<const Target> targets,
                               std::span<const double> weights);

struct Bag {
  std::vector<std::uint64_t> instance_ids;  // bag_size members, one class
  std::uint32_t label = 0;
};

struct BagForward {
  std::vector<double> saliency;      // bag_size, sums to 1
  std::vector<double> bag_features;  // H
  std::vector<double> bag_logits;    // C
  Matrix score_hidden;               // bag_size x A, post-tanh
};

// bag_penultimate: bag_size x H rows from forward()
BagForward bag_forward(const Classifier& model, const Matrix& bag_penultimate);

struct LossBreakdown {
  double instance_loss = 0.0;
  double bag_loss = 0.0;
  double total = 0.0;
};

struct BagBatch {
  Matrix features;                   // (num_bags * bag_size) x D
  std::vector<std::uint32_t> labels; // per bag
};

// Composite loss: total = weighted_ce + lambda_bag * mean bag CE. Gradients
// for both branches accumulate into grads; lambda_bag = 0 skips the bag
// branch entirely so the gradients equal the instance-only ones.
LossBreakdown total_loss(const Classifier& model,
                         const Matrix& batch_features,
                         std::span<const Target> targets,
                         std::span<const double> weights,
                         const BagBatch* bags,
                         double lambda_bag,
                         Gradients& grads);

// k class ids by descending logit, ties broken by ascending id
std::vector<std::uint32_t> predict_topk(std::span<const double> logits,
                                        std::uint32_t k);

std::vector<std::uint8_t> serialize_checkpoint(const Classifier& model);
Classifier deserialize_checkpoint(std::span<const std::uint8_t> data);
void save_checkpoint(const Classifier& model, const std::string& path);
Classifier load_checkpoint(const std::string& path);

}  // namespace urnet
