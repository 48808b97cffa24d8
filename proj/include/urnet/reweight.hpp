#pragma once

// Every weight the composite loss consumes: inverse-size class weights with
// the alpha interpolation, confusion-driven cluster weights over five k-means
// groups, two-tower correlation confidence per instance, and beta-smoothed
// label targets.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "urnet/datagen.hpp"
#include "urnet/model.hpp"
#include "urnet/rng.hpp"

namespace urnet {

struct ClassWeights {
  double alpha = 0.5;
  std::vector<double> weights;
};

// w_j = (1-alpha) + alpha * r_j / sum(r), r_j = 1/N_j
ClassWeights class_weights(std::span<const std::uint32_t> sizes, double alpha);

struct ConfusionMatrix {
  std::uint32_t num_classes = 0;
  std::vector<std::uint64_t> counts;  // C x C row-major, [observed][predicted]

  explicit ConfusionMatrix(std::uint32_t c = 0)
      : num_classes(c), counts(std::size_t{c} * c, 0) {}
  std::uint64_t& at(std::uint32_t j, std::uint32_t k) {
    return counts[std::size_t{j} * num_classes + k];
  }
  std::uint64_t at(std::uint32_t j, std::uint32_t k) const {
    return counts[std::size_t{j} * num_classes + k];
  }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::uint32_t j) const;

  bool operator==(const ConfusionMatrix&) const = default;
};

// observed label vs model top-1 over the given instances
ConfusionMatrix confusion_matrix(const Classifier& model, const Dataset& dataset,
                                 std::span<const std::uint64_t> ids,
                                 std::uint32_t threads = 1);

// the four off-diagonal classes with the highest counts in row j,
// ties by smaller class id
std::array<std::uint32_t, 4> top_confused(const ConfusionMatrix& m,
                                          std::uint32_t j);

std::vector<double> group_weights_from_sizes(std::span<const std::uint32_t> sizes);

struct ClusterWeights {
  std::uint32_t class_id = 0;
  std::array<std::uint32_t, 4> confused{};
  std::vector<double> group_weights;  // five, sum to 1
  // weight for instances observed-labeled class_id; other pooled classes get
  // theirs from their own class's run
  std::unordered_map<std::uint64_t, double> member_weight;
};

ClusterWeights cluster_weights(const Classifier& baseline, const Dataset& dataset,
                               std::span<const std::uint64_t> ids,
                               const ConfusionMatrix& m, std::uint32_t j,
                               Rng& rng);

struct ConfidenceConfig {
  std::uint32_t token_dim = 16;
  std::uint32_t embed_hidden = 32;
  std::uint32_t embed_dim = 16;
  std::uint32_t epochs = 40;
  double lr = 0.05;
  std::uint32_t top_rank = 30;  // positives per class

  bool operator==(const ConfidenceConfig&) const = default;
};

struct ConfidenceModel {
  ConfidenceConfig config;
  Matrix embedding;  // vocab x token_dim
  Affine img1, img2; // penultimate -> hidden -> embed
  Affine txt1, txt2; // pooled tokens -> hidden -> embed

  bool operator==(const ConfidenceModel&) const = default;
};

ConfidenceModel init_confidence(const ConfidenceConfig& config,
                                std::uint32_t penultimate_dim,
                                std::uint32_t vocab, Rng& rng);

std::vector<double> flatten(const ConfidenceModel& model);
void unflatten(ConfidenceModel& model, std::span<const double> params);

std::vector<double> project_image(const ConfidenceModel& model,
                                  std::span<const double> penultimate);
std::vector<double> project_text(const ConfidenceModel& model,
                                 std::span<const std::uint32_t> token_ids);

// pair term of the correlation ranking loss:
//   cos(image, negative text) - cos(image, positive text)
// returns the loss and its gradient in flatten() layout
std::pair<double, std::vector<double>> confidence_pair_grad(
    const ConfidenceModel& model, std::span<const double> penultimate,
    std::span<const std::uint32_t> pos_tokens,
    std::span<const std::uint32_t> neg_tokens);

double confidence_pair_step(ConfidenceModel& model,
                            std::span<const double> penultimate,
                            std::span<const std::uint32_t> pos_tokens,
                            std::span<const std::uint32_t> neg_tokens, double lr);

// positives: the top-ranked train instances per observed class (all of them
// when a class holds fewer than top_rank, with a warning); one fresh
// random-other-class negative per pair per epoch
ConfidenceModel train_confidence(const Classifier& baseline,
                                 const Dataset& dataset,
                                 std::span<const std::uint64_t> train_ids,
                                 const ConfidenceConfig& config, Rng& rng,
                                 std::vector<std::string>* warnings = nullptr);

double raw_confidence(const ConfidenceModel& model,
                      std::span<const double> penultimate,
                      std::span<const std::uint32_t> token_ids);
// clamped to [0,1]: a negative correlation must not flip the loss sign
double instance_confidence(const ConfidenceModel& model,
                           std::span<const double> penultimate,
                           std::span<const std::uint32_t> token_ids);

std::vector<Target> smooth_targets(std::span<const std::uint32_t> observed,
                                   std::span<const std::uint32_t> predicted,
                                   double beta);

struct WeightLedger {
  std::vector<std::uint64_t> ids;
  std::vector<double> w_class;
  std::vector<double> w_cluster;
  std::vector<double> w_confidence;
  std::vector<double> combined;
  double normalization = 1.0;  // batch mean divided out of the raw products
};

// combined_i = w_class * w_cluster * w_confidence, then rescaled so the
// batch mean is 1 (unless renormalize is off)
WeightLedger combine(std::span<const std::uint64_t> ids,
                     std::span<const double> w_class,
                     std::span<const double> w_cluster,
                     std::span<const double> w_confidence,
                     bool renormalize = true);

std::string ledger_csv(const WeightLedger& ledger);
std::string confusion_csv(const ConfusionMatrix& m);

}  // namespace urnet
