#pragma once

// Synthetic web-style dataset generator plus the on-disk dataset format.
// Datasets exhibit tunable class imbalance, label noise concentrated on
// confusable class pairs, a representative/diverse instance mix, and
// ambiguous instances sitting between two class prototypes.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "urnet/rng.hpp"

namespace urnet {

struct GenConfig {
  std::uint32_t num_classes = 10;
  std::uint32_t feature_dim = 16;

  // class j draws round(min + (max-min) * u^exponent) instances,
  // u = (C-1-j)/(C-1); exponent 0 makes all sizes equal
  std::uint32_t size_min = 20;
  std::uint32_t size_max = 200;
  double size_exponent = 1.0;

  double flip_rate = 0.0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> confusable_pairs;
  double representative_fraction = 0.5;
  double ambiguous_fraction = 0.0;

  double sigma_near = 0.25;
  double sigma_far = 1.2;
  double mix_strength = 0.6;   // feature bleed along confusable pair axes
  double prototype_scale = 1.0;

  std::uint32_t tokens_per_class = 2;
  std::uint32_t vocab_size = 0;  // 0 = num_classes * tokens_per_class

  std::uint64_t seed = 1;
};

// throws ConfigError naming the offending key
void validate(const GenConfig& config);

// flat key=value text format, first line is the format magic
GenConfig parse_gen_config(const std::string& text);
std::string gen_config_to_string(const GenConfig& config);
GenConfig load_gen_config(const std::string& path);
void save_gen_config(const GenConfig& config, const std::string& path);

struct Instance {
  std::uint64_t id = 0;
  std::vector<float> features;
  std::uint32_t observed_label = 0;
  std::uint32_t true_label = 0;  // hidden from training, used for evaluation
  std::uint32_t source_rank = 1; // position in the simulated retrieval ranking

  bool operator==(const Instance&) const = default;
};

struct ClassMeta {
  std::uint32_t id = 0;
  std::vector<std::uint32_t> token_ids;
  std::uint32_t size = 0;  // instances carrying this observed label

  bool operator==(const ClassMeta&) const = default;
};

struct Dataset {
  std::uint32_t num_classes = 0;
  std::uint32_t feature_dim = 0;
  std::vector<Instance> instances;
  std::vector<ClassMeta> classes;
  std::vector<std::uint64_t> train_ids;
  std::vector<std::uint64_t> val_ids;

  // populated by generate/split, not serialized
  std::vector<std::string> warnings;

  std::unordered_map<std::uint64_t, std::size_t> id_index() const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.num_classes == b.num_classes && a.feature_dim == b.feature_dim &&
           a.instances == b.instances && a.classes == b.classes &&
           a.train_ids == b.train_ids && a.val_ids == b.val_ids;
  }
};

Dataset generate(const GenConfig& config);

// stratified by true_label; size-1 classes fall into train with a warning
void split(Dataset& dataset, double val_fraction, Rng& rng);

std::vector<std::uint8_t> serialize(const Dataset& dataset);
Dataset deserialize(std::span<const std::uint8_t> data);
void save(const Dataset& dataset, const std::string& path);
Dataset load(const std::string& path);

}  // namespace urnet
