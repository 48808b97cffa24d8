#include "urnet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "urnet/bytes.hpp"
#include "urnet/errors.hpp"

namespace urnet {

namespace {

std::string format(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

}  // namespace

void OptConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!std::isfinite(lr) || lr <= 0.0) throw ConfigError("lr must be positive");
  if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum must be in [0,1)");
  }
  if (!std::isfinite(lr_decay) || lr_decay <= 0.0 || lr_decay > 1.0) {
    throw ConfigError("lr_decay must be in (0,1]");
  }
}

namespace {

struct StrategyField {
  const char* name;
  bool StrategySet::* field;
};

constexpr StrategyField kStrategyFields[] = {
    {"class", &StrategySet::use_class},
    {"cluster", &StrategySet::use_cluster},
    {"instance", &StrategySet::use_confidence},
    {"bag", &StrategySet::use_bags},
    {"label", &StrategySet::use_smoothing},
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::uint64_t strategy_mask(const StrategySet& s) {
  std::uint64_t mask = 0;
  for (std::size_t i = 0; i < std::size(kStrategyFields); ++i) {
    if (s.*(kStrategyFields[i].field)) mask |= 1ull << i;
  }
  return mask;
}

}  // namespace

std::string StrategySet::to_string() const {
  std::string out;
  for (const auto& f : kStrategyFields) {
    if (!(this->*(f.field))) continue;
    if (!out.empty()) out += ',';
    out += f.name;
  }
  return out.empty() ? "none" : out;
}

StrategySet parse_strategies(std::string_view text) {
  StrategySet set;
  if (trim(text) == "none") return set;
  std::string_view rest = text;
  while (true) {
    const std::size_t comma = rest.find(',');
    const std::string_view token = trim(rest.substr(0, comma));
    bool known = false;
    for (const auto& f : kStrategyFields) {
      if (token == f.name) {
        set.*(f.field) = true;
        known = true;
        break;
      }
    }
    if (!known) {
      throw InvalidInputError("unknown strategy '" + std::string(token) +
                              "' (expected class, cluster, instance, bag, label or none)");
    }
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return set;
}

std::vector<StrategySet> cumulative_stages() {
  std::vector<StrategySet> chain(5);
  for (std::size_t k = 0; k < 5; ++k) {
    for (std::size_t i = 0; i <= k; ++i) chain[k].*(kStrategyFields[i].field) = true;
  }
  return chain;
}

const char* const kStageNames[6] = {"baseline", "class",    "cluster",
                                    "instance", "bag",      "label"};

// ---------------------------------------------------------------------------
// artifact store

namespace {

constexpr std::string_view kArtifactMagic = "URNAR1";

Matrix features_of(const Dataset& dataset,
                   std::span<const std::uint64_t> ids) {
  const auto& index = dataset.id_index();
  Matrix x(ids.size(), dataset.feature_dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Instance& inst = dataset.instances[index.at(ids[i])];
    for (std::size_t k = 0; k < dataset.feature_dim; ++k) x(i, k) = inst.features[k];
  }
  return x;
}

constexpr std::size_t kForwardChunk = 256;

void write_strings(bytes::Writer& w, const std::vector<std::string>& strings) {
  w.u32(static_cast<std::uint32_t>(strings.size()));
  for (const auto& s : strings) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    w.raw(s.data(), s.size());
  }
}

std::vector<std::string> read_strings(bytes::Reader& r) {
  std::vector<std::string> out(r.u32());
  for (auto& s : out) {
    s.resize(r.u32());
    for (auto& c : s) c = static_cast<char>(r.u8());
  }
  return out;
}

}  // namespace

ArtifactStore::ArtifactStore(const Classifier& baseline, const Dataset& dataset,
                             std::string cache_dir)
    : baseline_(baseline), dataset_(dataset), cache_dir_(std::move(cache_dir)) {
  bytes::Writer w;
  w.u64(bytes::fnv1a64(serialize_checkpoint(baseline_)));
  w.u64(bytes::fnv1a64(serialize(dataset_)));
  key_ = bytes::fnv1a64(w.buf);
  if (!cache_dir_.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cache_dir_, ec);
    if (ec) {
      warnings_.push_back("artifact cache disabled: cannot create '" + cache_dir_ +
                          "': " + ec.message());
      cache_dir_.clear();
    }
  }
}

std::string ArtifactStore::cache_path(const char* name,
                                      std::uint64_t file_key) const {
  if (cache_dir_.empty()) return {};
  return cache_dir_ + "/" + name + "_" + format("%016llx", static_cast<unsigned long long>(file_key)) + ".bin";
}

namespace {

// Shared cache-file skeleton: header, payload, trailing payload checksum.
// load() returns false when the file is absent; corruption of any kind,
// including payload bit flips, surfaces as a warning and triggers a rebuild.
bool load_cache(const std::string& path, std::uint8_t kind, std::uint64_t file_key,
                std::vector<std::string>& warnings,
                const std::function<void(bytes::Reader&)>& decode) {
  if (path.empty() || !std::filesystem::exists(path)) return false;
  try {
    const auto data = bytes::read_file(path);
    bytes::Reader header(data);
    header.magic(kArtifactMagic);
    if (header.u8() != kind) throw FormatError("artifact kind mismatch", header.offset() - 1);
    if (header.u64() != file_key) throw FormatError("artifact key mismatch", header.offset() - 8);
    if (header.remaining() < 8) throw FormatError("truncated artifact", header.offset());
    const std::span<const std::uint8_t> payload(data.data() + header.offset(),
                                                data.size() - header.offset() - 8);
    const std::span<const std::uint8_t> tail_span(data.data() + data.size() - 8, 8);
    bytes::Reader tail(tail_span);
    if (tail.u64() != bytes::fnv1a64(payload)) {
      throw FormatError("artifact checksum mismatch", data.size() - 8);
    }
    bytes::Reader r(payload);
    decode(r);
    r.expect_eof();
    return true;
  } catch (const Error& e) {
    warnings.push_back("rebuilding artifact cache '" + path + "': " + e.what());
    return false;
  }
}

void store_cache(const std::string& path, std::uint8_t kind, std::uint64_t file_key,
                 std::vector<std::string>& warnings,
                 const std::function<void(bytes::Writer&)>& encode) {
  if (path.empty()) return;
  try {
    bytes::Writer payload;
    encode(payload);
    bytes::Writer w;
    w.magic(kArtifactMagic);
    w.u8(kind);
    w.u64(file_key);
    w.raw(payload.buf.data(), payload.buf.size());
    w.u64(bytes::fnv1a64(payload.buf));
    bytes::write_file(path, w.buf);
  } catch (const Error& e) {
    warnings.push_back("artifact cache write failed for '" + path + "': " + e.what());
  }
}

}  // namespace

const ConfusionMatrix& ArtifactStore::confusion() {
  if (have_confusion_) return confusion_;
  const std::string path = cache_path("confusion", key_);
  const bool loaded = load_cache(path, 1, key_, warnings_, [&](bytes::Reader& r) {
    const std::uint32_t c = r.u32();
    if (c != dataset_.num_classes) throw FormatError("class count mismatch", r.offset() - 4);
    ConfusionMatrix m(c);
    for (auto& v : m.counts) v = r.u64();
    confusion_ = std::move(m);
  });
  if (!loaded) {
    confusion_ = confusion_matrix(baseline_, dataset_, dataset_.train_ids);
    store_cache(path, 1, key_, warnings_, [&](bytes::Writer& w) {
      w.u32(confusion_.num_classes);
      for (auto v : confusion_.counts) w.u64(v);
    });
  }
  have_confusion_ = true;
  return confusion_;
}

const std::unordered_map<std::uint64_t, double>& ArtifactStore::cluster_weight() {
  if (have_clusters_) return cluster_weight_;
  const std::string path = cache_path("clusters", key_);
  const bool loaded = load_cache(path, 2, key_, warnings_, [&](bytes::Reader& r) {
    std::unordered_map<std::uint64_t, double> map;
    const std::uint64_t n = r.u64();
    map.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t id = r.u64();
      map[id] = std::bit_cast<double>(r.u64());
    }
    auto stored = read_strings(r);
    cluster_weight_ = std::move(map);
    warnings_.insert(warnings_.end(), stored.begin(), stored.end());
  });
  if (!loaded) {
    const ConfusionMatrix& m = confusion();
    std::vector<std::string> build_warnings;
    const auto& index = dataset_.id_index();
    for (std::uint32_t j = 0; j < dataset_.num_classes; ++j) {
      std::vector<std::uint64_t> members;
      for (std::uint64_t id : dataset_.train_ids) {
        if (dataset_.instances[index.at(id)].observed_label == j) members.push_back(id);
      }
      if (members.empty()) continue;
      try {
        Rng rng = Rng(key_).fork(rng_stream::kKMeans, j);
        auto cw = cluster_weights(baseline_, dataset_, dataset_.train_ids, m, j, rng);
        for (auto [id, w] : cw.member_weight) cluster_weight_[id] = w;
      } catch (const InvalidInputError& e) {
        build_warnings.push_back(format("cluster weights unavailable for class %u (%s); "
                                        "its instances keep weight 1",
                                        j, e.what()));
        for (std::uint64_t id : members) cluster_weight_[id] = 1.0;
      }
    }
    warnings_.insert(warnings_.end(), build_warnings.begin(), build_warnings.end());
    store_cache(path, 2, key_, warnings_, [&](bytes::Writer& w) {
      w.u64(cluster_weight_.size());
      std::vector<std::uint64_t> ids;
      ids.reserve(cluster_weight_.size());
      for (auto [id, weight] : cluster_weight_) ids.push_back(id);
      std::sort(ids.begin(), ids.end());  // stable file bytes
      for (std::uint64_t id : ids) {
        w.u64(id);
        w.u64(std::bit_cast<std::uint64_t>(cluster_weight_.at(id)));
      }
      write_strings(w, build_warnings);
    });
  }
  have_clusters_ = true;
  return cluster_weight_;
}

const std::unordered_map<std::uint64_t, double>& ArtifactStore::confidence(
    const ConfidenceConfig& config) {
  bytes::Writer kw;
  kw.u64(key_);
  kw.u32(config.token_dim);
  kw.u32(config.embed_hidden);
  kw.u32(config.embed_dim);
  kw.u32(config.epochs);
  kw.u64(std::bit_cast<std::uint64_t>(config.lr));
  kw.u32(config.top_rank);
  const std::uint64_t file_key = bytes::fnv1a64(kw.buf);
  if (have_confidence_ && confidence_key_ == file_key) return confidence_;

  confidence_.clear();
  const std::string path = cache_path("confidence", file_key);
  const bool loaded = load_cache(path, 3, file_key, warnings_, [&](bytes::Reader& r) {
    std::unordered_map<std::uint64_t, double> map;
    const std::uint64_t n = r.u64();
    map.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t id = r.u64();
      map[id] = std::bit_cast<double>(r.u64());
    }
    auto stored = read_strings(r);
    confidence_ = std::move(map);
    warnings_.insert(warnings_.end(), stored.begin(), stored.end());
  });
  if (!loaded) {
    std::vector<std::string> build_warnings;
    Rng rng = Rng(key_).fork(rng_stream::kConfidence);
    const ConfidenceModel model = train_confidence(baseline_, dataset_, dataset_.train_ids,
                                                   config, rng, &build_warnings);
    const auto& index = dataset_.id_index();
    const auto& ids = dataset_.train_ids;
    for (std::size_t start = 0; start < ids.size(); start += kForwardChunk) {
      const std::size_t stop = std::min(ids.size(), start + kForwardChunk);
      const std::span<const std::uint64_t> chunk(ids.data() + start, stop - start);
      const auto cache = forward(baseline_, features_of(dataset_, chunk));
      const Matrix& pen = cache.penultimate();
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const Instance& inst = dataset_.instances[index.at(chunk[i])];
        confidence_[chunk[i]] = raw_confidence(
            model, pen.row(i), dataset_.classes[inst.observed_label].token_ids);
      }
    }
    warnings_.insert(warnings_.end(), build_warnings.begin(), build_warnings.end());
    store_cache(path, 3, file_key, warnings_, [&](bytes::Writer& w) {
      w.u64(confidence_.size());
      std::vector<std::uint64_t> sorted;
      sorted.reserve(confidence_.size());
      for (auto [id, score] : confidence_) sorted.push_back(id);
      std::sort(sorted.begin(), sorted.end());
      for (std::uint64_t id : sorted) {
        w.u64(id);
        w.u64(std::bit_cast<std::uint64_t>(confidence_.at(id)));
      }
      write_strings(w, build_warnings);
    });
  }
  have_confidence_ = true;
  confidence_key_ = file_key;
  return confidence_;
}

const std::unordered_map<std::uint64_t, std::uint32_t>& ArtifactStore::predicted() {
  if (have_predicted_) return predicted_;
  const std::string path = cache_path("predicted", key_);
  const bool loaded = load_cache(path, 4, key_, warnings_, [&](bytes::Reader& r) {
    std::unordered_map<std::uint64_t, std::uint32_t> map;
    const std::uint64_t n = r.u64();
    map.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t id = r.u64();
      const std::uint32_t label = r.u32();
      if (label >= dataset_.num_classes) throw FormatError("label out of range", r.offset() - 4);
      map[id] = label;
    }
    predicted_ = std::move(map);
  });
  if (!loaded) {
    const auto& ids = dataset_.train_ids;
    for (std::size_t start = 0; start < ids.size(); start += kForwardChunk) {
      const std::size_t stop = std::min(ids.size(), start + kForwardChunk);
      const std::span<const std::uint64_t> chunk(ids.data() + start, stop - start);
      const auto cache = forward(baseline_, features_of(dataset_, chunk));
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        predicted_[chunk[i]] = predict_topk(cache.logits.row(i), 1)[0];
      }
    }
    store_cache(path, 4, key_, warnings_, [&](bytes::Writer& w) {
      w.u64(predicted_.size());
      std::vector<std::uint64_t> sorted;
      sorted.reserve(predicted_.size());
      for (auto [id, label] : predicted_) sorted.push_back(id);
      std::sort(sorted.begin(), sorted.end());
      for (std::uint64_t id : sorted) {
        w.u64(id);
        w.u32(predicted_.at(id));
      }
    });
  }
  have_predicted_ = true;
  return predicted_;
}

// ---------------------------------------------------------------------------
// stage inputs

StageInputs stage_inputs(const Dataset& dataset, const StageConfig& config,
                         ArtifactStore& artifacts) {
  if (dataset.train_ids.empty()) {
    throw InvalidInputError("stage_inputs: dataset has no train split");
  }
  if (config.beta < 0.0 || config.beta > 1.0 || !std::isfinite(config.beta)) {
    throw ConfigError("beta must be in [0,1]");
  }
  const auto& index = dataset.id_index();
  StageInputs in;
  in.ids = dataset.train_ids;
  const std::size_t n = in.ids.size();
  in.w_class.assign(n, 1.0);
  in.w_cluster.assign(n, 1.0);
  in.w_confidence.assign(n, 1.0);
  std::vector<std::uint32_t> observed(n);
  for (std::size_t i = 0; i < n; ++i) {
    observed[i] = dataset.instances[index.at(in.ids[i])].observed_label;
  }

  if (config.strategies.use_class) {
    // sizes are train-split counts; classes absent from the split keep
    // weight 1, which nothing ever multiplies by
    std::vector<std::uint32_t> counts(dataset.num_classes, 0);
    for (std::uint32_t c : observed) counts[c] += 1;
    std::vector<std::uint32_t> present;
    std::vector<std::uint32_t> present_sizes;
    for (std::uint32_t c = 0; c < dataset.num_classes; ++c) {
      if (counts[c] > 0) {
        present.push_back(c);
        present_sizes.push_back(counts[c]);
      }
    }
    const ClassWeights cw = class_weights(present_sizes, config.alpha);
    std::vector<double> per_class(dataset.num_classes, 1.0);
    for (std::size_t k = 0; k < present.size(); ++k) per_class[present[k]] = cw.weights[k];
    for (std::size_t i = 0; i < n; ++i) in.w_class[i] = per_class[observed[i]];
  }
  if (config.strategies.use_cluster) {
    const auto& by_id = artifacts.cluster_weight();
    for (std::size_t i = 0; i < n; ++i) in.w_cluster[i] = by_id.at(in.ids[i]);
  }
  if (config.strategies.use_confidence) {
    // stored scores are raw cosines; clamping to [0,1] happens here so a
    // negative correlation cannot flip the loss sign
    const auto& by_id = artifacts.confidence(config.confidence);
    for (std::size_t i = 0; i < n; ++i) {
      in.w_confidence[i] = std::clamp(by_id.at(in.ids[i]), 0.0, 1.0);
    }
  }

  in.targets.resize(n);
  if (config.strategies.use_smoothing) {
    const auto& predicted = artifacts.predicted();
    for (std::size_t i = 0; i < n; ++i) {
      in.targets[i] = Target{observed[i], predicted.at(in.ids[i]), config.beta};
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      in.targets[i] = Target{observed[i], observed[i], 1.0};
    }
  }

  in.ledger = combine(in.ids, in.w_class, in.w_cluster, in.w_confidence);
  return in;
}

// ---------------------------------------------------------------------------
// training

namespace {

// Per-epoch bag plan: each class's instances are partitioned into random bags
// of bag_size without replacement; a leftover bag is topped up from the
// already-bagged members (so one instance may appear twice that epoch), and a
// class smaller than bag_size samples with replacement.
std::vector<Bag> build_bags(const Dataset& dataset,
                            std::span<const std::uint64_t> ids,
                            std::uint32_t bag_size, Rng& rng) {
  const auto& index = dataset.id_index();
  std::vector<std::vector<std::uint64_t>> groups(dataset.num_classes);
  for (std::uint64_t id : ids) {
    groups[dataset.instances[index.at(id)].observed_label].push_back(id);
  }
  std::vector<Bag> bags;
  for (std::uint32_t c = 0; c < dataset.num_classes; ++c) {
    auto& group = groups[c];
    if (group.empty()) continue;
    if (group.size() < bag_size) {
      Bag bag;
      bag.label = c;
      for (std::uint32_t k = 0; k < bag_size; ++k) {
        bag.instance_ids.push_back(group[rng.index(group.size())]);
      }
      bags.push_back(std::move(bag));
      continue;
    }
    rng.shuffle(group);
    const std::size_t full = group.size() / bag_size;
    for (std::size_t b = 0; b < full; ++b) {
      Bag bag;
      bag.label = c;
      for (std::uint32_t k = 0; k < bag_size; ++k) {
        bag.instance_ids.push_back(group[b * bag_size + k]);
      }
      bags.push_back(std::move(bag));
    }
    const std::size_t rest = group.size() - full * bag_size;
    if (rest > 0) {
      Bag bag;
      bag.label = c;
      for (std::size_t k = 0; k < rest; ++k) {
        bag.instance_ids.push_back(group[full * bag_size + k]);
      }
      while (bag.instance_ids.size() < bag_size) {
        bag.instance_ids.push_back(group[rng.index(full * bag_size)]);
      }
      bags.push_back(std::move(bag));
    }
  }
  rng.shuffle(bags);
  return bags;
}

BagBatch make_bag_batch(const Dataset& dataset, std::span<const Bag> bags,
                        std::size_t cursor, std::size_t count,
                        std::uint32_t bag_size) {
  const auto& index = dataset.id_index();
  BagBatch batch;
  batch.features = Matrix(count * bag_size, dataset.feature_dim);
  batch.labels.resize(count);
  for (std::size_t b = 0; b < count; ++b) {
    const Bag& bag = bags[(cursor + b) % bags.size()];
    batch.labels[b] = bag.label;
    for (std::uint32_t k = 0; k < bag_size; ++k) {
      const Instance& inst = dataset.instances[index.at(bag.instance_ids[k])];
      for (std::size_t d = 0; d < dataset.feature_dim; ++d) {
        batch.features(b * bag_size + k, d) = inst.features[d];
      }
    }
  }
  return batch;
}

}  // namespace

void sgd_train(Classifier& model, const Dataset& dataset,
               const StageInputs& inputs, const OptConfig& opt, bool use_bags,
               double lambda_bag, Rng& rng,
               std::vector<std::string>* warnings) {
  opt.validate();
  if (!std::isfinite(lambda_bag) || lambda_bag < 0.0) {
    throw ConfigError("lambda_bag must be non-negative");
  }
  const std::size_t n = inputs.ids.size();
  if (n == 0) throw InvalidInputError("sgd_train: empty training set");
  if (inputs.targets.size() != n || inputs.w_class.size() != n ||
      inputs.w_cluster.size() != n || inputs.w_confidence.size() != n) {
    throw InvalidInputError("sgd_train: misaligned stage inputs");
  }
  if (model.config.input_dim != dataset.feature_dim) {
    throw InvalidInputError("sgd_train: model input dim does not match dataset");
  }
  const auto& index = dataset.id_index();
  const std::uint32_t bag_size = model.config.bag_size;
  const std::size_t bags_per_step =
      std::max<std::size_t>(1, opt.batch_size / bag_size);
  const bool bag_branch = use_bags && lambda_bag != 0.0;

  std::vector<double> params = flatten(model);
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::uint32_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr =
        opt.lr_decay_every == 0
            ? opt.lr
            : opt.lr * std::pow(opt.lr_decay,
                                static_cast<double>(epoch / opt.lr_decay_every));
    rng.shuffle(order);
    std::vector<Bag> bags;
    std::size_t bag_cursor = 0;
    if (bag_branch) bags = build_bags(dataset, inputs.ids, bag_size, rng);

    for (std::size_t start = 0; start < n; start += opt.batch_size) {
      const std::size_t stop = std::min(n, start + opt.batch_size);
      const std::size_t m = stop - start;
      std::vector<std::uint64_t> batch_ids(m);
      std::vector<double> wc(m), wg(m), wi(m);
      std::vector<Target> targets(m);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t pos = order[start + i];
        batch_ids[i] = inputs.ids[pos];
        wc[i] = inputs.w_class[pos];
        wg[i] = inputs.w_cluster[pos];
        wi[i] = inputs.w_confidence[pos];
        targets[i] = inputs.targets[pos];
      }
      WeightLedger batch;
      try {
        batch = combine(batch_ids, wc, wg, wi);
      } catch (const DegenerateBatchError& e) {
        if (warnings) {
          warnings->push_back(format("epoch %u: skipped batch at %zu: %s", epoch,
                                     start, e.what()));
        }
        continue;
      }
      Matrix x(m, dataset.feature_dim);
      for (std::size_t i = 0; i < m; ++i) {
        const Instance& inst = dataset.instances[index.at(batch_ids[i])];
        for (std::size_t d = 0; d < dataset.feature_dim; ++d) x(i, d) = inst.features[d];
      }
      BagBatch bag_batch;
      const BagBatch* bag_ptr = nullptr;
      if (bag_branch && !bags.empty()) {
        bag_batch = make_bag_batch(dataset, bags, bag_cursor, bags_per_step, bag_size);
        bag_cursor = (bag_cursor + bags_per_step) % bags.size();
        bag_ptr = &bag_batch;
      }
      Gradients grads(model);
      LossBreakdown loss;
      try {
        loss = total_loss(model, x, targets, batch.combined, bag_ptr,
                          bag_branch ? lambda_bag : 0.0, grads);
      } catch (const InvalidInputError& e) {
        throw TrainingError(format("diverged at epoch %u (%s); "
                                   "the model keeps its last finite parameters",
                                   epoch, e.what()));
      }
      if (!std::isfinite(loss.total)) {
        throw TrainingError(format("non-finite loss at epoch %u; "
                                   "the model keeps its last finite parameters",
                                   epoch));
      }
      const std::vector<double> g = flatten(grads);
      for (std::size_t k = 0; k < params.size(); ++k) {
        velocity[k] = opt.momentum * velocity[k] - lr * g[k];
        params[k] += velocity[k];
      }
      unflatten(model, params);
    }
  }
  round_to_checkpoint_precision(model);
}

Classifier train_baseline(const Dataset& dataset,
                          const ClassifierConfig& model_config,
                          const OptConfig& opt, std::uint64_t seed,
                          std::vector<std::string>* warnings) {
  if (dataset.train_ids.empty()) {
    throw InvalidInputError("train_baseline: dataset has no train split");
  }
  Rng root(seed);
  Rng init_rng = root.fork(rng_stream::kModelInit);
  Classifier model = init_classifier(model_config, init_rng);

  StageInputs inputs;
  inputs.ids = dataset.train_ids;
  const std::size_t n = inputs.ids.size();
  inputs.w_class.assign(n, 1.0);
  inputs.w_cluster.assign(n, 1.0);
  inputs.w_confidence.assign(n, 1.0);
  inputs.targets.resize(n);
  const auto& index = dataset.id_index();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t y = dataset.instances[index.at(inputs.ids[i])].observed_label;
    inputs.targets[i] = Target{y, y, 1.0};
  }
  Rng train_rng = root.fork(rng_stream::kBaseline);
  sgd_train(model, dataset, inputs, opt, false, 0.0, train_rng, warnings);
  return model;
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

struct EvalCounts {
  std::vector<std::uint64_t> topk_hits;   // aligned with ks
  std::vector<std::uint64_t> class_hits;  // top-1 per true class
  std::vector<std::uint64_t> class_total;
};

void eval_range(const Classifier& model, const Dataset& dataset,
                std::span<const std::uint64_t> ids,
                std::span<const std::uint32_t> ks, std::uint32_t max_k,
                EvalCounts& counts) {
  const auto& index = dataset.id_index();
  for (std::size_t start = 0; start < ids.size(); start += kForwardChunk) {
    const std::size_t stop = std::min(ids.size(), start + kForwardChunk);
    const std::span<const std::uint64_t> chunk(ids.data() + start, stop - start);
    const auto cache = forward(model, features_of(dataset, chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const Instance& inst = dataset.instances[index.at(chunk[i])];
      const auto top = predict_topk(cache.logits.row(i), max_k);
      std::uint32_t found = max_k;  // = miss
      for (std::uint32_t r = 0; r < max_k; ++r) {
        if (top[r] == inst.true_label) {
          found = r;
          break;
        }
      }
      for (std::size_t j = 0; j < ks.size(); ++j) {
        if (found < ks[j]) counts.topk_hits[j] += 1;
      }
      counts.class_total[inst.true_label] += 1;
      if (found == 0) counts.class_hits[inst.true_label] += 1;
    }
  }
}

}  // namespace

EvalResult evaluate(const Classifier& model, const Dataset& dataset,
                    std::span<const std::uint64_t> ids,
                    std::span<const std::uint32_t> ks, std::uint32_t threads) {
  if (ids.empty()) throw InvalidInputError("evaluate: empty split");
  if (ks.empty()) throw InvalidInputError("evaluate: no k values");
  if (model.config.num_classes != dataset.num_classes ||
      model.config.input_dim != dataset.feature_dim) {
    throw InvalidInputError("evaluate: model does not match dataset");
  }
  std::uint32_t max_k = 0;
  for (std::uint32_t k : ks) {
    if (k < 1 || k > dataset.num_classes) {
      throw InvalidInputError("evaluate: k must be in [1, num_classes]");
    }
    max_k = std::max(max_k, k);
  }

  const std::size_t t = std::clamp<std::size_t>(threads, 1, ids.size());
  std::vector<EvalCounts> counts(t);
  for (auto& c : counts) {
    c.topk_hits.assign(ks.size(), 0);
    c.class_hits.assign(dataset.num_classes, 0);
    c.class_total.assign(dataset.num_classes, 0);
  }
  if (t == 1) {
    eval_range(model, dataset, ids, ks, max_k, counts[0]);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < t; ++w) {
      const std::size_t lo = ids.size() * w / t;
      const std::size_t hi = ids.size() * (w + 1) / t;
      workers.emplace_back([&, w, lo, hi] {
        eval_range(model, dataset, ids.subspan(lo, hi - lo), ks, max_k, counts[w]);
      });
    }
    for (auto& worker : workers) worker.join();
  }
  // integer merge in worker order: results are independent of thread count
  EvalCounts total = std::move(counts[0]);
  for (std::size_t w = 1; w < t; ++w) {
    for (std::size_t j = 0; j < ks.size(); ++j) total.topk_hits[j] += counts[w].topk_hits[j];
    for (std::uint32_t c = 0; c < dataset.num_classes; ++c) {
      total.class_hits[c] += counts[w].class_hits[c];
      total.class_total[c] += counts[w].class_total[c];
    }
  }

  EvalResult result;
  for (std::size_t j = 0; j < ks.size(); ++j) {
    result.topk[ks[j]] =
        static_cast<double>(total.topk_hits[j]) / static_cast<double>(ids.size());
  }
  double macro_sum = 0.0;
  std::size_t present = 0;
  for (std::uint32_t c = 0; c < dataset.num_classes; ++c) {
    if (total.class_total[c] == 0) continue;
    macro_sum += static_cast<double>(total.class_hits[c]) /
                 static_cast<double>(total.class_total[c]);
    present += 1;
  }
  result.macro_top1 = present == 0 ? 0.0 : macro_sum / static_cast<double>(present);
  return result;
}

// ---------------------------------------------------------------------------
// stages and the ablation protocol

StageResult run_stage(const Classifier& baseline, const Dataset& dataset,
                      const StageConfig& config, ArtifactStore& artifacts,
                      std::uint32_t threads) {
  const auto t0 = std::chrono::steady_clock::now();
  StageResult out;
  out.metrics.strategies = config.strategies;
  out.metrics.seed = config.seed;

  StageInputs inputs = stage_inputs(dataset, config, artifacts);
  out.ledger = std::move(inputs.ledger);
  out.model = baseline;
  if (config.strategies.any()) {
    Rng rng = Rng(config.seed).fork(rng_stream::kStage,
                                    strategy_mask(config.strategies));
    sgd_train(out.model, dataset, inputs, config.opt,
              config.strategies.use_bags, config.lambda_bag, rng, &out.warnings);
  }

  const std::uint32_t k5 = std::min<std::uint32_t>(5, dataset.num_classes);
  const std::vector<std::uint32_t> ks = k5 == 1 ? std::vector<std::uint32_t>{1}
                                                : std::vector<std::uint32_t>{1, k5};
  const EvalResult ev = evaluate(out.model, dataset, dataset.val_ids, ks, threads);
  out.metrics.top1 = ev.topk.at(1);
  out.metrics.top5 = ev.topk.at(k5);
  out.metrics.macro_top1 = ev.macro_top1;
  out.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

void AblateConfig::validate() const {
  baseline_opt.validate();
  stage_opt.validate();
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!std::isfinite(alpha) || alpha < 0.0 || alpha > 1.0) {
    throw ConfigError("alpha must be in [0,1]");
  }
  if (!std::isfinite(beta) || beta < 0.0 || beta > 1.0) {
    throw ConfigError("beta must be in [0,1]");
  }
  if (!std::isfinite(lambda_bag) || lambda_bag < 0.0) {
    throw ConfigError("lambda_bag must be non-negative");
  }
  if (threads == 0) throw ConfigError("threads must be at least 1");
}

namespace {

void accumulate(std::span<const double> values, double& mean, double& stddev) {
  mean = 0.0;
  stddev = 0.0;
  if (values.empty()) return;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
}

}  // namespace

AblationReport ablate(const Dataset& dataset, const AblateConfig& config) {
  config.validate();
  AblationReport report;
  const auto chain = cumulative_stages();

  for (std::uint64_t seed : config.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const Classifier baseline =
        train_baseline(dataset, config.model, config.baseline_opt, seed);
    ArtifactStore store(baseline, dataset, config.cache_dir);

    StageConfig stage;
    stage.opt = config.stage_opt;
    stage.alpha = config.alpha;
    stage.beta = config.beta;
    stage.lambda_bag = config.lambda_bag;
    stage.confidence = config.confidence;
    stage.seed = seed;

    for (std::size_t k = 0; k < 6; ++k) {
      stage.strategies = k == 0 ? StrategySet{} : chain[k - 1];
      const StageResult result =
          run_stage(baseline, dataset, stage, store, config.threads);
      if (seed == config.seeds.front() && k > 0) {
        report.first_seed_ledgers.emplace_back(kStageNames[k], result.ledger);
      }
      for (const auto& w : result.warnings) {
        report.warnings.push_back("seed " + std::to_string(seed) + " " +
                                  kStageNames[k] + ": " + w);
      }
      StageRow row;
      row.stage = kStageNames[k];
      row.strategies = stage.strategies;
      row.seed = seed;
      row.top1 = result.metrics.top1;
      row.top5 = result.metrics.top5;
      row.macro_top1 = result.metrics.macro_top1;
      row.wall_seconds =
          k == 0 ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                       .count()
                 : result.metrics.wall_seconds;
      row.ref_top5 = kReferenceTop5[k];
      report.rows.push_back(std::move(row));
    }
    for (const auto& w : store.warnings()) {
      report.warnings.push_back("seed " + std::to_string(seed) + ": " + w);
    }
  }

  for (std::size_t k = 0; k < 6; ++k) {
    StageAggregate agg;
    agg.stage = kStageNames[k];
    agg.strategies = k == 0 ? StrategySet{} : chain[k - 1];
    agg.ref_top5 = kReferenceTop5[k];
    std::vector<double> top1, top5, macro;
    for (std::size_t r = k; r < report.rows.size(); r += 6) {
      top1.push_back(report.rows[r].top1);
      top5.push_back(report.rows[r].top5);
      macro.push_back(report.rows[r].macro_top1);
    }
    agg.runs = top1.size();
    accumulate(top1, agg.top1_mean, agg.top1_stddev);
    accumulate(top5, agg.top5_mean, agg.top5_stddev);
    accumulate(macro, agg.macro_mean, agg.macro_stddev);
    report.aggregates.push_back(std::move(agg));
  }
  return report;
}

// ---------------------------------------------------------------------------
// report outputs

namespace {

// strategy sets are joined with '+' in report files to keep the CSV unquoted
std::string strategy_label(const StrategySet& s) {
  std::string label = s.to_string();
  std::replace(label.begin(), label.end(), ',', '+');
  return label;
}

}  // namespace

std::string report_csv(const AblationReport& report) {
  std::string out = "stage,strategies,seed,top1,top5,macro_top1,ref_top5\n";
  for (const StageRow& row : report.rows) {
    out += format("%s,%s,%llu,%.4f,%.4f,%.4f,%.1f\n", row.stage.c_str(),
                  strategy_label(row.strategies).c_str(),
                  static_cast<unsigned long long>(row.seed), row.top1 * 100.0,
                  row.top5 * 100.0, row.macro_top1 * 100.0, row.ref_top5);
  }
  return out;
}

std::string aggregate_csv(const AblationReport& report) {
  std::string out =
      "stage,strategies,runs,top1_mean,top1_stddev,top5_mean,top5_stddev,"
      "macro_mean,macro_stddev,ref_top5\n";
  for (const StageAggregate& agg : report.aggregates) {
    out += format("%s,%s,%zu,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.1f\n",
                  agg.stage.c_str(), strategy_label(agg.strategies).c_str(),
                  agg.runs, agg.top1_mean * 100.0, agg.top1_stddev * 100.0,
                  agg.top5_mean * 100.0, agg.top5_stddev * 100.0,
                  agg.macro_mean * 100.0, agg.macro_stddev * 100.0, agg.ref_top5);
  }
  return out;
}

std::string report_json(const AblationReport& report) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const StageRow& row : report.rows) {
    j["rows"].push_back({{"stage", row.stage},
                         {"strategies", strategy_label(row.strategies)},
                         {"seed", row.seed},
                         {"top1", row.top1 * 100.0},
                         {"top5", row.top5 * 100.0},
                         {"macro_top1", row.macro_top1 * 100.0},
                         {"wall_seconds", row.wall_seconds},
                         {"ref_top5", row.ref_top5}});
  }
  j["aggregate"] = nlohmann::json::array();
  for (const StageAggregate& agg : report.aggregates) {
    j["aggregate"].push_back({{"stage", agg.stage},
                              {"strategies", strategy_label(agg.strategies)},
                              {"runs", agg.runs},
                              {"top1_mean", agg.top1_mean * 100.0},
                              {"top1_stddev", agg.top1_stddev * 100.0},
                              {"top5_mean", agg.top5_mean * 100.0},
                              {"top5_stddev", agg.top5_stddev * 100.0},
                              {"macro_mean", agg.macro_mean * 100.0},
                              {"macro_stddev", agg.macro_stddev * 100.0},
                              {"ref_top5", agg.ref_top5}});
  }
  return j.dump(2) + "\n";
}

std::string report_bar_chart(const AblationReport& report) {
  std::string out = "top-1 validation accuracy (percent), mean over seeds\n";
  for (const StageAggregate& agg : report.aggregates) {
    const int bars = std::clamp(static_cast<int>(std::lround(agg.top1_mean * 50.0)), 0, 50);
    out += format("%-9s %6.2f |%s\n", agg.stage.c_str(), agg.top1_mean * 100.0,
                  std::string(static_cast<std::size_t>(bars), '#').c_str());
  }
  return out;
}

}  // namespace urnet
