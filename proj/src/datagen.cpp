#include "urnet/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "urnet/bytes.hpp"
#include "urnet/errors.hpp"
#include "urnet/matrix.hpp"

namespace urnet {

namespace {

constexpr std::string_view kDatasetMagic = "URNDS1";
constexpr std::string_view kConfigMagic = "URNGC1";

void check_fraction(double v, const char* key) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ConfigError(std::string(key) + " must be in [0,1]");
  }
}

void check_non_negative(double v, const char* key) {
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw ConfigError(std::string(key) + " must be non-negative");
  }
}

}  // namespace

void validate(const GenConfig& config) {
  if (config.num_classes < 1) throw ConfigError("num_classes must be at least 1");
  if (config.feature_dim < 1) throw ConfigError("feature_dim must be at least 1");
  if (config.size_min < 1) throw ConfigError("size_min must be at least 1");
  if (config.size_min > config.size_max) {
    throw ConfigError("size_min must not exceed size_max");
  }
  check_non_negative(config.size_exponent, "size_exponent");
  check_fraction(config.flip_rate, "flip_rate");
  check_fraction(config.representative_fraction, "representative_fraction");
  check_fraction(config.ambiguous_fraction, "ambiguous_fraction");
  check_non_negative(config.sigma_near, "sigma_near");
  check_non_negative(config.sigma_far, "sigma_far");
  check_non_negative(config.mix_strength, "mix_strength");
  if (!std::isfinite(config.prototype_scale)) {
    throw ConfigError("prototype_scale must be finite");
  }
  if (config.tokens_per_class < 1) {
    throw ConfigError("tokens_per_class must be at least 1");
  }
  if (config.num_classes < 2) {
    if (config.flip_rate > 0.0) {
      throw ConfigError("flip_rate requires at least 2 classes");
    }
    if (config.ambiguous_fraction > 0.0) {
      throw ConfigError("ambiguous_fraction requires at least 2 classes");
    }
  }
  for (auto [a, b] : config.confusable_pairs) {
    if (a >= config.num_classes || b >= config.num_classes) {
      throw ConfigError("confusable_pairs entries must name valid class ids");
    }
    if (a == b) throw ConfigError("confusable_pairs must pair distinct classes");
  }
  const std::uint64_t needed =
      std::uint64_t{config.num_classes} * config.tokens_per_class;
  if (config.vocab_size != 0 && config.vocab_size < needed) {
    throw ConfigError("vocab_size must be at least num_classes * tokens_per_class");
  }
}

namespace {

double parse_double(std::string_view value, const std::string& key) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || p != value.data() + value.size()) {
    throw ConfigError("invalid value for '" + key + "'");
  }
  return out;
}

std::uint64_t parse_uint(std::string_view value, const std::string& key) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || p != value.data() + value.size()) {
    throw ConfigError("invalid value for '" + key + "'");
  }
  return out;
}

std::uint32_t parse_u32(std::string_view value, const std::string& key) {
  std::uint64_t v = parse_uint(value, key);
  if (v > 0xffffffffull) throw ConfigError("invalid value for '" + key + "'");
  return static_cast<std::uint32_t>(v);
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> parse_pairs(
    std::string_view value, const std::string& key) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  if (value.empty()) return pairs;
  std::size_t start = 0;
  while (start <= value.size()) {
    std::size_t end = value.find(',', start);
    if (end == std::string_view::npos) end = value.size();
    std::string_view item = value.substr(start, end - start);
    std::size_t colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw ConfigError("invalid value for '" + key + "' (expected a:b pairs)");
    }
    pairs.emplace_back(parse_u32(item.substr(0, colon), key),
                       parse_u32(item.substr(colon + 1), key));
    if (end == value.size()) break;
    start = end + 1;
  }
  return pairs;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

GenConfig parse_gen_config(const std::string& text) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string_view {
    if (pos >= text.size()) return {};
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    return trim(line);
  };

  std::string_view first;
  do {
    if (pos >= text.size()) throw FormatError("empty generator config", 0);
    first = next_line();
  } while (first.empty() || first.front() == '#');
  if (first != kConfigMagic) {
    if (first.substr(0, kConfigMagic.size() - 1) ==
        kConfigMagic.substr(0, kConfigMagic.size() - 1)) {
      throw VersionError("unsupported generator config version '" +
                         std::string(first) + "'");
    }
    throw FormatError("bad magic (expected '" + std::string(kConfigMagic) + "')", 0);
  }

  GenConfig config;
  while (pos < text.size()) {
    std::string_view line = next_line();
    if (line.empty() || line.front() == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("malformed line '" + std::string(line) +
                        "' (expected key=value)");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));

    if (key == "num_classes") config.num_classes = parse_u32(value, key);
    else if (key == "feature_dim") config.feature_dim = parse_u32(value, key);
    else if (key == "size_min") config.size_min = parse_u32(value, key);
    else if (key == "size_max") config.size_max = parse_u32(value, key);
    else if (key == "size_exponent") config.size_exponent = parse_double(value, key);
    else if (key == "flip_rate") config.flip_rate = parse_double(value, key);
    else if (key == "confusable_pairs") config.confusable_pairs = parse_pairs(value, key);
    else if (key == "representative_fraction") config.representative_fraction = parse_double(value, key);
    else if (key == "ambiguous_fraction") config.ambiguous_fraction = parse_double(value, key);
    else if (key == "sigma_near") config.sigma_near = parse_double(value, key);
    else if (key == "sigma_far") config.sigma_far = parse_double(value, key);
    else if (key == "mix_strength") config.mix_strength = parse_double(value, key);
    else if (key == "prototype_scale") config.prototype_scale = parse_double(value, key);
    else if (key == "tokens_per_class") config.tokens_per_class = parse_u32(value, key);
    else if (key == "vocab_size") config.vocab_size = parse_u32(value, key);
    else if (key == "seed") config.seed = parse_uint(value, key);
    else throw ConfigError("unknown key '" + key + "'");
  }
  validate(config);
  return config;
}

std::string gen_config_to_string(const GenConfig& config) {
  std::string out(kConfigMagic);
  out += '\n';
  char buf[64];
  auto put_uint = [&](const char* key, std::uint64_t v) {
    std::snprintf(buf, sizeof buf, "%s=%llu\n", key,
                  static_cast<unsigned long long>(v));
    out += buf;
  };
  auto put_double = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.17g\n", key, v);
    out += buf;
  };
  put_uint("num_classes", config.num_classes);
  put_uint("feature_dim", config.feature_dim);
  put_uint("size_min", config.size_min);
  put_uint("size_max", config.size_max);
  put_double("size_exponent", config.size_exponent);
  put_double("flip_rate", config.flip_rate);
  out += "confusable_pairs=";
  for (std::size_t i = 0; i < config.confusable_pairs.size(); ++i) {
    if (i) out += ',';
    std::snprintf(buf, sizeof buf, "%u:%u", config.confusable_pairs[i].first,
                  config.confusable_pairs[i].second);
    out += buf;
  }
  out += '\n';
  put_double("representative_fraction", config.representative_fraction);
  put_double("ambiguous_fraction", config.ambiguous_fraction);
  put_double("sigma_near", config.sigma_near);
  put_double("sigma_far", config.sigma_far);
  put_double("mix_strength", config.mix_strength);
  put_double("prototype_scale", config.prototype_scale);
  put_uint("tokens_per_class", config.tokens_per_class);
  put_uint("vocab_size", config.vocab_size);
  put_uint("seed", config.seed);
  return out;
}

GenConfig load_gen_config(const std::string& path) {
  auto data = bytes::read_file(path);
  return parse_gen_config(std::string(data.begin(), data.end()));
}

void save_gen_config(const GenConfig& config, const std::string& path) {
  const std::string text = gen_config_to_string(config);
  bytes::write_file(path, std::span(
      reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

std::vector<std::uint32_t> class_sizes(const GenConfig& config) {
  const std::uint32_t c = config.num_classes;
  std::vector<std::uint32_t> sizes(c);
  for (std::uint32_t j = 0; j < c; ++j) {
    const double u = c > 1 ? static_cast<double>(c - 1 - j) / (c - 1) : 1.0;
    const double raw = config.size_min +
        (config.size_max - config.size_min) * std::pow(u, config.size_exponent);
    sizes[j] = static_cast<std::uint32_t>(std::llround(
        std::clamp(raw, double(config.size_min), double(config.size_max))));
  }
  return sizes;
}

std::uint32_t random_other_class(Rng& rng, std::uint32_t c, std::uint32_t skip) {
  std::uint32_t pick = static_cast<std::uint32_t>(rng.below(c - 1));
  return pick >= skip ? pick + 1 : pick;
}

}  // namespace

Dataset generate(const GenConfig& config) {
  validate(config);
  const std::uint32_t c = config.num_classes;
  const std::uint32_t d = config.feature_dim;
  const std::uint32_t vocab = config.vocab_size != 0
      ? config.vocab_size
      : c * config.tokens_per_class;

  Rng rng = Rng(config.seed).fork(rng_stream::kDatagen);

  Dataset ds;
  ds.num_classes = c;
  ds.feature_dim = d;
  ds.classes.resize(c);

  // distinct query tokens per class
  std::vector<std::uint32_t> vocab_ids(vocab);
  for (std::uint32_t t = 0; t < vocab; ++t) vocab_ids[t] = t;
  rng.shuffle(vocab_ids);
  for (std::uint32_t j = 0; j < c; ++j) {
    ds.classes[j].id = j;
    ds.classes[j].token_ids.assign(
        vocab_ids.begin() + std::size_t{j} * config.tokens_per_class,
        vocab_ids.begin() + std::size_t{j + 1} * config.tokens_per_class);
  }

  Matrix protos(c, d);
  for (std::uint32_t j = 0; j < c; ++j) {
    for (std::uint32_t k = 0; k < d; ++k) {
      protos(j, k) = rng.normal() * config.prototype_scale;
    }
  }

  std::vector<std::vector<std::uint32_t>> partners(c);
  for (auto [a, b] : config.confusable_pairs) {
    partners[a].push_back(b);
    partners[b].push_back(a);
  }

  const auto sizes = class_sizes(config);
  std::uint64_t next_id = 0;
  std::vector<double> feat(d);
  for (std::uint32_t j = 0; j < c; ++j) {
    for (std::uint32_t i = 0; i < sizes[j]; ++i) {
      Instance inst;
      inst.id = next_id++;
      const bool ambiguous = rng.uniform() < config.ambiguous_fraction && c >= 2;
      if (ambiguous) {
        // midpoint instance; the sampled endpoint is both the true and the
        // observed label, so label noise stays entirely under flip_rate
        const std::uint32_t partner = partners[j].empty()
            ? random_other_class(rng, c, j)
            : partners[j][rng.index(partners[j].size())];
        for (std::uint32_t k = 0; k < d; ++k) {
          feat[k] = 0.5 * (protos(j, k) + protos(partner, k)) +
                    rng.normal() * config.sigma_near;
        }
        inst.true_label = rng.uniform() < 0.5 ? j : partner;
      } else {
        const bool representative = rng.uniform() < config.representative_fraction;
        const double sigma = representative ? config.sigma_near : config.sigma_far;
        for (std::uint32_t k = 0; k < d; ++k) {
          feat[k] = protos(j, k) + rng.normal() * sigma;
        }
        if (!partners[j].empty()) {
          const std::uint32_t partner = partners[j][rng.index(partners[j].size())];
          const double t = rng.uniform(0.0, config.mix_strength);
          for (std::uint32_t k = 0; k < d; ++k) {
            feat[k] += t * (protos(partner, k) - protos(j, k));
          }
        }
        inst.true_label = j;
      }
      inst.observed_label = inst.true_label;
      inst.features.assign(feat.begin(), feat.end());
      ds.instances.push_back(std::move(inst));
    }
  }

  // per-instance label flips, concentrated on confusable partners
  for (Instance& inst : ds.instances) {
    if (rng.uniform() < config.flip_rate) {
      const auto& p = partners[inst.true_label];
      inst.observed_label = p.empty()
          ? random_other_class(rng, c, inst.true_label)
          : p[rng.index(p.size())];
    }
  }

  std::vector<std::vector<std::size_t>> members(c);
  for (std::size_t i = 0; i < ds.instances.size(); ++i) {
    members[ds.instances[i].observed_label].push_back(i);
  }
  for (std::uint32_t j = 0; j < c; ++j) {
    ds.classes[j].size = static_cast<std::uint32_t>(members[j].size());
    if (members[j].empty()) {
      ds.warnings.push_back("class " + std::to_string(j) +
                            " has no instances after label noise");
    }
  }

  // ranking: mislabeled instances land in the bottom 70% of their class
  for (std::uint32_t j = 0; j < c; ++j) {
    const std::size_t n = members[j].size();
    if (n == 0) continue;
    std::vector<std::size_t> noisy, clean;
    for (std::size_t idx : members[j]) {
      (ds.instances[idx].observed_label != ds.instances[idx].true_label ? noisy
                                                                        : clean)
          .push_back(idx);
    }
    std::size_t cut = static_cast<std::size_t>(0.3 * static_cast<double>(n));
    if (n - cut < noisy.size()) cut = n - noisy.size();
    std::vector<std::uint32_t> bottom;
    for (std::size_t r = cut + 1; r <= n; ++r) {
      bottom.push_back(static_cast<std::uint32_t>(r));
    }
    rng.shuffle(bottom);
    for (std::size_t i = 0; i < noisy.size(); ++i) {
      ds.instances[noisy[i]].source_rank = bottom[i];
    }
    std::vector<std::uint32_t> rest(bottom.begin() + noisy.size(), bottom.end());
    for (std::size_t r = 1; r <= cut; ++r) {
      rest.push_back(static_cast<std::uint32_t>(r));
    }
    rng.shuffle(rest);
    for (std::size_t i = 0; i < clean.size(); ++i) {
      ds.instances[clean[i]].source_rank = rest[i];
    }
  }

  return ds;
}

void split(Dataset& dataset, double val_fraction, Rng& rng) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw InvalidInputError("val_fraction must be in (0,1)");
  }
  dataset.train_ids.clear();
  dataset.val_ids.clear();

  std::vector<std::vector<std::uint64_t>> by_true(dataset.num_classes);
  for (const Instance& inst : dataset.instances) {
    by_true[inst.true_label].push_back(inst.id);
  }
  for (std::uint32_t j = 0; j < dataset.num_classes; ++j) {
    auto& ids = by_true[j];
    if (ids.empty()) continue;
    if (ids.size() == 1) {
      dataset.warnings.push_back("class " + std::to_string(j) +
                                 " has a single instance; assigned to train");
      dataset.train_ids.push_back(ids[0]);
      continue;
    }
    rng.shuffle(ids);
    const std::size_t n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(
            std::llround(val_fraction * static_cast<double>(ids.size()))),
        1, ids.size() - 1);
    dataset.val_ids.insert(dataset.val_ids.end(), ids.begin(), ids.begin() + n_val);
    dataset.train_ids.insert(dataset.train_ids.end(), ids.begin() + n_val, ids.end());
  }
  std::sort(dataset.train_ids.begin(), dataset.train_ids.end());
  std::sort(dataset.val_ids.begin(), dataset.val_ids.end());
}

std::unordered_map<std::uint64_t, std::size_t> Dataset::id_index() const {
  std::unordered_map<std::uint64_t, std::size_t> index;
  index.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    index.emplace(instances[i].id, i);
  }
  return index;
}

std::vector<std::uint8_t> serialize(const Dataset& dataset) {
  bytes::Writer w;
  w.magic(kDatasetMagic);
  w.u32(dataset.num_classes);
  w.u32(dataset.feature_dim);
  w.u64(dataset.instances.size());
  for (const Instance& inst : dataset.instances) {
    w.u64(inst.id);
    w.u32(inst.true_label);
    w.u32(inst.observed_label);
    w.u32(inst.source_rank);
    for (float f : inst.features) w.f32(f);
  }
  for (const ClassMeta& cls : dataset.classes) {
    w.u32(static_cast<std::uint32_t>(cls.token_ids.size()));
    for (std::uint32_t t : cls.token_ids) w.u32(t);
  }
  w.u64(dataset.train_ids.size());
  for (std::uint64_t id : dataset.train_ids) w.u64(id);
  w.u64(dataset.val_ids.size());
  for (std::uint64_t id : dataset.val_ids) w.u64(id);
  return std::move(w.buf);
}

Dataset deserialize(std::span<const std::uint8_t> data) {
  bytes::Reader r(data);
  r.magic(kDatasetMagic);

  Dataset ds;
  ds.num_classes = r.u32();
  ds.feature_dim = r.u32();
  const std::uint64_t n = r.u64();
  const std::size_t record = 8 + 4 + 4 + 4 + std::size_t{ds.feature_dim} * 4;
  ds.instances.reserve(static_cast<std::size_t>(
      std::min<std::uint64_t>(n, r.remaining() / std::max<std::size_t>(record, 1))));

  for (std::uint64_t i = 0; i < n; ++i) {
    Instance inst;
    inst.id = r.u64();
    std::size_t at = r.offset();
    inst.true_label = r.u32();
    if (inst.true_label >= ds.num_classes) {
      throw FormatError("true_label out of range", at);
    }
    at = r.offset();
    inst.observed_label = r.u32();
    if (inst.observed_label >= ds.num_classes) {
      throw FormatError("observed_label out of range", at);
    }
    at = r.offset();
    inst.source_rank = r.u32();
    if (inst.source_rank < 1) throw FormatError("source_rank must be >= 1", at);
    inst.features.resize(ds.feature_dim);
    for (std::uint32_t k = 0; k < ds.feature_dim; ++k) {
      at = r.offset();
      inst.features[k] = r.f32();
      if (!std::isfinite(inst.features[k])) {
        throw FormatError("non-finite feature", at);
      }
    }
    ds.instances.push_back(std::move(inst));
  }

  ds.classes.resize(ds.num_classes);
  for (std::uint32_t j = 0; j < ds.num_classes; ++j) {
    ds.classes[j].id = j;
    const std::uint32_t count = r.u32();
    ds.classes[j].token_ids.resize(count);
    for (std::uint32_t t = 0; t < count; ++t) ds.classes[j].token_ids[t] = r.u32();
  }
  for (const Instance& inst : ds.instances) {
    ds.classes[inst.observed_label].size += 1;
  }

  std::unordered_set<std::uint64_t> known;
  known.reserve(ds.instances.size());
  for (const Instance& inst : ds.instances) known.insert(inst.id);
  std::unordered_set<std::uint64_t> seen;
  auto read_split = [&](std::vector<std::uint64_t>& out) {
    const std::uint64_t count = r.u64();
    out.reserve(static_cast<std::size_t>(
        std::min<std::uint64_t>(count, r.remaining() / 8)));
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::size_t at = r.offset();
      const std::uint64_t id = r.u64();
      if (!known.contains(id)) {
        throw FormatError("split references unknown instance id", at);
      }
      if (!seen.insert(id).second) {
        throw FormatError("instance id appears in splits twice", at);
      }
      out.push_back(id);
    }
  };
  read_split(ds.train_ids);
  read_split(ds.val_ids);
  r.expect_eof();
  return ds;
}

void save(const Dataset& dataset, const std::string& path) {
  bytes::write_file(path, serialize(dataset));
}

Dataset load(const std::string& path) {
  auto data = bytes::read_file(path);
  return deserialize(data);
}

}  // namespace urnet
