// Command-line driver: gen, train, ablate, eval, report. Every command writes
// a plain-text run manifest into --out before heavy work starts and finalizes
// it with artifact hashes once everything is on disk; the exit code is 0 only
// when all requested artifacts were fully written.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "urnet/bytes.hpp"
#include "urnet/datagen.hpp"
#include "urnet/errors.hpp"
#include "urnet/pipeline.hpp"
#include "urnet/reweight.hpp"

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr const char* kManifestMagic = "urnet-manifest v1";

using urnet::bytes::fnv1a64;

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) {
  return hash_hex(fnv1a64(urnet::bytes::read_file(path)));
}

void write_text(const std::string& path, const std::string& text) {
  urnet::bytes::write_file(
      path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::string& path) {
  const auto data = urnet::bytes::read_file(path);
  return std::string(data.begin(), data.end());
}

// ---------------------------------------------------------------------------
// run manifest

struct Manifest {
  std::string command;
  std::string invocation;
  std::uint64_t seed = 0;
  std::uint32_t threads = 1;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::pair<std::string, std::string>> artifacts;
  bool complete = false;
};

void write_manifest(const std::string& dir, const Manifest& m) {
  std::string out = std::string(kManifestMagic) + "\n";
  out += "command = " + m.command + "\n";
  out += "invocation = " + m.invocation + "\n";
  out += "tool_version = " + std::string(kToolVersion) + "\n";
  out += "created_unix = " + std::to_string(std::time(nullptr)) + "\n";
  out += "seed = " + std::to_string(m.seed) + "\n";
  out += "threads = " + std::to_string(m.threads) + "\n";
  for (const auto& [k, v] : m.inputs) out += k + " = " + v + "\n";
  for (const auto& [k, v] : m.config) out += "config " + k + " = " + v + "\n";
  for (const auto& [k, v] : m.artifacts) out += "artifact " + k + " = " + v + "\n";
  out += std::string("status = ") + (m.complete ? "complete" : "started") + "\n";
  write_text(dir + "/manifest.txt", out);
}

void add_artifact(Manifest& m, const std::string& dir, const std::string& name) {
  m.artifacts.emplace_back(name, file_hash(dir + "/" + name));
}

struct ParsedManifest {
  std::string command;
  std::string status;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> artifacts;
};

// throws FormatError on anything that does not parse as a manifest
ParsedManifest parse_manifest(const std::string& path) {
  const std::string text = read_text(path);
  ParsedManifest m;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    if (first) {
      if (line != kManifestMagic) {
        throw urnet::FormatError("corrupted manifest: bad header line", 0);
      }
      first = false;
    } else if (!line.empty()) {
      const std::size_t sep = line.find(" = ");
      if (sep == std::string::npos) {
        throw urnet::FormatError("corrupted manifest: malformed line '" + line + "'", pos);
      }
      const std::string key = line.substr(0, sep);
      const std::string value = line.substr(sep + 3);
      if (key == "command") m.command = value;
      if (key == "status") m.status = value;
      if (key == "seed") m.seed = std::strtoull(value.c_str(), nullptr, 10);
      if (key.starts_with("artifact ")) m.artifacts.emplace_back(key.substr(9), value);
    }
    pos = eol + 1;
  }
  if (first || m.command.empty() || m.status.empty()) {
    throw urnet::FormatError("corrupted manifest: missing required fields", 0);
  }
  return m;
}

std::string join_args(int argc, char** argv) {
  std::string out;
  for (int i = 1; i < argc; ++i) {
    if (!out.empty()) out += ' ';
    out += argv[i];
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const std::string token = text.substr(pos, comma - pos);
    std::uint64_t value = 0;
    const auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || p != token.data() + token.size()) {
      throw urnet::InvalidInputError("seeds must be a comma list of integers, got '" +
                                     token + "'");
    }
    seeds.push_back(value);
    pos = comma + 1;
  }
  return seeds;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

std::string warnings_text(const std::vector<std::string>& warnings) {
  std::string out;
  for (const auto& w : warnings) out += w + "\n";
  return out;
}

nlohmann::json metrics_json(const urnet::StageMetrics& m) {
  return {{"top1", m.top1},
          {"top5", m.top5},
          {"macro_top1", m.macro_top1},
          {"strategies", m.strategies.to_string()}};
}

// ---------------------------------------------------------------------------
// shared option bundles

struct TrainFlags {
  std::uint32_t baseline_epochs = 40;
  std::uint32_t stage_epochs = 20;
  std::uint32_t batch_size = 64;
  double lr = 0.1;
  double stage_lr = 0.03;
  double momentum = 0.9;
  double lr_decay = 0.5;
  std::uint32_t lr_decay_every = 15;
  double alpha = 0.5;
  double beta = 0.8;
  double lambda_bag = 1.0;
  std::uint32_t confidence_epochs = 40;
  double confidence_lr = 0.05;
  std::uint32_t top_rank = 30;
  std::uint32_t hidden = 64;
  std::uint32_t hidden_layers = 2;
  std::uint32_t bag_hidden = 32;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--baseline-epochs", f.baseline_epochs, "baseline training epochs");
  cmd->add_option("--stage-epochs", f.stage_epochs, "fine-tuning epochs per stage");
  cmd->add_option("--batch-size", f.batch_size, "mini-batch size");
  cmd->add_option("--lr", f.lr, "baseline learning rate");
  cmd->add_option("--stage-lr", f.stage_lr, "fine-tuning learning rate");
  cmd->add_option("--momentum", f.momentum, "SGD momentum");
  cmd->add_option("--lr-decay", f.lr_decay, "step-decay factor");
  cmd->add_option("--lr-decay-every", f.lr_decay_every, "epochs between decays (0 = off)");
  cmd->add_option("--alpha", f.alpha, "class-weight interpolation");
  cmd->add_option("--beta", f.beta, "smoothed-target mix");
  cmd->add_option("--lambda-bag", f.lambda_bag, "bag-loss coefficient");
  cmd->add_option("--confidence-epochs", f.confidence_epochs, "confidence-model epochs");
  cmd->add_option("--confidence-lr", f.confidence_lr, "confidence-model learning rate");
  cmd->add_option("--top-rank", f.top_rank, "confidence positives per class");
  cmd->add_option("--hidden", f.hidden, "hidden width");
  cmd->add_option("--hidden-layers", f.hidden_layers, "hidden layer count");
  cmd->add_option("--bag-hidden", f.bag_hidden, "saliency scorer width");
}

urnet::ClassifierConfig model_config(const TrainFlags& f, const urnet::Dataset& ds) {
  urnet::ClassifierConfig config;
  config.input_dim = ds.feature_dim;
  config.num_classes = ds.num_classes;
  config.hidden.assign(f.hidden_layers, f.hidden);
  config.bag_hidden = f.bag_hidden;
  return config;
}

urnet::OptConfig baseline_opt(const TrainFlags& f) {
  urnet::OptConfig opt;
  opt.epochs = f.baseline_epochs;
  opt.batch_size = f.batch_size;
  opt.lr = f.lr;
  opt.momentum = f.momentum;
  opt.lr_decay = f.lr_decay;
  opt.lr_decay_every = f.lr_decay_every;
  return opt;
}

urnet::OptConfig stage_opt(const TrainFlags& f) {
  urnet::OptConfig opt = baseline_opt(f);
  opt.epochs = f.stage_epochs;
  opt.lr = f.stage_lr;
  return opt;
}

urnet::ConfidenceConfig confidence_config(const TrainFlags& f) {
  urnet::ConfidenceConfig config;
  config.epochs = f.confidence_epochs;
  config.lr = f.confidence_lr;
  config.top_rank = f.top_rank;
  return config;
}

void snapshot_flags(Manifest& m, const TrainFlags& f) {
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  m.config = {{"baseline_epochs", std::to_string(f.baseline_epochs)},
              {"stage_epochs", std::to_string(f.stage_epochs)},
              {"batch_size", std::to_string(f.batch_size)},
              {"lr", num(f.lr)},
              {"stage_lr", num(f.stage_lr)},
              {"momentum", num(f.momentum)},
              {"lr_decay", num(f.lr_decay)},
              {"lr_decay_every", std::to_string(f.lr_decay_every)},
              {"alpha", num(f.alpha)},
              {"beta", num(f.beta)},
              {"lambda_bag", num(f.lambda_bag)},
              {"confidence_epochs", std::to_string(f.confidence_epochs)},
              {"confidence_lr", num(f.confidence_lr)},
              {"top_rank", std::to_string(f.top_rank)},
              {"hidden", std::to_string(f.hidden)},
              {"hidden_layers", std::to_string(f.hidden_layers)},
              {"bag_hidden", std::to_string(f.bag_hidden)}};
}

// ---------------------------------------------------------------------------
// subcommands

int run_gen(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed, double val_fraction,
            std::uint32_t threads, const std::string& invocation) {
  urnet::GenConfig config = urnet::load_gen_config(config_path);
  if (seed) config.seed = *seed;  // the command line wins over the file
  urnet::validate(config);

  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  manifest.command = "gen";
  manifest.invocation = invocation;
  manifest.seed = config.seed;
  manifest.threads = threads;
  manifest.inputs = {{"gen_config_path", config_path},
                     {"gen_config_hash", file_hash(config_path)}};
  // flatten the config snapshot: one line per key keeps the manifest greppable
  {
    const std::string text = urnet::gen_config_to_string(config);
    std::size_t pos = text.find('\n') + 1;  // skip the format magic
    while (pos < text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      const std::string line = text.substr(pos, eol - pos);
      const std::size_t sep = line.find('=');
      if (sep != std::string::npos) {
        manifest.config.emplace_back(line.substr(0, sep), line.substr(sep + 1));
      }
      pos = eol + 1;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", val_fraction);
    manifest.config.emplace_back("val_fraction", buf);
  }
  write_manifest(out_dir, manifest);

  urnet::Dataset ds = urnet::generate(config);
  urnet::Rng split_rng = urnet::Rng(config.seed).fork(urnet::rng_stream::kSplit);
  urnet::split(ds, val_fraction, split_rng);
  urnet::save(ds, out_dir + "/dataset.bin");
  write_text(out_dir + "/warnings.txt", warnings_text(ds.warnings));
  print_warnings(ds.warnings);

  add_artifact(manifest, out_dir, "dataset.bin");
  add_artifact(manifest, out_dir, "warnings.txt");
  manifest.complete = true;
  write_manifest(out_dir, manifest);
  std::printf("wrote %s/dataset.bin (%u classes, %zu instances)\n", out_dir.c_str(),
              ds.num_classes, ds.instances.size());
  return 0;
}

int run_train(const std::string& dataset_path, const std::string& out_dir,
              const std::string& strategies_text, std::uint64_t seed,
              std::uint32_t threads, const TrainFlags& flags,
              const std::string& invocation) {
  const urnet::StrategySet strategies = urnet::parse_strategies(strategies_text);
  const urnet::Dataset ds = urnet::load(dataset_path);

  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  manifest.command = "train";
  manifest.invocation = invocation;
  manifest.seed = seed;
  manifest.threads = threads;
  snapshot_flags(manifest, flags);
  manifest.config.emplace_back("strategies", strategies.to_string());
  manifest.inputs = {{"dataset", dataset_path}, {"dataset_hash", file_hash(dataset_path)}};
  write_manifest(out_dir, manifest);

  std::vector<std::string> warnings;
  const urnet::Classifier baseline =
      urnet::train_baseline(ds, model_config(flags, ds), baseline_opt(flags), seed, &warnings);
  urnet::ArtifactStore store(baseline, ds, out_dir + "/cache");

  urnet::StageConfig stage;
  stage.strategies = strategies;
  stage.opt = stage_opt(flags);
  stage.alpha = flags.alpha;
  stage.beta = flags.beta;
  stage.lambda_bag = flags.lambda_bag;
  stage.confidence = confidence_config(flags);
  stage.seed = seed;

  urnet::StageConfig baseline_eval = stage;
  baseline_eval.strategies = urnet::StrategySet{};
  const urnet::StageResult base_result =
      urnet::run_stage(baseline, ds, baseline_eval, store, threads);
  const urnet::StageResult result =
      strategies.any() ? urnet::run_stage(baseline, ds, stage, store, threads) : base_result;

  warnings.insert(warnings.end(), result.warnings.begin(), result.warnings.end());
  warnings.insert(warnings.end(), store.warnings().begin(), store.warnings().end());

  urnet::save_checkpoint(baseline, out_dir + "/baseline.bin");
  urnet::save_checkpoint(result.model, out_dir + "/checkpoint.bin");
  nlohmann::json metrics = {{"seed", seed},
                            {"strategies", strategies.to_string()},
                            {"baseline", metrics_json(base_result.metrics)},
                            {"stage", metrics_json(result.metrics)}};
  write_text(out_dir + "/metrics.json", metrics.dump(2) + "\n");
  write_text(out_dir + "/weights.csv", urnet::ledger_csv(result.ledger));
  write_text(out_dir + "/confusion.csv", urnet::confusion_csv(store.confusion()));
  write_text(out_dir + "/warnings.txt", warnings_text(warnings));
  print_warnings(warnings);

  for (const char* name : {"baseline.bin", "checkpoint.bin", "metrics.json",
                           "weights.csv", "confusion.csv", "warnings.txt"}) {
    add_artifact(manifest, out_dir, name);
  }
  manifest.complete = true;
  write_manifest(out_dir, manifest);
  std::printf("%s\n", metrics.dump(2).c_str());
  return 0;
}

int run_ablate(const std::string& dataset_path, const std::string& out_dir,
               const std::vector<std::uint64_t>& seeds, std::uint32_t threads,
               const TrainFlags& flags, const std::string& invocation) {
  const urnet::Dataset ds = urnet::load(dataset_path);

  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  manifest.command = "ablate";
  manifest.invocation = invocation;
  manifest.seed = seeds.empty() ? 0 : seeds.front();
  manifest.threads = threads;
  snapshot_flags(manifest, flags);
  std::string seed_list;
  for (std::uint64_t s : seeds) {
    if (!seed_list.empty()) seed_list += ',';
    seed_list += std::to_string(s);
  }
  manifest.config.emplace_back("seeds", seed_list);
  manifest.inputs = {{"dataset", dataset_path}, {"dataset_hash", file_hash(dataset_path)}};
  write_manifest(out_dir, manifest);

  urnet::AblateConfig config;
  config.model = model_config(flags, ds);
  config.baseline_opt = baseline_opt(flags);
  config.stage_opt = stage_opt(flags);
  config.alpha = flags.alpha;
  config.beta = flags.beta;
  config.lambda_bag = flags.lambda_bag;
  config.confidence = confidence_config(flags);
  config.seeds = seeds;
  config.cache_dir = out_dir + "/cache";
  config.threads = threads;

  const urnet::AblationReport report = urnet::ablate(ds, config);
  write_text(out_dir + "/report.csv", urnet::report_csv(report));
  write_text(out_dir + "/aggregate.csv", urnet::aggregate_csv(report));
  write_text(out_dir + "/report.json", urnet::report_json(report));
  const std::string chart = urnet::report_bar_chart(report);
  write_text(out_dir + "/chart.txt", chart);
  for (std::size_t k = 0; k < report.first_seed_ledgers.size(); ++k) {
    const auto& [stage_name, ledger] = report.first_seed_ledgers[k];
    write_text(out_dir + "/weights_" + stage_name + ".csv", urnet::ledger_csv(ledger));
  }
  write_text(out_dir + "/warnings.txt", warnings_text(report.warnings));
  print_warnings(report.warnings);

  add_artifact(manifest, out_dir, "report.csv");
  add_artifact(manifest, out_dir, "aggregate.csv");
  add_artifact(manifest, out_dir, "report.json");
  add_artifact(manifest, out_dir, "chart.txt");
  for (const auto& [stage_name, ledger] : report.first_seed_ledgers) {
    add_artifact(manifest, out_dir, "weights_" + stage_name + ".csv");
  }
  add_artifact(manifest, out_dir, "warnings.txt");
  manifest.complete = true;
  write_manifest(out_dir, manifest);
  std::printf("%s", chart.c_str());
  return 0;
}

int run_eval(const std::string& dataset_path, const std::string& checkpoint_path,
             const std::string& out_dir, const std::string& split_name,
             const std::string& topk_text, std::uint64_t seed, std::uint32_t threads,
             const std::string& invocation) {
  const urnet::Dataset ds = urnet::load(dataset_path);
  const urnet::Classifier model = urnet::load_checkpoint(checkpoint_path);
  if (split_name != "train" && split_name != "val") {
    throw urnet::InvalidInputError("split must be 'train' or 'val'");
  }
  std::vector<std::uint32_t> ks;
  for (std::uint64_t v : parse_seed_list(topk_text)) {
    ks.push_back(static_cast<std::uint32_t>(v));
  }

  std::filesystem::create_directories(out_dir);
  Manifest manifest;
  manifest.command = "eval";
  manifest.invocation = invocation;
  manifest.seed = seed;
  manifest.threads = threads;
  manifest.config = {{"split", split_name}, {"topk", topk_text}};
  manifest.inputs = {{"dataset", dataset_path},
                     {"dataset_hash", file_hash(dataset_path)},
                     {"checkpoint", checkpoint_path},
                     {"checkpoint_hash", file_hash(checkpoint_path)}};
  write_manifest(out_dir, manifest);

  const auto& ids = split_name == "train" ? ds.train_ids : ds.val_ids;
  const urnet::EvalResult ev = urnet::evaluate(model, ds, ids, ks, threads);
  nlohmann::json metrics;
  metrics["split"] = split_name;
  metrics["macro_top1"] = ev.macro_top1;
  for (const auto& [k, acc] : ev.topk) metrics["topk"][std::to_string(k)] = acc;
  write_text(out_dir + "/metrics.json", metrics.dump(2) + "\n");

  add_artifact(manifest, out_dir, "metrics.json");
  manifest.complete = true;
  write_manifest(out_dir, manifest);
  std::printf("%s\n", metrics.dump(2).c_str());
  return 0;
}

// column-aligned print of a small CSV
void print_csv_table(const std::string& csv) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t eol = csv.find('\n', pos);
    if (eol == std::string::npos) eol = csv.size();
    const std::string line = csv.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t c = 0;
    while (c <= line.size()) {
      std::size_t comma = line.find(',', c);
      if (comma == std::string::npos) comma = line.size();
      cells.push_back(line.substr(c, comma - c));
      c = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    if (widths.size() < row.size()) widths.resize(row.size(), 0);
    for (std::size_t i = 0; i < row.size(); ++i) {
      widths[i] = std::max(widths[i], row[i].size());
    }
  }
  for (const auto& row : rows) {
    std::string line = "  ";
    for (std::size_t i = 0; i < row.size(); ++i) {
      line += row[i];
      if (i + 1 < row.size()) line += std::string(widths[i] - row[i].size() + 2, ' ');
    }
    std::printf("%s\n", line.c_str());
  }
}

void print_weight_summary(const std::string& name, const std::string& csv) {
  // columns: id,w_class,w_cluster,w_confidence,combined
  double mins[3], maxs[3], sums[3];
  for (int c = 0; c < 3; ++c) {
    mins[c] = std::numeric_limits<double>::infinity();
    maxs[c] = -mins[c];
    sums[c] = 0.0;
  }
  std::size_t count = 0;
  std::size_t pos = csv.find('\n');
  if (pos == std::string::npos) return;
  pos += 1;
  while (pos < csv.size()) {
    std::size_t eol = csv.find('\n', pos);
    if (eol == std::string::npos) eol = csv.size();
    const std::string line = csv.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    std::size_t c = line.find(',');
    double values[3];
    for (int i = 0; i < 3; ++i) {
      const std::size_t next = line.find(',', c + 1);
      values[i] = std::strtod(line.substr(c + 1, next - c - 1).c_str(), nullptr);
      c = next;
    }
    for (int i = 0; i < 3; ++i) {
      mins[i] = std::min(mins[i], values[i]);
      maxs[i] = std::max(maxs[i], values[i]);
      sums[i] += values[i];
    }
    count += 1;
  }
  if (count == 0) return;
  const char* columns[3] = {"w_class", "w_cluster", "w_confidence"};
  std::printf("weight summary (%s):\n", name.c_str());
  for (int i = 0; i < 3; ++i) {
    std::printf("  %-13s min %.4f  mean %.4f  max %.4f\n", columns[i], mins[i],
                sums[i] / static_cast<double>(count), maxs[i]);
  }
}

int run_report(const std::string& run_dir) {
  if (!std::filesystem::exists(run_dir) || std::filesystem::is_empty(run_dir)) {
    std::fprintf(stderr, "no runs found in '%s'\n", run_dir.c_str());
    return 1;
  }
  const std::string manifest_path = run_dir + "/manifest.txt";
  if (!std::filesystem::exists(manifest_path)) {
    std::fprintf(stderr, "no manifest in '%s'\n", run_dir.c_str());
    return 1;
  }
  const ParsedManifest manifest = parse_manifest(manifest_path);
  std::printf("run: %s (%s), seed %llu\n", manifest.command.c_str(),
              manifest.status.c_str(), static_cast<unsigned long long>(manifest.seed));

  for (const auto& [name, hash] : manifest.artifacts) {
    const std::string path = run_dir + "/" + name;
    if (!std::filesystem::exists(path)) {
      std::printf("  missing artifact: %s\n", name.c_str());
    } else if (file_hash(path) != hash) {
      std::printf("  modified since the run: %s\n", name.c_str());
    }
  }

  if (std::filesystem::exists(run_dir + "/report.csv")) {
    std::printf("stage table:\n");
    print_csv_table(read_text(run_dir + "/report.csv"));
  }
  if (std::filesystem::exists(run_dir + "/aggregate.csv")) {
    std::printf("aggregate over seeds:\n");
    print_csv_table(read_text(run_dir + "/aggregate.csv"));
  }
  if (std::filesystem::exists(run_dir + "/metrics.json")) {
    std::printf("metrics:\n%s\n", read_text(run_dir + "/metrics.json").c_str());
  }
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("weights") && name.ends_with(".csv")) {
      print_weight_summary(name, read_text(entry.path().string()));
    }
  }
  if (std::filesystem::exists(run_dir + "/warnings.txt")) {
    const std::string warnings = read_text(run_dir + "/warnings.txt");
    if (warnings.empty()) {
      std::printf("warnings: none\n");
    } else {
      std::printf("warnings:\n%s", warnings.c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weight-manipulation training toolkit for imbalanced, noisy web-style data"};
  app.require_subcommand(1);

  std::string config_path, dataset_path, checkpoint_path, out_dir, run_dir;
  std::string strategies_text = "none";
  std::string seeds_text, split_name = "val", topk_text = "1,5";
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> gen_seed;
  std::uint32_t threads = 1;
  double val_fraction = 0.2;
  TrainFlags flags;

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "generator config file")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", [&gen_seed](const std::vector<std::string>& v) {
    gen_seed = std::strtoull(v[0].c_str(), nullptr, 10);
    return true;
  }, "seed (overrides the config file)");
  gen->add_option("--val-fraction", val_fraction, "validation fraction");
  gen->add_option("--threads", threads, "worker threads");

  CLI::App* train = app.add_subcommand("train", "train a baseline and optionally one stage");
  train->add_option("--dataset", dataset_path, "dataset file")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--strategies", strategies_text,
                    "comma list of class,cluster,instance,bag,label or none");
  train->add_option("--seed", seed, "run seed");
  train->add_option("--threads", threads, "worker threads");
  add_train_flags(train, flags);

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the staged ablation protocol");
  ablate_cmd->add_option("--dataset", dataset_path, "dataset file")->required();
  ablate_cmd->add_option("--out", out_dir, "output directory")->required();
  ablate_cmd->add_option("--seeds", seeds_text, "comma list of seeds");
  ablate_cmd->add_option("--seed", seed, "single seed when --seeds is absent");
  ablate_cmd->add_option("--threads", threads, "worker threads");
  add_train_flags(ablate_cmd, flags);

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--dataset", dataset_path, "dataset file")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--out", out_dir, "output directory")->required();
  eval_cmd->add_option("--split", split_name, "train or val");
  eval_cmd->add_option("--topk", topk_text, "comma list of k values");
  eval_cmd->add_option("--seed", seed, "run seed (recorded in the manifest)");
  eval_cmd->add_option("--threads", threads, "worker threads");

  CLI::App* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("run_dir", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  const std::string invocation = join_args(argc, argv);
  try {
    if (gen->parsed()) {
      return run_gen(config_path, out_dir, gen_seed, val_fraction, threads, invocation);
    }
    if (train->parsed()) {
      return run_train(dataset_path, out_dir, strategies_text, seed, threads, flags,
                       invocation);
    }
    if (ablate_cmd->parsed()) {
      const std::vector<std::uint64_t> seeds =
          seeds_text.empty() ? std::vector<std::uint64_t>{seed} : parse_seed_list(seeds_text);
      return run_ablate(dataset_path, out_dir, seeds, threads, flags, invocation);
    }
    if (eval_cmd->parsed()) {
      return run_eval(dataset_path, checkpoint_path, out_dir, split_name, topk_text, seed,
                      threads, invocation);
    }
    if (report->parsed()) {
      return run_report(run_dir);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
