#pragma once
// Staged training protocol: baseline training, cumulative reweighting stages,
// evaluation against true labels, and the ablation report.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "urnet/datagen.hpp"
#include "urnet/model.hpp"
#include "urnet/reweight.hpp"
#include "urnet/rng.hpp"

namespace urnet {

struct OptConfig {
  std::uint32_t epochs = 30;
  std::uint32_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double lr_decay = 0.5;
  std::uint32_t lr_decay_every = 15;  // epochs between decays; 0 disables the schedule
  void validate() const;
};

// The five reweighting strategies. Disabling one must leave no trace in the
// loss: its component weights stay 1, smoothing keeps beta = 1, bags keep
// lambda = 0.
struct StrategySet {
  bool use_class = false;
  bool use_cluster = false;
  bool use_confidence = false;
  bool use_bags = false;
  bool use_smoothing = false;
  bool any() const {
    return use_class || use_cluster || use_confidence || use_bags ||
           use_smoothing;
  }
  std::string to_string() const;  // canonical order; "none" when empty
  bool operator==(const StrategySet&) const = default;
};

// Accepts "none" or a comma list of class,cluster,instance,bag,label.
StrategySet parse_strategies(std::string_view text);

// The default ablation chain: each entry adds one strategy to the previous.
std::vector<StrategySet> cumulative_stages();

// Stage display names aligned with cumulative_stages(), index 0 = baseline.
extern const char* const kStageNames[6];

// Top-5 validation trajectory published for the full-scale system. Kept as a
// reference column only; desk-scale runs are not expected to reproduce it.
inline constexpr double kReferenceTop5[6] = {71.7, 72.8, 75.3, 76.0, 76.3, 76.5};

struct StageConfig {
  StrategySet strategies;
  OptConfig opt;
  double alpha = 0.5;       // class-weight interpolation
  double beta = 0.8;        // smoothed-target mix
  double lambda_bag = 1.0;  // bag-loss coefficient when bags are enabled
  ConfidenceConfig confidence;
  std::uint64_t seed = 1;
};

// Derived quantities of one (baseline, dataset) pair, built lazily on first
// access and optionally mirrored to a cache directory. Every component is a
// pure function of the two content hashes: the k-means and confidence streams
// are seeded from the key, never from a run seed. A corrupt cache file is
// rebuilt and reported through warnings().
class ArtifactStore {
 public:
  ArtifactStore(const Classifier& baseline, const Dataset& dataset,
                std::string cache_dir = "");

  std::uint64_t key() const { return key_; }
  const Classifier& baseline() const { return baseline_; }

  // confusion counts of the frozen baseline on the train split
  const ConfusionMatrix& confusion();
  // observed-class group weight per train instance; a class whose pool cannot
  // be clustered falls back to weight 1 for its members, with a warning
  const std::unordered_map<std::uint64_t, double>& cluster_weight();
  // raw (unclamped) image/text cosine per train instance
  const std::unordered_map<std::uint64_t, double>& confidence(
      const ConfidenceConfig& config);
  // frozen baseline top-1 per train instance
  const std::unordered_map<std::uint64_t, std::uint32_t>& predicted();

  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  std::string cache_path(const char* name, std::uint64_t file_key) const;

  const Classifier baseline_;
  const Dataset& dataset_;
  std::string cache_dir_;
  std::uint64_t key_ = 0;
  bool have_confusion_ = false;
  bool have_clusters_ = false;
  bool have_confidence_ = false;
  bool have_predicted_ = false;
  std::uint64_t confidence_key_ = 0;  // confidence scores depend on their config
  ConfusionMatrix confusion_;
  std::unordered_map<std::uint64_t, double> cluster_weight_;
  std::unordered_map<std::uint64_t, double> confidence_;
  std::unordered_map<std::uint64_t, std::uint32_t> predicted_;
  std::vector<std::string> warnings_;
};

// Per-instance loss inputs for one stage, aligned index-for-index with ids.
// Components of disabled strategies are exactly 1 and targets collapse to
// one-hot, so the assembled loss is bitwise the previous stage's.
struct StageInputs {
  std::vector<std::uint64_t> ids;  // the train split
  std::vector<Target> targets;
  std::vector<double> w_class;
  std::vector<double> w_cluster;
  std::vector<double> w_confidence;
  WeightLedger ledger;  // combined weights over the full split, mean 1
};

StageInputs stage_inputs(const Dataset& dataset, const StageConfig& config,
                         ArtifactStore& artifacts);

// Mini-batch SGD with momentum and step decay over inputs.ids. On a
// non-finite loss the pending update is discarded and a TrainingError is
// thrown; the model keeps the last finite parameters. Degenerate batches
// (all combined weights zero) are skipped with a warning. Parameters are
// snapped to checkpoint precision on completion.
void sgd_train(Classifier& model, const Dataset& dataset,
               const StageInputs& inputs, const OptConfig& opt, bool use_bags,
               double lambda_bag, Rng& rng,
               std::vector<std::string>* warnings = nullptr);

// Plain cross-entropy baseline: unit weights, one-hot targets, no bags.
Classifier train_baseline(const Dataset& dataset,
                          const ClassifierConfig& model_config,
                          const OptConfig& opt, std::uint64_t seed,
                          std::vector<std::string>* warnings = nullptr);

// Top-k accuracy against true labels, plus macro-averaged (per-class mean)
// top-1. Accuracies are fractions in [0, 1]. The parallel map reduces integer
// hit counts, so the result is independent of the thread count.
struct EvalResult {
  std::map<std::uint32_t, double> topk;
  double macro_top1 = 0.0;
};

EvalResult evaluate(const Classifier& model, const Dataset& dataset,
                    std::span<const std::uint64_t> ids,
                    std::span<const std::uint32_t> ks,
                    std::uint32_t threads = 1);

struct StageMetrics {
  StrategySet strategies;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  double top5 = 0.0;  // top-min(5, C) when the dataset has fewer classes
  double macro_top1 = 0.0;
  double wall_seconds = 0.0;
};

struct StageResult {
  Classifier model;
  StageMetrics metrics;
  WeightLedger ledger;
  std::vector<std::string> warnings;
};

// Fine-tunes a copy of the baseline with the stage's composite loss and
// evaluates on the validation split. An empty strategy set skips training and
// reports the baseline's own metrics.
StageResult run_stage(const Classifier& baseline, const Dataset& dataset,
                      const StageConfig& config, ArtifactStore& artifacts,
                      std::uint32_t threads = 1);

struct StageRow {
  std::string stage;  // "baseline" or the strategy added at this stage
  StrategySet strategies;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  double top5 = 0.0;
  double macro_top1 = 0.0;
  double wall_seconds = 0.0;
  double ref_top5 = 0.0;
};

struct StageAggregate {
  std::string stage;
  StrategySet strategies;
  double ref_top5 = 0.0;
  std::size_t runs = 0;
  double top1_mean = 0.0;
  double top1_stddev = 0.0;
  double top5_mean = 0.0;
  double top5_stddev = 0.0;
  double macro_mean = 0.0;
  double macro_stddev = 0.0;
};

struct AblationReport {
  std::vector<StageRow> rows;              // seed-major, stages in run order
  std::vector<StageAggregate> aggregates;  // six entries in stage order
  // weight ledgers of the first seed's five strategy stages, keyed by stage name
  std::vector<std::pair<std::string, WeightLedger>> first_seed_ledgers;
  std::vector<std::string> warnings;
};

struct AblateConfig {
  ClassifierConfig model;
  OptConfig baseline_opt;
  OptConfig stage_opt;
  double alpha = 0.5;
  double beta = 0.8;
  double lambda_bag = 1.0;
  ConfidenceConfig confidence;
  std::vector<std::uint64_t> seeds{1};
  std::string cache_dir;  // artifact cache location; empty keeps it in memory
  std::uint32_t threads = 1;
  void validate() const;
};

// Runs baseline plus the five cumulative stages for every seed.
AblationReport ablate(const Dataset& dataset, const AblateConfig& config);

// Accuracies in the report files are percentages. The CSVs carry only fields
// that are stable across reruns; wall times live in the JSON.
std::string report_csv(const AblationReport& report);     // one row per (seed, stage)
std::string aggregate_csv(const AblationReport& report);  // one row per stage
std::string report_json(const AblationReport& report);
std::string report_bar_chart(const AblationReport& report);

}  // namespace urnet
