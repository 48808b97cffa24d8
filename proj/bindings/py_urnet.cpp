// Python module exposing the main operations: dataset generation and IO,
// the weighting primitives, training, the staged ablation, and evaluation.
// Matrices cross the boundary as row-major nested lists; datasets and
// checkpoints stay opaque handles that round-trip through their file formats.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "urnet/datagen.hpp"
#include "urnet/model.hpp"
#include "urnet/pipeline.hpp"
#include "urnet/reweight.hpp"

namespace py = pybind11;
using namespace urnet;

namespace {

GenConfig gen_config_from_kwargs(const py::kwargs& kwargs) {
  GenConfig config;
  for (const auto& item : kwargs) {
    const std::string key = py::cast<std::string>(item.first);
    if (key == "num_classes") config.num_classes = py::cast<std::uint32_t>(item.second);
    else if (key == "feature_dim") config.feature_dim = py::cast<std::uint32_t>(item.second);
    else if (key == "size_min") config.size_min = py::cast<std::uint32_t>(item.second);
    else if (key == "size_max") config.size_max = py::cast<std::uint32_t>(item.second);
    else if (key == "size_exponent") config.size_exponent = py::cast<double>(item.second);
    else if (key == "flip_rate") config.flip_rate = py::cast<double>(item.second);
    else if (key == "confusable_pairs")
      config.confusable_pairs =
          py::cast<std::vector<std::pair<std::uint32_t, std::uint32_t>>>(item.second);
    else if (key == "representative_fraction")
      config.representative_fraction = py::cast<double>(item.second);
    else if (key == "ambiguous_fraction")
      config.ambiguous_fraction = py::cast<double>(item.second);
    else if (key == "sigma_near") config.sigma_near = py::cast<double>(item.second);
    else if (key == "sigma_far") config.sigma_far = py::cast<double>(item.second);
    else if (key == "mix_strength") config.mix_strength = py::cast<double>(item.second);
    else if (key == "prototype_scale")
      config.prototype_scale = py::cast<double>(item.second);
    else if (key == "tokens_per_class")
      config.tokens_per_class = py::cast<std::uint32_t>(item.second);
    else if (key == "vocab_size") config.vocab_size = py::cast<std::uint32_t>(item.second);
    else if (key == "seed") config.seed = py::cast<std::uint64_t>(item.second);
    else throw ConfigError("unknown gen config key '" + key + "'");
  }
  return config;
}

}  // namespace

PYBIND11_MODULE(_urnet, m) {
  m.doc() = "weight-manipulation training for imbalanced, noisy web-style data";

  py::register_exception<Error>(m, "UrnetError");

  // ------------------------------------------------------------------ data
  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("num_classes", [](const Dataset& d) { return d.num_classes; })
      .def_property_readonly("feature_dim", [](const Dataset& d) { return d.feature_dim; })
      .def_property_readonly("size", [](const Dataset& d) { return d.instances.size(); })
      .def_property_readonly("train_ids", [](const Dataset& d) { return d.train_ids; })
      .def_property_readonly("val_ids", [](const Dataset& d) { return d.val_ids; })
      .def_property_readonly("warnings", [](const Dataset& d) { return d.warnings; })
      .def("features",
           [](const Dataset& d, std::uint64_t id) {
             return d.instances.at(d.id_index().at(id)).features;
           })
      .def("observed_label",
           [](const Dataset& d, std::uint64_t id) {
             return d.instances.at(d.id_index().at(id)).observed_label;
           })
      .def("true_label", [](const Dataset& d, std::uint64_t id) {
        return d.instances.at(d.id_index().at(id)).true_label;
      });

  m.def(
      "generate",
      [](const py::kwargs& kwargs) {
        GenConfig config = gen_config_from_kwargs(kwargs);
        validate(config);
        return generate(config);
      },
      "generate a synthetic dataset; keyword arguments mirror the gen config keys");
  m.def(
      "split",
      [](Dataset& dataset, double val_fraction, std::uint64_t seed) {
        Rng rng = Rng(seed).fork(rng_stream::kSplit);
        split(dataset, val_fraction, rng);
      },
      py::arg("dataset"), py::arg("val_fraction") = 0.2, py::arg("seed") = 1);
  m.def("save_dataset", [](const Dataset& d, const std::string& path) { save(d, path); });
  m.def("load_dataset", [](const std::string& path) { return load(path); });

  // ----------------------------------------------------------------- model
  py::class_<Classifier>(m, "Classifier");
  m.def("save_checkpoint", &save_checkpoint);
  m.def("load_checkpoint", &load_checkpoint);
  m.def("predict", [](const Classifier& model, const std::vector<double>& features,
                      std::uint32_t k) {
    Matrix x(1, features.size());
    for (std::size_t i = 0; i < features.size(); ++i) x(0, i) = features[i];
    const ForwardCache cache = forward(model, x);
    std::vector<double> logits(cache.logits.cols());
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = cache.logits(0, c);
    return predict_topk(logits, k);
  }, py::arg("model"), py::arg("features"), py::arg("k") = 1);

  // ------------------------------------------------------------- weighting
  m.def("class_weights",
        [](const std::vector<std::uint32_t>& sizes, double alpha) {
          return class_weights(sizes, alpha).weights;
        },
        py::arg("sizes"), py::arg("alpha") = 0.5,
        "inverse-frequency class weights interpolated toward uniform by alpha");
  m.def("group_weights", [](const std::vector<std::uint32_t>& sizes) {
    return group_weights_from_sizes(sizes);
  });
  m.def("smooth_targets",
        [](const std::vector<std::uint32_t>& observed,
           const std::vector<std::uint32_t>& predicted, double beta) {
          py::list out;
          for (const Target& t : smooth_targets(observed, predicted, beta)) {
            out.append(py::make_tuple(t.label, t.predicted, t.beta));
          }
          return out;
        },
        py::arg("observed"), py::arg("predicted"), py::arg("beta") = 0.8);
  m.def("combine_weights",
        [](const std::vector<std::uint64_t>& ids, const std::vector<double>& w_class,
           const std::vector<double>& w_cluster, const std::vector<double>& w_confidence,
           bool renormalize) {
          const WeightLedger ledger =
              combine(ids, w_class, w_cluster, w_confidence, renormalize);
          return ledger.combined;
        },
        py::arg("ids"), py::arg("w_class"), py::arg("w_cluster"),
        py::arg("w_confidence"), py::arg("renormalize") = true);

  // -------------------------------------------------------------- pipeline
  m.def(
      "train_baseline",
      [](const Dataset& dataset, std::uint64_t seed, std::uint32_t epochs,
         std::uint32_t batch_size, double lr, std::uint32_t hidden,
         std::uint32_t hidden_layers) {
        ClassifierConfig model;
        model.input_dim = dataset.feature_dim;
        model.num_classes = dataset.num_classes;
        model.hidden.assign(hidden_layers, hidden);
        OptConfig opt;
        opt.epochs = epochs;
        opt.batch_size = batch_size;
        opt.lr = lr;
        return train_baseline(dataset, model, opt, seed);
      },
      py::arg("dataset"), py::arg("seed") = 1, py::arg("epochs") = 30,
      py::arg("batch_size") = 64, py::arg("lr") = 0.1, py::arg("hidden") = 64,
      py::arg("hidden_layers") = 2);
  m.def(
      "evaluate",
      [](const Classifier& model, const Dataset& dataset, const std::string& split_name,
         const std::vector<std::uint32_t>& ks, std::uint32_t threads) {
        const auto& ids = split_name == "train" ? dataset.train_ids : dataset.val_ids;
        const EvalResult ev = evaluate(model, dataset, ids, ks, threads);
        py::dict topk;
        for (const auto& [k, acc] : ev.topk) topk[py::int_(k)] = acc;
        py::dict out;
        out["topk"] = topk;
        out["macro_top1"] = ev.macro_top1;
        return out;
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "val",
      py::arg("ks") = std::vector<std::uint32_t>{1, 5}, py::arg("threads") = 1);
  m.def(
      "ablate",
      [](const Dataset& dataset, const std::vector<std::uint64_t>& seeds,
         std::uint32_t baseline_epochs, std::uint32_t stage_epochs,
         std::uint32_t batch_size, double lr, double stage_lr, std::uint32_t hidden,
         std::uint32_t hidden_layers, std::uint32_t confidence_epochs,
         std::uint32_t top_rank, const std::string& cache_dir, std::uint32_t threads) {
        AblateConfig config;
        config.model.input_dim = dataset.feature_dim;
        config.model.num_classes = dataset.num_classes;
        config.model.hidden.assign(hidden_layers, hidden);
        config.baseline_opt.epochs = baseline_epochs;
        config.baseline_opt.batch_size = batch_size;
        config.baseline_opt.lr = lr;
        config.stage_opt = config.baseline_opt;
        config.stage_opt.epochs = stage_epochs;
        config.stage_opt.lr = stage_lr;
        config.confidence.epochs = confidence_epochs;
        config.confidence.top_rank = top_rank;
        config.seeds = seeds;
        config.cache_dir = cache_dir;
        config.threads = threads;
        const AblationReport report = ablate(dataset, config);
        py::list rows;
        for (const auto& row : report.rows) {
          py::dict r;
          r["stage"] = row.stage;
          r["strategies"] = row.strategies.to_string();
          r["seed"] = row.seed;
          r["top1"] = row.top1;
          r["top5"] = row.top5;
          r["macro_top1"] = row.macro_top1;
          r["ref_top5"] = row.ref_top5;
          rows.append(r);
        }
        py::list aggregates;
        for (const auto& agg : report.aggregates) {
          py::dict a;
          a["stage"] = agg.stage;
          a["runs"] = agg.runs;
          a["top1_mean"] = agg.top1_mean;
          a["top1_stddev"] = agg.top1_stddev;
          a["top5_mean"] = agg.top5_mean;
          a["top5_stddev"] = agg.top5_stddev;
          a["macro_mean"] = agg.macro_mean;
          a["macro_stddev"] = agg.macro_stddev;
          a["ref_top5"] = agg.ref_top5;
          aggregates.append(a);
        }
        py::dict out;
        out["rows"] = rows;
        out["aggregates"] = aggregates;
        out["csv"] = report_csv(report);
        out["chart"] = report_bar_chart(report);
        return out;
      },
      py::arg("dataset"), py::arg("seeds") = std::vector<std::uint64_t>{1},
      py::arg("baseline_epochs") = 30, py::arg("stage_epochs") = 15,
      py::arg("batch_size") = 64, py::arg("lr") = 0.1, py::arg("stage_lr") = 0.03,
      py::arg("hidden") = 64, py::arg("hidden_layers") = 2,
      py::arg("confidence_epochs") = 20, py::arg("top_rank") = 30,
      py::arg("cache_dir") = std::string(), py::arg("threads") = 1,
      "run the staged ablation and return rows, aggregates, csv and chart");
}
