#include "weightscan/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "weightscan/error.hpp"
#include "weightscan/experiment.hpp"
#include "weightscan/feature_select.hpp"
#include "weightscan/linear_detector.hpp"
#include "weightscan/metrics.hpp"
#include "weightscan/model_zoo.hpp"
#include "weightscan/weight_store.hpp"

namespace weightscan::cli {

namespace {

namespace fs = std::filesystem;

std::string join_invocation(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i > 0) s += ' ';
    s += argv[i];
  }
  return s;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

void emit_error(ErrorKind kind, int exit_code, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"kind", std::string(to_string(kind))},
                {"exit_code", exit_code},
                {"message", message}};
  std::cerr << j.dump() << '\n';
}

/// Flags shared by every command that builds a preprocessing pipeline.
struct ConfigFlags {
  std::string config_name;
  std::string reference_path;
  bool no_reference = false;
  std::string norm = "tensor";
  bool sorted = false;
  bool tensor_selection = true;
  std::uint64_t seed = 0;
  std::size_t weight_k = 1000;
  std::size_t tensor_k = 25;
  std::size_t cv_iters = 30;
  double p_grid_min = 1e-4;
  double p_grid_max = 1e4;
  std::size_t p_grid_points = 17;
  double fixed_p = 0.0;  // 0 = search
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.config_name,
                  "named detector configuration (Base, A..F)");
  cmd->add_option("--reference", flags.reference_path,
                  "reference model (MWS file) to subtract");
  cmd->add_flag("--no-reference", flags.no_reference,
                "run a reference-style config without a reference model");
  cmd->add_option("--norm", flags.norm, "tensor|model|none (explicit mode)");
  cmd->add_flag("--sorted,!--unsorted", flags.sorted,
                "sort each tensor before flattening (explicit mode)");
  cmd->add_flag("--tensor-selection,!--no-tensor-selection",
                flags.tensor_selection, "rank and keep the top tensors");
  cmd->add_option("--seed", flags.seed, "seed for every random draw");
  cmd->add_option("--weight-k", flags.weight_k, "features kept per detector");
  cmd->add_option("--tensor-k", flags.tensor_k, "tensors kept when selecting");
  cmd->add_option("--cv-iters", flags.cv_iters, "holdout iterations per P");
  cmd->add_option("--p-grid-min", flags.p_grid_min, "smallest P in the grid");
  cmd->add_option("--p-grid-max", flags.p_grid_max, "largest P in the grid");
  cmd->add_option("--p-grid-points", flags.p_grid_points, "P grid size");
  cmd->add_option("--fixed-p", flags.fixed_p,
                  "skip the P search and use this value");
}

std::shared_ptr<const ModelWeights> load_reference(const std::string& path) {
  return std::make_shared<const ModelWeights>(read_model(path));
}

/// Resolves one named or explicit configuration. A named row that calls for
/// a reference model needs --reference, or an explicit --no-reference to run
/// the row without subtraction; there is no silent fallback.
std::pair<std::string, DetectorOptions> resolve_config(const ConfigFlags& flags,
                                                       const std::string& name) {
  DetectorOptions options;
  std::string label;

  if (!name.empty()) {
    const std::optional<NamedConfig> named = named_config(name);
    if (!named) {
      fail(ErrorKind::bad_argument, "unknown config '" + name + "'");
    }
    label = named->name;
    options.norm_method = named->norm_method;
    options.tensor_selection = named->tensor_selection;
    options.sorted = named->sorted;
    if (named->reference) {
      if (!flags.reference_path.empty()) {
        options.reference = load_reference(flags.reference_path);
      } else if (!flags.no_reference) {
        fail(ErrorKind::bad_argument,
             "config " + label +
                 " uses a reference model; pass --reference FILE or "
                 "--no-reference to run it without subtraction");
      }
    } else if (!flags.reference_path.empty()) {
      fail(ErrorKind::bad_argument,
           "config " + label + " does not use a reference model");
    }
  } else {
    label = "custom";
    options.norm_method = norm_method_from_string(flags.norm);
    options.tensor_selection = flags.tensor_selection;
    options.sorted = flags.sorted;
    if (!flags.reference_path.empty()) {
      options.reference = load_reference(flags.reference_path);
    }
  }

  options.weight_k = flags.weight_k;
  options.tensor_k = flags.tensor_k;
  options.seed = flags.seed;
  options.cv.iterations = flags.cv_iters;
  options.cv.grid =
      default_p_grid(flags.p_grid_min, flags.p_grid_max, flags.p_grid_points);
  if (flags.fixed_p > 0.0) options.fixed_p = flags.fixed_p;
  return {label, options};
}

struct LoadedManifest {
  Manifest manifest;
  std::vector<ModelWeights> models;
};

LoadedManifest load_manifest_models(const std::string& manifest_path) {
  LoadedManifest loaded;
  loaded.manifest = read_manifest(manifest_path);
  if (loaded.manifest.entries.empty()) {
    fail(ErrorKind::malformed, manifest_path + ": manifest lists no models");
  }
  loaded.models =
      load_models(loaded.manifest, fs::path(manifest_path).parent_path());
  return loaded;
}

// ---------------------------------------------------------------------------
// zoo generate

struct ZooArgs {
  std::string out_dir;
  std::size_t n_clean = 20;
  std::size_t n_poisoned = 20;
  std::string triggers = "checkerboard,watermark";
  std::uint64_t seed = 0;
  std::size_t image_side = 10;
  std::size_t n_classes = 4;
  double noise_std = 0.15;
  std::size_t n_train = 512;
  std::size_t n_test = 256;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.08;
  double poison_fraction = 0.1;
  double alpha = 0.1;
};

int cmd_zoo_generate(const ZooArgs& args) {
  ZooConfig config;
  config.out_dir = args.out_dir;
  config.n_clean = args.n_clean;
  config.n_poisoned = args.n_poisoned;
  config.seed = args.seed;
  config.trigger_mix.clear();
  for (const std::string& name : split_csv(args.triggers)) {
    config.trigger_mix.push_back(trigger_kind_from_string(name));
  }
  config.task.image_side = args.image_side;
  config.task.n_classes = args.n_classes;
  config.task.noise_std = args.noise_std;
  config.task.n_train = args.n_train;
  config.task.n_test = args.n_test;
  config.hp.epochs = args.epochs;
  config.hp.batch_size = args.batch_size;
  config.hp.learning_rate = args.learning_rate;
  config.poison_fraction = args.poison_fraction;
  config.trigger_alpha = args.alpha;

  const ZooResult zoo = generate_zoo(config);

  double acc = 0.0, asr = 0.0;
  std::size_t n_asr = 0;
  for (const auto& s : zoo.stats) {
    acc += s.clean_accuracy;
    if (s.asr) {
      asr += *s.asr;
      ++n_asr;
    }
  }
  std::printf("wrote %zu models to %s (mean clean accuracy %.3f",
              zoo.stats.size(), args.out_dir.c_str(),
              acc / static_cast<double>(zoo.stats.size()));
  if (n_asr > 0) {
    std::printf(", mean ASR %.3f", asr / static_cast<double>(n_asr));
  }
  std::printf(")\n");
  return 0;
}

// ---------------------------------------------------------------------------
// features select

int cmd_features_select(const std::string& manifest_path,
                        const ConfigFlags& flags, std::size_t top_k,
                        const std::string& out_path,
                        const std::string& invocation) {
  const LoadedManifest loaded = load_manifest_models(manifest_path);
  const std::vector<int> labels = manifest_labels(loaded.manifest);
  auto [label, options] = resolve_config(flags, flags.config_name);

  const ArchitectureSignature signature =
      signature_for(loaded.models, options.reference.get());
  PreprocessConfig config;
  config.reference = options.reference;
  config.norm_method = options.norm_method;
  config.sorted = options.sorted;

  const FeatureMatrix matrix =
      build_feature_matrix(loaded.models, {}, config, signature);
  const std::vector<FeatureScore> scores = feature_auc_scores(matrix, labels);
  const std::vector<std::size_t> order = top_weight_columns(scores, top_k);

  nlohmann::json j;
  j["invocation"] = invocation;
  j["config"] = label;
  j["features"] = nlohmann::json::array();
  for (std::size_t c : order) {
    j["features"].push_back({{"tensor", scores[c].index.tensor_name},
                             {"position", scores[c].index.position},
                             {"sigma", scores[c].sigma}});
  }
  std::ofstream out(out_path);
  if (!out) fail(ErrorKind::io, "cannot open " + out_path);
  out << j.dump(2) << '\n';
  std::printf("wrote %zu feature scores to %s\n", order.size(), out_path.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// detector train / predict / evaluate

int cmd_detector_train(const std::string& manifest_path,
                       const ConfigFlags& flags, const std::string& out_path) {
  const LoadedManifest loaded = load_manifest_models(manifest_path);
  const std::vector<int> labels = manifest_labels(loaded.manifest);
  auto [label, options] = resolve_config(flags, flags.config_name);

  const Detector detector = fit_detector(loaded.models, labels, options);
  save_detector(out_path, detector);
  std::printf("trained config %s on %zu models: P=%g, %zu features",
              label.c_str(), loaded.models.size(), detector.regularization,
              detector.features.size());
  if (detector.training_summary.cv_cross_entropy) {
    std::printf(", cv ce %.4f", *detector.training_summary.cv_cross_entropy);
  }
  std::printf(" -> %s\n", out_path.c_str());
  return 0;
}

int cmd_detector_predict(const std::string& detector_path,
                         const std::string& manifest_path,
                         const std::string& out_path,
                         const std::string& invocation) {
  const Detector detector = load_detector(detector_path);
  const LoadedManifest loaded = load_manifest_models(manifest_path);
  const std::vector<double> probs = predict_batch(detector, loaded.models);

  std::ofstream out(out_path);
  if (!out) fail(ErrorKind::io, "cannot open " + out_path);
  out << "# invocation: " << invocation << '\n';
  out << "model_id,prob\n";
  char buf[64];
  for (std::size_t i = 0; i < probs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), ",%.17g\n", probs[i]);
    out << loaded.manifest.entries[i].id << buf;
  }
  if (!out) fail(ErrorKind::io, "write failed: " + out_path);
  std::printf("wrote %zu predictions to %s\n", probs.size(), out_path.c_str());
  return 0;
}

std::map<std::string, double> read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::map<std::string, double> preds;
  std::string line;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "model_id,prob") {
        fail(ErrorKind::malformed, path + ": expected header model_id,prob");
      }
      saw_header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      fail(ErrorKind::malformed, path + ": malformed row '" + line + "'");
    }
    const std::string id = line.substr(0, comma);
    try {
      preds[id] = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      fail(ErrorKind::malformed, path + ": bad probability for '" + id + "'");
    }
  }
  if (!saw_header) fail(ErrorKind::malformed, path + ": no header row");
  return preds;
}

int cmd_detector_evaluate(const std::string& manifest_path,
                          const std::string& predictions_path,
                          const std::string& out_dir,
                          const std::string& invocation) {
  const Manifest manifest = read_manifest(manifest_path);
  const std::vector<int> labels = manifest_labels(manifest);
  const std::map<std::string, double> preds = read_predictions(predictions_path);

  std::vector<double> probs;
  probs.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const auto it = preds.find(e.id);
    if (it == preds.end()) {
      fail(ErrorKind::malformed,
           predictions_path + ": no prediction for model '" + e.id + "'");
    }
    probs.push_back(it->second);
  }

  const EvalReport report = evaluate(probs, labels);
  fs::create_directories(out_dir);
  write_metrics_json(fs::path(out_dir) / "metrics.json", report, invocation);
  write_roc_csv(fs::path(out_dir) / "roc.csv", roc_curve(probs, labels),
                invocation);
  std::printf("auc %.4f, ce %.4f (%zu poisoned / %zu clean) -> %s\n",
              report.auc, report.ce, report.n_pos, report.n_neg,
              out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// experiment run

int cmd_experiment_run(const std::string& manifest_path,
                       const ConfigFlags& flags, const std::string& configs,
                       std::size_t repeats, double holdout,
                       const std::string& train_sizes,
                       const std::string& out_path,
                       const std::string& invocation) {
  const LoadedManifest loaded = load_manifest_models(manifest_path);
  const std::vector<int> labels = manifest_labels(loaded.manifest);

  ExperimentSpec spec;
  spec.repeats = repeats;
  spec.holdout_fraction = holdout;
  spec.seed = flags.seed;
  for (const std::string& size : split_csv(train_sizes)) {
    spec.train_sizes.push_back(std::stoul(size));
  }
  const std::vector<std::string> names = split_csv(configs);
  if (names.empty()) {
    fail(ErrorKind::bad_argument, "--configs lists no configuration");
  }
  for (const std::string& name : names) {
    auto [label, options] = resolve_config(flags, name);
    spec.config_names.push_back(label);
    spec.configs.push_back(std::move(options));
  }

  const std::vector<TrialRow> rows =
      run_experiment(loaded.models, labels, spec);
  write_experiment_csv(out_path, rows, invocation);
  for (const TrialRow& row : rows) {
    if (row.trial == "mean") {
      std::printf("%-8s n_train=%-4zu mean auc %.4f  mean ce %.4f\n",
                  row.config.c_str(), row.n_train, row.auc, row.ce);
    }
  }
  std::printf("wrote %zu rows to %s\n", rows.size(), out_path.c_str());
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  const std::string invocation = join_invocation(argc, argv);

  CLI::App app{"Trojan detection from neural network weights"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = library default)");

  // zoo generate
  auto* zoo = app.add_subcommand("zoo", "model zoo generation");
  zoo->require_subcommand(1);
  ZooArgs zoo_args;
  auto* zoo_gen = zoo->add_subcommand("generate",
                                      "train a labeled clean/poisoned zoo");
  zoo_gen->add_option("--out", zoo_args.out_dir, "output directory")->required();
  zoo_gen->add_option("--n-clean", zoo_args.n_clean, "clean model count");
  zoo_gen->add_option("--n-poisoned", zoo_args.n_poisoned, "poisoned model count");
  zoo_gen->add_option("--triggers", zoo_args.triggers,
                      "comma-separated trigger mix");
  zoo_gen->add_option("--seed", zoo_args.seed, "zoo seed");
  zoo_gen->add_option("--image-side", zoo_args.image_side, "image side length");
  zoo_gen->add_option("--classes", zoo_args.n_classes, "class count");
  zoo_gen->add_option("--noise-std", zoo_args.noise_std, "pixel noise std");
  zoo_gen->add_option("--train-samples", zoo_args.n_train, "train set size");
  zoo_gen->add_option("--test-samples", zoo_args.n_test, "test set size");
  zoo_gen->add_option("--epochs", zoo_args.epochs, "training epochs");
  zoo_gen->add_option("--batch", zoo_args.batch_size, "minibatch size");
  zoo_gen->add_option("--lr", zoo_args.learning_rate, "learning rate");
  zoo_gen->add_option("--poison-fraction", zoo_args.poison_fraction,
                      "fraction of training samples poisoned");
  zoo_gen->add_option("--alpha", zoo_args.alpha, "watermark blend coefficient");

  // features select
  auto* features = app.add_subcommand("features", "feature scoring");
  features->require_subcommand(1);
  auto* feat_sel = features->add_subcommand(
      "select", "rank individual weights by AUC distance from 0.5");
  std::string feat_manifest, feat_out = "features.json";
  std::size_t feat_top_k = 1000;
  ConfigFlags feat_flags;
  feat_sel->add_option("--manifest", feat_manifest, "labeled manifest")->required();
  feat_sel->add_option("--out", feat_out, "output report path");
  feat_sel->add_option("--top-k", feat_top_k, "rows to keep");
  add_config_flags(feat_sel, feat_flags);

  // detector train/predict/evaluate
  auto* detector = app.add_subcommand("detector", "train and run detectors");
  detector->require_subcommand(1);

  auto* det_train = detector->add_subcommand("train", "fit a detector");
  std::string train_manifest, train_out = "detector.json";
  ConfigFlags train_flags;
  det_train->add_option("--manifest", train_manifest, "labeled manifest")
      ->required();
  det_train->add_option("--out", train_out, "detector file to write");
  add_config_flags(det_train, train_flags);

  auto* det_predict = detector->add_subcommand("predict", "score models");
  std::string pred_detector, pred_manifest, pred_out = "predictions.csv";
  det_predict->add_option("--detector", pred_detector, "detector file")
      ->required();
  det_predict->add_option("--manifest", pred_manifest, "manifest to score")
      ->required();
  det_predict->add_option("--out", pred_out, "predictions CSV to write");

  auto* det_eval = detector->add_subcommand("evaluate",
                                            "score predictions against labels");
  std::string eval_manifest, eval_predictions, eval_out = "eval";
  det_eval->add_option("--manifest", eval_manifest, "labeled manifest")
      ->required();
  det_eval->add_option("--predictions", eval_predictions, "predictions CSV")
      ->required();
  det_eval->add_option("--out", eval_out, "output directory");

  // experiment run
  auto* experiment = app.add_subcommand("experiment", "evaluation protocols");
  experiment->require_subcommand(1);
  auto* exp_run = experiment->add_subcommand(
      "run", "repeated-holdout evaluation across configurations");
  std::string exp_manifest, exp_configs = "Base,D", exp_sizes;
  std::string exp_out = "results.csv";
  std::size_t exp_repeats = 10;
  double exp_holdout = 0.1;
  ConfigFlags exp_flags;
  exp_run->add_option("--manifest", exp_manifest, "labeled manifest")->required();
  exp_run->add_option("--configs", exp_configs, "comma-separated config names");
  exp_run->add_option("--repeats", exp_repeats, "trials per configuration");
  exp_run->add_option("--holdout", exp_holdout, "held-out fraction per trial");
  exp_run->add_option("--train-sizes", exp_sizes,
                      "comma-separated learning-curve sizes");
  exp_run->add_option("--out", exp_out, "results CSV to write");
  add_config_flags(exp_run, exp_flags);

  try {
    app.parse(argc, const_cast<char**>(argv));

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    if (zoo_gen->parsed()) return cmd_zoo_generate(zoo_args);
    if (feat_sel->parsed()) {
      return cmd_features_select(feat_manifest, feat_flags, feat_top_k,
                                 feat_out, invocation);
    }
    if (det_train->parsed()) {
      return cmd_detector_train(train_manifest, train_flags, train_out);
    }
    if (det_predict->parsed()) {
      return cmd_detector_predict(pred_detector, pred_manifest, pred_out,
                                  invocation);
    }
    if (det_eval->parsed()) {
      return cmd_detector_evaluate(eval_manifest, eval_predictions, eval_out,
                                   invocation);
    }
    if (exp_run->parsed()) {
      return cmd_experiment_run(exp_manifest, exp_flags, exp_configs,
                                exp_repeats, exp_holdout, exp_sizes, exp_out,
                                invocation);
    }
    fail(ErrorKind::bad_argument, "no command given");
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints CLI11's own message
    if (code == 0) return 0;       // --help / --version
    emit_error(ErrorKind::bad_argument, 2, e.what());
    return 2;
  } catch (const Error& e) {
    emit_error(e.kind(), e.exit_code(), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    emit_error(ErrorKind::io, 1, e.what());
    return 1;
  }
}

}  // namespace weightscan::cli
