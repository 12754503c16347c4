#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "weightscan/linear_detector.hpp"

namespace weightscan {

/// One row of the detector configuration matrix.
struct NamedConfig {
  std::string name;
  bool reference = false;
  NormMethod norm_method = NormMethod::tensor;
  bool tensor_selection = true;
  bool sorted = false;
};

/// The seven standard rows:
///   Base = (ref Y, tensor norm, tensor-sel Y, unsorted)
///   A = Base with ref N            B = Base with model norm, sorted
///   C = Base without tensor-sel    D = Base sorted
///   E = ref N, sorted              F = ref N, no norm, sorted
std::optional<NamedConfig> named_config(std::string_view name);
std::vector<NamedConfig> all_named_configs();

struct TrialRow {
  std::string config;
  std::string trial;  // "0".."r-1", or "mean" for aggregate rows
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  double auc = 0.0;
  double ce = 0.0;
};

struct ExperimentSpec {
  std::vector<std::string> config_names;     // parallel to config options
  std::vector<DetectorOptions> configs;
  std::size_t repeats = 10;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train_sizes;      // empty: use every retained model
  std::size_t max_retries = 100;
};

/// For each config x repeat: seeded random holdout, fit on the retained
/// models (optionally subsampled to each train size), evaluate AUC/CE on
/// the holdout. The same trial index sees the same split in every config.
/// Rows come back sorted by (config, n_train, trial) with one mean row per
/// (config, n_train) appended after its trials.
std::vector<TrialRow> run_experiment(std::span<const ModelWeights> models,
                                     std::span<const int> labels,
                                     const ExperimentSpec& spec);

/// Fixed schema `config,trial,seed,n_train,auc,ce`; any invocation echo goes
/// in leading `# ` comment lines.
void write_experiment_csv(const std::filesystem::path& path,
                          std::span<const TrialRow> rows,
                          const std::string& invocation = "");

}  // namespace weightscan
