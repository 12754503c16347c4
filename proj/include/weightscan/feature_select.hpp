#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "weightscan/preprocess.hpp"
#include "weightscan/tensor.hpp"

namespace weightscan {

/// Discriminative power of one feature column used as a raw detection
/// statistic: sigma = |AUC(column, labels) - 0.5|, in [0, 0.5].
/// A raw column ranks models exactly like a 1-D monotone model trained on
/// it, so this equals the score of a per-feature logistic classifier.
struct FeatureScore {
  FeatureIndex index;
  double sigma = 0.0;
};

/// One sigma per column, in column order. Columns are scored independently
/// (parallel-safe, deterministic).
std::vector<FeatureScore> feature_auc_scores(const FeatureMatrix& matrix,
                                             std::span<const int> labels);

/// |Pearson correlation| per column; constant columns score 0.
std::vector<double> feature_correlation_scores(const FeatureMatrix& matrix,
                                               std::span<const int> labels);

/// Top-k provenance entries by descending sigma; ties resolve to the earlier
/// column (signature order, then ascending position). Returns everything
/// when fewer than k columns exist.
std::vector<FeatureIndex> select_top_weights(std::span<const FeatureScore> scores,
                                             std::size_t k = 1000);

/// Same ranking, as indices into the score list (and hence matrix columns).
std::vector<std::size_t> top_weight_columns(std::span<const FeatureScore> scores,
                                            std::size_t k);

/// Held-out evaluation protocol for ranking tensors.
struct SubSplitSpec {
  std::size_t n_splits = 5;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::size_t max_retries = 100;
  double fit_p = 1.0;          // fixed regularization for the per-tensor fits
  std::size_t weight_k = 1000; // per-tensor column cap before fitting
};

struct TensorScore {
  std::string tensor_name;
  double mean_validation_auc = 0.0;
  std::size_t n_splits = 0;
};

/// For each signature tensor: preprocess with the base config restricted to
/// that tensor, and over n_splits seeded sub-splits select the top columns
/// on the train side, fit a logistic model at fit_p, and score the
/// validation AUC. Splits are shared across tensors so ranks are
/// comparable. Sub-splits missing a class are redrawn up to the retry cap.
std::vector<TensorScore> tensor_generalization_scores(
    std::span<const ModelWeights> models, std::span<const int> labels,
    const ArchitectureSignature& signature, const PreprocessConfig& base_config,
    const SubSplitSpec& spec);

/// Top-k tensor names by descending mean AUC; ties keep signature order.
std::vector<std::string> select_top_tensors(std::span<const TensorScore> scores,
                                            std::size_t k = 25);

}  // namespace weightscan
