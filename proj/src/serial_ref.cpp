#include "weightscan/serial_ref.hpp"

#include <algorithm>
#include <cmath>

#include "weightscan/error.hpp"
#include "weightscan/metrics.hpp"

namespace weightscan::serial_ref {

FeatureMatrix build_feature_matrix(std::span<const ModelWeights> models,
                                   std::span<const std::string> ids,
                                   const PreprocessConfig& config,
                                   const ArchitectureSignature& signature) {
  if (!ids.empty() && ids.size() != models.size()) {
    fail(ErrorKind::bad_argument, "ids and models differ in length");
  }
  FeatureMatrix matrix;
  matrix.columns = feature_layout(config, signature);
  matrix.row_ids.resize(models.size());
  const std::size_t d = matrix.columns.size();
  matrix.values.resize(models.size() * d);
  for (std::size_t i = 0; i < models.size(); ++i) {
    matrix.row_ids[i] = ids.empty() ? std::to_string(i) : ids[i];
    const std::vector<double> row = preprocess_row(models[i], config, signature);
    std::copy(row.begin(), row.end(), matrix.values.begin() + i * d);
  }
  return matrix;
}

std::vector<FeatureScore> feature_auc_scores(const FeatureMatrix& matrix,
                                             std::span<const int> labels) {
  const std::size_t n = matrix.rows();
  const std::size_t d = matrix.cols();
  std::vector<FeatureScore> scores(d);
  std::vector<double> column(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = matrix.at(i, j);
    scores[j].index = matrix.columns[j];
    scores[j].sigma = std::abs(roc_auc(column, labels) - 0.5);
  }
  return scores;
}

std::vector<double> predict_batch(const Detector& detector,
                                  std::span<const ModelWeights> models) {
  std::vector<double> probs(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    probs[i] = predict_proba(detector, models[i]);
  }
  return probs;
}

}  // namespace weightscan::serial_ref
