#pragma once

#include <span>
#include <vector>

#include "weightscan/feature_select.hpp"
#include "weightscan/linear_detector.hpp"
#include "weightscan/preprocess.hpp"

namespace weightscan::serial_ref {

/// Plain single-threaded drivers for the OpenMP kernels. Tests assert the
/// parallel paths produce bit-identical results; the benchmark compares
/// their throughput.

FeatureMatrix build_feature_matrix(std::span<const ModelWeights> models,
                                   std::span<const std::string> ids,
                                   const PreprocessConfig& config,
                                   const ArchitectureSignature& signature);

std::vector<FeatureScore> feature_auc_scores(const FeatureMatrix& matrix,
                                             std::span<const int> labels);

std::vector<double> predict_batch(const Detector& detector,
                                  std::span<const ModelWeights> models);

}  // namespace weightscan::serial_ref
