#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "weightscan/tensor.hpp"

namespace weightscan {

enum class NormMethod { none, tensor, model };

std::string_view to_string(NormMethod m);
NormMethod norm_method_from_string(std::string_view name);

/// How raw weights become a feature vector. Steps run in a fixed order:
///   1. restrict to signature tensors (intersected with the whitelist)
///   2. reference subtraction, when a reference is set
///   3. per-tensor std normalization, when norm_method == tensor
///   4. per-tensor ascending sort, when sorted
///   5. flatten in signature order
///   6. whole-vector std normalization, when norm_method == model
struct PreprocessConfig {
  std::shared_ptr<const ModelWeights> reference;  // null = no subtraction
  NormMethod norm_method = NormMethod::none;
  bool sorted = false;
  std::optional<std::vector<std::string>> tensor_whitelist;
};

/// Provenance of one feature column: which tensor it came from and its index
/// in that tensor's processed flat vector (post-sort index when sorted).
struct FeatureIndex {
  std::string tensor_name;
  std::size_t position;

  friend bool operator==(const FeatureIndex&, const FeatureIndex&) = default;
};

struct FeatureMatrix {
  std::vector<std::string> row_ids;    // manifest order
  std::vector<FeatureIndex> columns;   // length D
  std::vector<double> values;          // row-major N x D

  std::size_t rows() const { return row_ids.size(); }
  std::size_t cols() const { return columns.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * cols() + j]; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols(), cols()};
  }
};

/// Elementwise difference on signature tensors; tensors outside the
/// signature are dropped. Shape mismatches on a signature tensor throw.
ModelWeights subtract_reference(const ModelWeights& model,
                                const ModelWeights& reference,
                                const ArchitectureSignature& signature);

/// t / population-std(t). Throws ErrorKind::degenerate when the std is
/// below 1e-12 (constant tensor).
WeightTensor tensor_norm(const WeightTensor& t);

/// flat / population-std(flat); same degenerate rule.
std::vector<double> model_norm(std::span<const double> flat);

/// Flattened, ascending copy of the tensor values (a permutation-invariant
/// quantile profile of the tensor).
std::vector<double> sort_tensor(const WeightTensor& t);

/// Signature tensors that survive the whitelist, in signature order.
std::vector<TensorSpec> effective_tensors(const PreprocessConfig& config,
                                          const ArchitectureSignature& signature);

/// Column provenance for the given config/signature, in flatten order.
std::vector<FeatureIndex> feature_layout(const PreprocessConfig& config,
                                         const ArchitectureSignature& signature);

/// Full per-model pipeline (steps 1-6). Constant tensors under tensor norm
/// become all-zero blocks instead of failing the model.
std::vector<double> preprocess_row(const ModelWeights& model,
                                   const PreprocessConfig& config,
                                   const ArchitectureSignature& signature);

/// Rows computed independently (in parallel) and assembled in input order,
/// so the result is bit-identical for any thread count.
FeatureMatrix build_feature_matrix(std::span<const ModelWeights> models,
                                   std::span<const std::string> ids,
                                   const PreprocessConfig& config,
                                   const ArchitectureSignature& signature);

}  // namespace weightscan
