#include "weightscan/preprocess.hpp"

#include <algorithm>
#include <set>

#include "weightscan/error.hpp"
#include "weightscan/stats.hpp"

namespace weightscan {

namespace {

const WeightTensor& require_tensor(const ModelWeights& model,
                                   const TensorSpec& spec) {
  const WeightTensor* t = model.find(spec.name);
  if (t == nullptr) {
    fail(ErrorKind::missing_tensor, "model lacks tensor '" + spec.name + "'");
  }
  if (t->shape != spec.shape) {
    fail(ErrorKind::shape_mismatch,
         "tensor '" + spec.name + "' does not match the signature shape");
  }
  return *t;
}

}  // namespace

std::string_view to_string(NormMethod m) {
  switch (m) {
    case NormMethod::none: return "none";
    case NormMethod::tensor: return "tensor";
    case NormMethod::model: return "model";
  }
  return "none";
}

NormMethod norm_method_from_string(std::string_view name) {
  if (name == "none") return NormMethod::none;
  if (name == "tensor") return NormMethod::tensor;
  if (name == "model") return NormMethod::model;
  fail(ErrorKind::bad_argument, "unknown norm method '" + std::string(name) + "'");
}

ModelWeights subtract_reference(const ModelWeights& model,
                                const ModelWeights& reference,
                                const ArchitectureSignature& signature) {
  ModelWeights out;
  out.metadata = model.metadata;
  for (const auto& spec : signature.tensor_specs) {
    const WeightTensor& a = require_tensor(model, spec);
    const WeightTensor& b = require_tensor(reference, spec);
    WeightTensor diff;
    diff.name = spec.name;
    diff.shape = spec.shape;
    diff.data.resize(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      diff.data[i] = a.data[i] - b.data[i];
    }
    out.tensors.push_back(std::move(diff));
  }
  return out;
}

WeightTensor tensor_norm(const WeightTensor& t) {
  const double std = stats::population_std(t.data);
  if (std <= stats::kDegenerateStd) {
    fail(ErrorKind::degenerate, "tensor '" + t.name + "' is constant");
  }
  WeightTensor out;
  out.name = t.name;
  out.shape = t.shape;
  out.data.resize(t.data.size());
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    out.data[i] = t.data[i] / std;
  }
  return out;
}

std::vector<double> model_norm(std::span<const double> flat) {
  const double std = stats::population_std(flat);
  if (std <= stats::kDegenerateStd) {
    fail(ErrorKind::degenerate, "flattened vector is constant");
  }
  std::vector<double> out(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    out[i] = flat[i] / std;
  }
  return out;
}

std::vector<double> sort_tensor(const WeightTensor& t) {
  std::vector<double> out(t.data.begin(), t.data.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<TensorSpec> effective_tensors(const PreprocessConfig& config,
                                          const ArchitectureSignature& signature) {
  if (!config.tensor_whitelist) return signature.tensor_specs;
  const std::set<std::string> allowed(config.tensor_whitelist->begin(),
                                      config.tensor_whitelist->end());
  for (const auto& name : allowed) {
    if (signature.find(name) == nullptr) {
      fail(ErrorKind::missing_tensor,
           "whitelisted tensor '" + name + "' is not in the signature");
    }
  }
  std::vector<TensorSpec> specs;
  for (const auto& spec : signature.tensor_specs) {
    if (allowed.contains(spec.name)) specs.push_back(spec);
  }
  if (specs.empty()) {
    fail(ErrorKind::empty_signature, "whitelist keeps no signature tensor");
  }
  return specs;
}

std::vector<FeatureIndex> feature_layout(const PreprocessConfig& config,
                                         const ArchitectureSignature& signature) {
  std::vector<FeatureIndex> layout;
  for (const auto& spec : effective_tensors(config, signature)) {
    std::size_t count = 1;
    for (std::size_t d : spec.shape) count *= d;
    for (std::size_t k = 0; k < count; ++k) {
      layout.push_back({spec.name, k});
    }
  }
  return layout;
}

std::vector<double> preprocess_row(const ModelWeights& model,
                                   const PreprocessConfig& config,
                                   const ArchitectureSignature& signature) {
  const std::vector<TensorSpec> specs = effective_tensors(config, signature);

  std::vector<double> row;
  for (const auto& spec : specs) {
    const WeightTensor& t = require_tensor(model, spec);
    std::vector<double> block(t.data.begin(), t.data.end());

    if (config.reference) {
      const WeightTensor& ref = require_tensor(*config.reference, spec);
      for (std::size_t i = 0; i < block.size(); ++i) {
        block[i] -= ref.data[i];
      }
    }

    if (config.norm_method == NormMethod::tensor) {
      const double std = stats::population_std(block);
      if (std <= stats::kDegenerateStd) {
        // Constant tensors carry no signal; zero the block rather than
        // failing the whole model. Feature selection discards it.
        std::fill(block.begin(), block.end(), 0.0);
      } else {
        for (double& v : block) v /= std;
      }
    }

    if (config.sorted) std::sort(block.begin(), block.end());

    row.insert(row.end(), block.begin(), block.end());
  }

  if (config.norm_method == NormMethod::model) {
    row = model_norm(row);
  }
  return row;
}

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
  for (std::size_t i = 0; i < models.size(); ++i) {
    matrix.row_ids[i] = ids.empty() ? std::to_string(i) : ids[i];
  }

  const std::size_t d = matrix.columns.size();
  matrix.values.resize(models.size() * d);

  // Rows are independent; any schedule writes the same bytes.
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < models.size(); ++i) {
    try {
      const std::vector<double> row = preprocess_row(models[i], config, signature);
      std::copy(row.begin(), row.end(), matrix.values.begin() + i * d);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return matrix;
}

}  // namespace weightscan
