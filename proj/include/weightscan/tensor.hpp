#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace weightscan {

/// One named parameter tensor. Files store elements as little-endian f32;
/// in memory everything is widened to double so downstream statistics stay
/// numerically stable.
struct WeightTensor {
  std::string name;
  std::vector<std::size_t> shape;  // all dimensions >= 1
  std::vector<double> data;        // flat, row-major; size == element_count()

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
};

/// All tensors of one model, in serialization order, plus free-form metadata
/// (the architecture id at minimum). Tensor names are unique within a model.
struct ModelWeights {
  std::vector<WeightTensor> tensors;
  std::map<std::string, std::string> metadata;

  const WeightTensor* find(std::string_view name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  /// Throws on duplicate names, shape/data size mismatch, or non-finite data.
  void validate() const;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;

  friend bool operator==(const TensorSpec&, const TensorSpec&) = default;
};

/// The (name, shape) pairs shared by every model in a comparison group,
/// in the tensor order of the first model.
struct ArchitectureSignature {
  std::vector<TensorSpec> tensor_specs;

  const TensorSpec* find(std::string_view name) const {
    for (const auto& s : tensor_specs) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  friend bool operator==(const ArchitectureSignature&,
                         const ArchitectureSignature&) = default;
};

struct ManifestEntry {
  std::string id;
  std::string path;
  std::string architecture;
  std::optional<int> label;  // 0 clean, 1 poisoned, absent for unlabeled

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

}  // namespace weightscan
