#pragma once

// Independent oracles for the test suites. These deliberately use different
// algorithms from the library (pair counting instead of rank statistics,
// plain-order summation instead of canonical accumulation, full sorts,
// finite differences) so agreement is meaningful.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unistd.h>
#include <vector>

#include "weightscan/rng.hpp"
#include "weightscan/tensor.hpp"

namespace oracles {

/// O(n^2) pairwise AUC: wins count 1, ties count 1/2.
inline double pairwise_auc(std::span<const double> scores,
                           std::span<const int> labels) {
  double credit = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j]) {
        credit += 1.0;
      } else if (scores[i] == scores[j]) {
        credit += 0.5;
      }
    }
  }
  for (int y : labels) {
    if (y == 0) ++n_neg;
  }
  return credit / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Central finite difference of f along coordinate k.
template <typename F>
double central_difference(F&& f, std::vector<double> point, std::size_t k,
                          double h = 1e-6) {
  point[k] += h;
  const double plus = f(point);
  point[k] -= 2.0 * h;
  const double minus = f(point);
  return (plus - minus) / (2.0 * h);
}

inline bool same_multiset(std::span<const double> a, std::span<const double> b) {
  std::map<double, std::size_t> counts;
  for (double v : a) ++counts[v];
  for (double v : b) {
    auto it = counts.find(v);
    if (it == counts.end() || it->second == 0) return false;
    --it->second;
  }
  for (const auto& [value, count] : counts) {
    if (count != 0) return false;
  }
  return true;
}

/// Pearson correlation via the covariance formula (population moments).
inline double covariance_pearson(std::span<const double> x,
                                 std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  return cov / std::sqrt(vx * vy);
}

/// Plain left-to-right sum of squares.
inline double plain_frobenius(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

/// Random model with a few random-shaped tensors, finite f32-exact values.
inline weightscan::ModelWeights random_model(weightscan::Rng& rng,
                                             std::size_t max_tensors = 5,
                                             std::size_t max_dim = 6) {
  weightscan::ModelWeights model;
  const std::size_t n_tensors = 1 + rng.below(max_tensors);
  for (std::size_t t = 0; t < n_tensors; ++t) {
    weightscan::WeightTensor tensor;
    tensor.name = "tensor_" + std::to_string(t);
    const std::size_t rank = 1 + rng.below(3);
    for (std::size_t r = 0; r < rank; ++r) {
      tensor.shape.push_back(1 + rng.below(max_dim));
    }
    tensor.data.resize(tensor.element_count());
    for (double& v : tensor.data) {
      // float-exact so f32 files round-trip bit-identically
      v = static_cast<double>(static_cast<float>(rng.uniform(-2.0, 2.0)));
    }
    model.tensors.push_back(std::move(tensor));
  }
  model.metadata["architecture"] = "random";
  return model;
}

/// Accuracy of classifying each sample to the nearest prototype (L2).
inline double nearest_prototype_accuracy(std::span<const double> prototypes,
                                         std::size_t n_classes,
                                         std::span<const double> pixels,
                                         std::span<const int> labels,
                                         std::size_t dim) {
  std::size_t hits = 0;
  const std::size_t count = labels.size();
  for (std::size_t i = 0; i < count; ++i) {
    const double* x = pixels.data() + i * dim;
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double* p = prototypes.data() + c * dim;
      double dist = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double diff = x[k] - p[k];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    if (static_cast<int>(best) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

/// Scratch directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("weightscan_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace oracles
