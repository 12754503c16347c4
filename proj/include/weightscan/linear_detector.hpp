#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "weightscan/preprocess.hpp"
#include "weightscan/tensor.hpp"

namespace weightscan {

// Objective, with labels y in {0,1} and y_hat = sigmoid(W.x + b):
//   J(W, b) = 0.5 ||W||^2 + P * sum_i [ -y_i log y_hat_i
//                                       - (1 - y_i) log(1 - y_hat_i) ]
// P multiplies the data term, so larger P means weaker regularization.
// The bias is not regularized.

double sigmoid(double z);

double logreg_objective(std::span<const double> x, std::size_t n, std::size_t d,
                        std::span<const int> y, double p,
                        std::span<const double> w, double b);

void logreg_gradient(std::span<const double> x, std::size_t n, std::size_t d,
                     std::span<const int> y, double p,
                     std::span<const double> w, double b,
                     std::span<double> grad_w, double& grad_b);

struct LogregOptions {
  double tolerance = 1e-8;      // gradient infinity-norm
  std::size_t max_iterations = 10000;
  bool track_objective = false;
};

struct LogregFit {
  std::vector<double> weights;
  double bias = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  double grad_inf_norm = 0.0;
  double objective = 0.0;
  std::vector<double> objective_trace;  // accepted iterates, when tracked
};

/// Deterministic full-batch gradient descent with a spectral trial step and
/// Armijo backtracking; the objective is non-increasing across accepted
/// iterates. Starts from zero unless warm_start is non-empty (d+1 values:
/// weights then bias). Non-convergence returns the best iterate with
/// converged == false.
LogregFit train_logreg(std::span<const double> x, std::size_t n, std::size_t d,
                       std::span<const int> y, double p,
                       const LogregOptions& options = {},
                       std::span<const double> warm_start = {});

/// Regularization grid search defaults: 17 points log-spaced on [1e-4, 1e4],
/// 30 holdout iterations, 10% held out.
std::vector<double> default_p_grid(double lo = 1e-4, double hi = 1e4,
                                   std::size_t points = 17);

struct CVSpec {
  std::vector<double> grid = default_p_grid();
  std::size_t iterations = 30;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t max_retries = 100;
};

struct CVResult {
  double best_p = 1.0;
  double best_mean_ce = 0.0;
  std::vector<double> mean_cross_entropy;  // one per grid point
};

/// For each P: fit on the retained models of each seeded holdout and score
/// cross-entropy on the held-out ones. Holdout draws depend only on
/// (seed + iteration), so every P sees the same splits. Ties go to the
/// smaller P.
CVResult cross_validate_p(std::span<const double> x, std::size_t n,
                          std::size_t d, std::span<const int> y,
                          const CVSpec& spec);

struct TrainingSummary {
  std::size_t n_models = 0;
  std::optional<double> cv_cross_entropy;  // absent in fixed-P mode

  friend bool operator==(const TrainingSummary&, const TrainingSummary&) = default;
};

/// Frozen detector artifact; everything predict_proba needs.
struct Detector {
  PreprocessConfig preprocess;        // whitelist resolved
  std::vector<FeatureIndex> features;
  std::vector<double> weights;        // |weights| == |features|
  double bias = 0.0;
  double regularization = 1.0;        // the chosen P
  ArchitectureSignature signature;
  TrainingSummary training_summary;
};

bool detectors_equal(const Detector& a, const Detector& b);

struct DetectorOptions {
  std::shared_ptr<const ModelWeights> reference;  // null = no subtraction
  NormMethod norm_method = NormMethod::tensor;
  bool tensor_selection = true;
  bool sorted = false;
  std::size_t weight_k = 1000;
  std::size_t tensor_k = 25;
  CVSpec cv;
  std::optional<double> fixed_p;  // skip the CV search when set
  std::uint64_t seed = 0;         // drives cv and tensor-selection splits
  LogregOptions logreg;
};

/// Common signature of the subject models, restricted to the tensors the
/// reference covers (with matching shape) when one is given.
ArchitectureSignature signature_for(std::span<const ModelWeights> models,
                                    const ModelWeights* reference);

/// Full pipeline: common signature -> optional tensor selection ->
/// feature matrix -> top-k weight selection -> P search -> final fit.
Detector fit_detector(std::span<const ModelWeights> models,
                      std::span<const int> labels,
                      const DetectorOptions& options);

/// Preprocess one model with the detector's config, gather its selected
/// features and return sigmoid(W.x + b).
double predict_proba(const Detector& detector, const ModelWeights& model);

std::vector<double> predict_batch(const Detector& detector,
                                  std::span<const ModelWeights> models);

/// UTF-8 JSON, version 1, floats at full round-trip precision.
void save_detector(const std::filesystem::path& path, const Detector& detector);
Detector load_detector(const std::filesystem::path& path);

}  // namespace weightscan
