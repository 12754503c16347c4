#include "weightscan/linear_detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "weightscan/error.hpp"
#include "weightscan/feature_select.hpp"
#include "weightscan/metrics.hpp"
#include "weightscan/rng.hpp"
#include "weightscan/weight_store.hpp"

namespace weightscan {

namespace {

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

void check_training_inputs(std::span<const double> x, std::size_t n,
                           std::size_t d, std::span<const int> y, double p) {
  if (n < 2) fail(ErrorKind::bad_argument, "need at least two models");
  if (x.size() != n * d) {
    fail(ErrorKind::bad_argument, "matrix size does not match n*d");
  }
  if (y.size() != n) fail(ErrorKind::bad_argument, "labels size mismatch");
  if (!(p > 0.0)) fail(ErrorKind::bad_argument, "P must be positive");
  bool pos = false, neg = false;
  for (int label : y) {
    if (label == 1) {
      pos = true;
    } else if (label == 0) {
      neg = true;
    } else {
      fail(ErrorKind::bad_label, "labels must be 0 or 1");
    }
  }
  if (!pos || !neg) {
    fail(ErrorKind::single_class, "training set must contain both classes");
  }
  for (double v : x) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::non_finite, "feature matrix contains a non-finite value");
    }
  }
}

void compute_logits(std::span<const double> x, std::size_t n, std::size_t d,
                    std::span<const double> w, double b,
                    std::span<double> logits) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * d;
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += row[j] * w[j];
    logits[i] = z;
  }
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logreg_objective(std::span<const double> x, std::size_t n, std::size_t d,
                        std::span<const int> y, double p,
                        std::span<const double> w, double b) {
  double data_term = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * d;
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += row[j] * w[j];
    data_term += softplus(z) - (y[i] == 1 ? z : 0.0);
  }
  double reg = 0.0;
  for (double v : w) reg += v * v;
  return 0.5 * reg + p * data_term;
}

void logreg_gradient(std::span<const double> x, std::size_t n, std::size_t d,
                     std::span<const int> y, double p,
                     std::span<const double> w, double b,
                     std::span<double> grad_w, double& grad_b) {
  std::vector<double> residual(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * d;
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += row[j] * w[j];
    residual[i] = sigmoid(z) - static_cast<double>(y[i]);
  }
  for (std::size_t j = 0; j < d; ++j) {
    double g = 0.0;
    for (std::size_t i = 0; i < n; ++i) g += x[i * d + j] * residual[i];
    grad_w[j] = w[j] + p * g;
  }
  double gb = 0.0;
  for (std::size_t i = 0; i < n; ++i) gb += residual[i];
  grad_b = p * gb;
}

LogregFit train_logreg(std::span<const double> x, std::size_t n, std::size_t d,
                       std::span<const int> y, double p,
                       const LogregOptions& options,
                       std::span<const double> warm_start) {
  check_training_inputs(x, n, d, y, p);

  // Parameter vector: weights then bias.
  std::vector<double> param(d + 1, 0.0);
  if (!warm_start.empty()) {
    if (warm_start.size() != d + 1) {
      fail(ErrorKind::bad_argument, "warm start size mismatch");
    }
    std::copy(warm_start.begin(), warm_start.end(), param.begin());
  }

  auto objective_at = [&](const std::vector<double>& q) {
    return logreg_objective(x, n, d, y, p, {q.data(), d}, q[d]);
  };
  auto gradient_at = [&](const std::vector<double>& q, std::vector<double>& g) {
    logreg_gradient(x, n, d, y, p, {q.data(), d}, q[d], {g.data(), d}, g[d]);
  };

  std::vector<double> grad(d + 1), prev_param, prev_grad, trial(d + 1);
  double objective = objective_at(param);
  gradient_at(param, grad);

  LogregFit fit;
  if (options.track_objective) fit.objective_trace.push_back(objective);
  double step = 0.0;
  constexpr double kArmijo = 1e-4;

  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    double grad_inf = 0.0;
    double grad_sq = 0.0;
    for (double g : grad) {
      grad_inf = std::max(grad_inf, std::abs(g));
      grad_sq += g * g;
    }
    fit.grad_inf_norm = grad_inf;
    fit.iterations = iter;
    if (grad_inf <= options.tolerance) {
      fit.converged = true;
      break;
    }

    // Spectral (Barzilai-Borwein) trial step, safeguarded by Armijo below.
    if (prev_param.empty()) {
      step = 1.0 / std::max(1.0, grad_inf);
    } else {
      double ss = 0.0, sy = 0.0;
      for (std::size_t j = 0; j < param.size(); ++j) {
        const double s = param[j] - prev_param[j];
        const double yv = grad[j] - prev_grad[j];
        ss += s * s;
        sy += s * yv;
      }
      step = sy > 0.0 ? std::clamp(ss / sy, 1e-12, 1e12)
                      : std::min(step * 2.0, 1e12);
    }

    bool accepted = false;
    double trial_objective = objective;
    for (int halving = 0; halving < 60; ++halving) {
      for (std::size_t j = 0; j < param.size(); ++j) {
        trial[j] = param[j] - step * grad[j];
      }
      trial_objective = objective_at(trial);
      if (trial_objective <= objective - kArmijo * step * grad_sq) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // gradient numerically flat; report best iterate

    prev_param = param;
    prev_grad = grad;
    param = trial;
    objective = trial_objective;
    gradient_at(param, grad);
    if (options.track_objective) fit.objective_trace.push_back(objective);
  }

  fit.weights.assign(param.begin(), param.begin() + d);
  fit.bias = param[d];
  fit.objective = objective;
  if (!fit.converged) {
    double grad_inf = 0.0;
    for (double g : grad) grad_inf = std::max(grad_inf, std::abs(g));
    fit.grad_inf_norm = grad_inf;
    fit.iterations = options.max_iterations;
  }
  return fit;
}

std::vector<double> default_p_grid(double lo, double hi, std::size_t points) {
  if (points == 0 || !(lo > 0.0) || !(hi >= lo)) {
    fail(ErrorKind::bad_argument, "invalid P grid");
  }
  std::vector<double> grid(points);
  if (points == 1) {
    grid[0] = lo;
    return grid;
  }
  const double llo = std::log10(lo);
  const double lhi = std::log10(hi);
  for (std::size_t k = 0; k < points; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(points - 1);
    grid[k] = std::pow(10.0, llo + (lhi - llo) * t);
  }
  return grid;
}

namespace {

struct Holdout {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held;
};

bool has_both_classes(std::span<const int> y, const std::vector<std::size_t>& idx) {
  bool pos = false, neg = false;
  for (std::size_t i : idx) {
    (y[i] == 1 ? pos : neg) = true;
  }
  return pos && neg;
}

/// Seeded holdout with both classes on both sides; redrawn up to the cap.
Holdout draw_holdout(std::size_t n, std::span<const int> y, std::size_t held_count,
                     std::uint64_t seed, std::size_t max_retries) {
  Rng rng(seed);
  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    Holdout h;
    h.held = rng.sample(n, held_count);
    std::vector<bool> is_held(n, false);
    for (std::size_t i : h.held) is_held[i] = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_held[i]) h.train.push_back(i);
    }
    if (has_both_classes(y, h.train) && has_both_classes(y, h.held)) return h;
  }
  fail(ErrorKind::retry_exhausted,
       "could not draw a holdout containing both classes");
}

void gather_rows(std::span<const double> x, std::size_t d,
                 const std::vector<std::size_t>& rows, std::vector<double>& out,
                 std::vector<int>& out_y, std::span<const int> y) {
  out.resize(rows.size() * d);
  out_y.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = x.data() + rows[r] * d;
    std::copy(src, src + d, out.begin() + r * d);
    out_y[r] = y[rows[r]];
  }
}

}  // namespace

CVResult cross_validate_p(std::span<const double> x, std::size_t n,
                          std::size_t d, std::span<const int> y,
                          const CVSpec& spec) {
  check_training_inputs(x, n, d, y, 1.0);
  if (spec.grid.empty()) fail(ErrorKind::bad_argument, "empty P grid");
  if (n < 4) {
    fail(ErrorKind::bad_argument,
         "cross validation needs at least four models");
  }
  const std::size_t held_count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.holdout_fraction *
                                            static_cast<double>(n))),
      2, n - 2);

  const std::size_t grid_size = spec.grid.size();
  std::vector<double> ce(grid_size * spec.iterations, 0.0);
  std::exception_ptr failure;

  // Iterations are independent; within one, the grid is swept in ascending
  // order with warm starts (the previous optimum is an excellent initial
  // point for the next P).
#pragma omp parallel for schedule(dynamic)
  for (std::size_t it = 0; it < spec.iterations; ++it) {
    try {
      const Holdout split =
          draw_holdout(n, y, held_count, spec.seed + it, spec.max_retries);
      std::vector<double> train_x, held_x;
      std::vector<int> train_y, held_y;
      gather_rows(x, d, split.train, train_x, train_y, y);
      gather_rows(x, d, split.held, held_x, held_y, y);

      std::vector<double> warm;
      for (std::size_t g = 0; g < grid_size; ++g) {
        const LogregFit fit =
            train_logreg(train_x, split.train.size(), d, train_y, spec.grid[g],
                         {}, warm);
        warm = fit.weights;
        warm.push_back(fit.bias);

        std::vector<double> probs(split.held.size());
        std::vector<double> logits(split.held.size());
        compute_logits(held_x, split.held.size(), d, fit.weights, fit.bias,
                       logits);
        for (std::size_t i = 0; i < probs.size(); ++i) {
          probs[i] = sigmoid(logits[i]);
        }
        ce[g * spec.iterations + it] = cross_entropy(probs, held_y);
      }
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  CVResult result;
  result.mean_cross_entropy.resize(grid_size);
  for (std::size_t g = 0; g < grid_size; ++g) {
    double sum = 0.0;
    for (std::size_t it = 0; it < spec.iterations; ++it) {
      sum += ce[g * spec.iterations + it];
    }
    result.mean_cross_entropy[g] = sum / static_cast<double>(spec.iterations);
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid_size; ++g) {
    if (result.mean_cross_entropy[g] < result.mean_cross_entropy[best]) {
      best = g;  // strict <, so ties stay with the smaller P
    }
  }
  result.best_p = spec.grid[best];
  result.best_mean_ce = result.mean_cross_entropy[best];
  return result;
}

ArchitectureSignature signature_for(std::span<const ModelWeights> models,
                                    const ModelWeights* reference) {
  const ArchitectureSignature sig = common_architecture(models);
  if (reference == nullptr) return sig;
  ArchitectureSignature out;
  for (const auto& spec : sig.tensor_specs) {
    const WeightTensor* t = reference->find(spec.name);
    if (t != nullptr && t->shape == spec.shape) {
      out.tensor_specs.push_back(spec);
    }
  }
  if (out.tensor_specs.empty()) {
    fail(ErrorKind::empty_signature,
         "reference model shares no tensor with the subjects");
  }
  return out;
}

namespace {

std::vector<std::size_t> feature_offsets(const PreprocessConfig& config,
                                         const ArchitectureSignature& sig,
                                         std::vector<TensorSpec>& specs) {
  specs = effective_tensors(config, sig);
  std::vector<std::size_t> offsets(specs.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    offsets[i] = off;
    std::size_t count = 1;
    for (std::size_t dim : specs[i].shape) count *= dim;
    off += count;
  }
  return offsets;
}

std::vector<double> gather_features(const Detector& detector,
                                    std::span<const double> row) {
  std::vector<TensorSpec> specs;
  const std::vector<std::size_t> offsets =
      feature_offsets(detector.preprocess, detector.signature, specs);
  std::vector<double> x(detector.features.size());
  for (std::size_t j = 0; j < detector.features.size(); ++j) {
    const FeatureIndex& f = detector.features[j];
    std::size_t which = specs.size();
    for (std::size_t s = 0; s < specs.size(); ++s) {
      if (specs[s].name == f.tensor_name) {
        which = s;
        break;
      }
    }
    if (which == specs.size()) {
      fail(ErrorKind::missing_tensor,
           "detector feature references unknown tensor '" + f.tensor_name + "'");
    }
    x[j] = row[offsets[which] + f.position];
  }
  return x;
}

}  // namespace

Detector fit_detector(std::span<const ModelWeights> models,
                      std::span<const int> labels,
                      const DetectorOptions& options) {
  if (models.size() != labels.size()) {
    fail(ErrorKind::bad_argument, "models and labels differ in length");
  }
  std::size_t pos = 0, neg = 0;
  for (int y : labels) {
    if (y == 1) {
      ++pos;
    } else if (y == 0) {
      ++neg;
    } else {
      fail(ErrorKind::bad_label, "labels must be 0 or 1");
    }
  }
  if (pos < 2 || neg < 2) {
    fail(ErrorKind::single_class, "need at least two models per class");
  }

  const ArchitectureSignature signature =
      signature_for(models, options.reference.get());

  PreprocessConfig config;
  config.reference = options.reference;
  config.norm_method = options.norm_method;
  config.sorted = options.sorted;

  if (options.tensor_selection) {
    SubSplitSpec splits;
    splits.seed = options.seed + 1000003;
    splits.weight_k = options.weight_k;
    const std::vector<TensorScore> scores =
        tensor_generalization_scores(models, labels, signature, config, splits);
    config.tensor_whitelist = select_top_tensors(scores, options.tensor_k);
  } else {
    std::vector<std::string> all;
    for (const auto& spec : signature.tensor_specs) all.push_back(spec.name);
    config.tensor_whitelist = std::move(all);
  }

  const FeatureMatrix matrix =
      build_feature_matrix(models, {}, config, signature);
  const std::vector<FeatureScore> scores = feature_auc_scores(matrix, labels);
  const std::vector<std::size_t> column_order =
      top_weight_columns(scores, options.weight_k);

  Detector detector;
  detector.preprocess = config;
  detector.signature = signature;
  detector.features.reserve(column_order.size());
  for (std::size_t c : column_order) {
    detector.features.push_back(matrix.columns[c]);
  }

  const std::size_t n = matrix.rows();
  const std::size_t d = column_order.size();
  std::vector<double> selected(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      selected[i * d + j] = matrix.at(i, column_order[j]);
    }
  }

  detector.training_summary.n_models = n;
  if (options.fixed_p) {
    if (!(*options.fixed_p > 0.0)) {
      fail(ErrorKind::bad_argument, "fixed P must be positive");
    }
    detector.regularization = *options.fixed_p;
  } else {
    CVSpec cv = options.cv;
    cv.seed = options.seed;
    const CVResult result = cross_validate_p(selected, n, d, labels, cv);
    detector.regularization = result.best_p;
    detector.training_summary.cv_cross_entropy = result.best_mean_ce;
  }

  const LogregFit fit = train_logreg(selected, n, d, labels,
                                     detector.regularization, options.logreg);
  detector.weights = fit.weights;
  detector.bias = fit.bias;
  return detector;
}

double predict_proba(const Detector& detector, const ModelWeights& model) {
  const std::vector<double> row =
      preprocess_row(model, detector.preprocess, detector.signature);
  const std::vector<double> x = gather_features(detector, row);
  double z = detector.bias;
  for (std::size_t j = 0; j < x.size(); ++j) z += detector.weights[j] * x[j];
  return sigmoid(z);
}

std::vector<double> predict_batch(const Detector& detector,
                                  std::span<const ModelWeights> models) {
  std::vector<double> probs(models.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < models.size(); ++i) {
    try {
      probs[i] = predict_proba(detector, models[i]);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return probs;
}

namespace {

nlohmann::json model_to_json(const ModelWeights& model) {
  nlohmann::json j;
  j["metadata"] = model.metadata;
  j["tensors"] = nlohmann::json::array();
  for (const auto& t : model.tensors) {
    nlohmann::json entry;
    entry["name"] = t.name;
    entry["shape"] = t.shape;
    entry["data"] = t.data;
    j["tensors"].push_back(std::move(entry));
  }
  return j;
}

ModelWeights model_from_json(const nlohmann::json& j) {
  ModelWeights model;
  for (auto& [key, value] : j.at("metadata").items()) {
    model.metadata[key] = value.get<std::string>();
  }
  for (const auto& entry : j.at("tensors")) {
    WeightTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<std::size_t>>();
    t.data = entry.at("data").get<std::vector<double>>();
    model.tensors.push_back(std::move(t));
  }
  model.validate();
  return model;
}

bool models_equal(const ModelWeights& a, const ModelWeights& b) {
  if (a.metadata != b.metadata || a.tensors.size() != b.tensors.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].name != b.tensors[i].name ||
        a.tensors[i].shape != b.tensors[i].shape ||
        a.tensors[i].data != b.tensors[i].data) {
      return false;
    }
  }
  return true;
}

}  // namespace

bool detectors_equal(const Detector& a, const Detector& b) {
  if (static_cast<bool>(a.preprocess.reference) !=
      static_cast<bool>(b.preprocess.reference)) {
    return false;
  }
  if (a.preprocess.reference &&
      !models_equal(*a.preprocess.reference, *b.preprocess.reference)) {
    return false;
  }
  return a.preprocess.norm_method == b.preprocess.norm_method &&
         a.preprocess.sorted == b.preprocess.sorted &&
         a.preprocess.tensor_whitelist == b.preprocess.tensor_whitelist &&
         a.features == b.features && a.weights == b.weights &&
         a.bias == b.bias && a.regularization == b.regularization &&
         a.signature == b.signature &&
         a.training_summary == b.training_summary;
}

void save_detector(const std::filesystem::path& path, const Detector& detector) {
  if (detector.weights.size() != detector.features.size()) {
    fail(ErrorKind::bad_argument, "weight count differs from feature count");
  }
  nlohmann::json j;
  j["version"] = 1;

  nlohmann::json pp;
  pp["norm_method"] = std::string(to_string(detector.preprocess.norm_method));
  pp["sorted"] = detector.preprocess.sorted;
  if (detector.preprocess.tensor_whitelist) {
    pp["tensor_whitelist"] = *detector.preprocess.tensor_whitelist;
  } else {
    pp["tensor_whitelist"] = nullptr;
  }
  if (detector.preprocess.reference) {
    pp["reference"] = model_to_json(*detector.preprocess.reference);
  } else {
    pp["reference"] = nullptr;
  }
  j["preprocess"] = std::move(pp);

  j["signature"] = nlohmann::json::array();
  for (const auto& spec : detector.signature.tensor_specs) {
    j["signature"].push_back({{"name", spec.name}, {"shape", spec.shape}});
  }
  j["features"] = nlohmann::json::array();
  for (const auto& f : detector.features) {
    j["features"].push_back({{"tensor", f.tensor_name}, {"position", f.position}});
  }
  j["W"] = detector.weights;
  j["b"] = detector.bias;
  j["P"] = detector.regularization;

  nlohmann::json summary;
  summary["n_models"] = detector.training_summary.n_models;
  if (detector.training_summary.cv_cross_entropy) {
    summary["cv_cross_entropy"] = *detector.training_summary.cv_cross_entropy;
  } else {
    summary["cv_cross_entropy"] = nullptr;
  }
  j["training_summary"] = std::move(summary);

  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string());
  out << j.dump() << '\n';
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

Detector load_detector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed, path.string() + ": " + e.what());
  }

  try {
    if (j.at("version").get<int>() != 1) {
      fail(ErrorKind::version_mismatch,
           path.string() + ": unsupported detector version");
    }
    Detector detector;
    const auto& pp = j.at("preprocess");
    detector.preprocess.norm_method =
        norm_method_from_string(pp.at("norm_method").get<std::string>());
    detector.preprocess.sorted = pp.at("sorted").get<bool>();
    if (!pp.at("tensor_whitelist").is_null()) {
      detector.preprocess.tensor_whitelist =
          pp.at("tensor_whitelist").get<std::vector<std::string>>();
    }
    if (!pp.at("reference").is_null()) {
      detector.preprocess.reference =
          std::make_shared<ModelWeights>(model_from_json(pp.at("reference")));
    }
    for (const auto& spec : j.at("signature")) {
      detector.signature.tensor_specs.push_back(
          {spec.at("name").get<std::string>(),
           spec.at("shape").get<std::vector<std::size_t>>()});
    }
    for (const auto& f : j.at("features")) {
      detector.features.push_back({f.at("tensor").get<std::string>(),
                                   f.at("position").get<std::size_t>()});
    }
    detector.weights = j.at("W").get<std::vector<double>>();
    detector.bias = j.at("b").get<double>();
    detector.regularization = j.at("P").get<double>();
    detector.training_summary.n_models =
        j.at("training_summary").at("n_models").get<std::size_t>();
    if (!j.at("training_summary").at("cv_cross_entropy").is_null()) {
      detector.training_summary.cv_cross_entropy =
          j.at("training_summary").at("cv_cross_entropy").get<double>();
    }
    if (detector.weights.size() != detector.features.size()) {
      fail(ErrorKind::malformed,
           path.string() + ": W length differs from feature list");
    }
    return detector;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed, path.string() + ": " + e.what());
  }
}

}  // namespace weightscan
