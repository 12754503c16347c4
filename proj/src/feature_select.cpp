#include "weightscan/feature_select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "weightscan/error.hpp"
#include "weightscan/linear_detector.hpp"
#include "weightscan/metrics.hpp"
#include "weightscan/rng.hpp"
#include "weightscan/stats.hpp"

namespace weightscan {

std::vector<FeatureScore> feature_auc_scores(const FeatureMatrix& matrix,
                                             std::span<const int> labels) {
  if (labels.size() != matrix.rows()) {
    fail(ErrorKind::bad_argument, "labels size does not match matrix rows");
  }
  {
    bool pos = false, neg = false;
    for (int y : labels) (y == 1 ? pos : neg) = true;
    if (!pos || !neg) {
      fail(ErrorKind::single_class, "feature scoring needs both classes");
    }
  }

  const std::size_t n = matrix.rows();
  const std::size_t d = matrix.cols();
  std::vector<FeatureScore> scores(d);
  std::exception_ptr failure;

#pragma omp parallel
  {
    std::vector<double> column(n);
#pragma omp for schedule(static)
    for (std::size_t j = 0; j < d; ++j) {
      try {
        for (std::size_t i = 0; i < n; ++i) column[i] = matrix.at(i, j);
        scores[j].index = matrix.columns[j];
        scores[j].sigma = std::abs(roc_auc(column, labels) - 0.5);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
  return scores;
}

std::vector<double> feature_correlation_scores(const FeatureMatrix& matrix,
                                               std::span<const int> labels) {
  if (labels.size() != matrix.rows()) {
    fail(ErrorKind::bad_argument, "labels size does not match matrix rows");
  }
  const std::size_t n = matrix.rows();
  const std::size_t d = matrix.cols();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<double>(labels[i]);

  std::vector<double> scores(d);
#pragma omp parallel
  {
    std::vector<double> column(n);
#pragma omp for schedule(static)
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < n; ++i) column[i] = matrix.at(i, j);
      scores[j] = std::abs(stats::pearson(column, y));
    }
  }
  return scores;
}

std::vector<std::size_t> top_weight_columns(std::span<const FeatureScore> scores,
                                            std::size_t k) {
  if (k == 0) fail(ErrorKind::bad_argument, "k must be at least 1");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // stable sort keeps provenance order for equal sigmas
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].sigma > scores[b].sigma;
  });
  if (order.size() > k) order.resize(k);
  return order;
}

std::vector<FeatureIndex> select_top_weights(std::span<const FeatureScore> scores,
                                             std::size_t k) {
  std::vector<FeatureIndex> selected;
  for (std::size_t c : top_weight_columns(scores, k)) {
    selected.push_back(scores[c].index);
  }
  return selected;
}

namespace {

struct SubSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

std::vector<SubSplit> draw_sub_splits(std::span<const int> labels,
                                      const SubSplitSpec& spec) {
  const std::size_t n = labels.size();
  if (n < 4) {
    fail(ErrorKind::bad_argument, "tensor selection needs at least four models");
  }
  const std::size_t val_count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround((1.0 - spec.train_fraction) *
                                            static_cast<double>(n))),
      2, n - 2);

  auto both = [&](const std::vector<std::size_t>& idx) {
    bool pos = false, neg = false;
    for (std::size_t i : idx) (labels[i] == 1 ? pos : neg) = true;
    return pos && neg;
  };

  std::vector<SubSplit> splits(spec.n_splits);
  for (std::size_t s = 0; s < spec.n_splits; ++s) {
    Rng rng(spec.seed + s);
    bool drawn = false;
    for (std::size_t attempt = 0; attempt <= spec.max_retries; ++attempt) {
      SubSplit split;
      split.validation = rng.sample(n, val_count);
      std::vector<bool> held(n, false);
      for (std::size_t i : split.validation) held[i] = true;
      for (std::size_t i = 0; i < n; ++i) {
        if (!held[i]) split.train.push_back(i);
      }
      if (both(split.train) && both(split.validation)) {
        splits[s] = std::move(split);
        drawn = true;
        break;
      }
    }
    if (!drawn) {
      fail(ErrorKind::retry_exhausted,
           "could not draw a sub-split containing both classes");
    }
  }
  return splits;
}

}  // namespace

std::vector<TensorScore> tensor_generalization_scores(
    std::span<const ModelWeights> models, std::span<const int> labels,
    const ArchitectureSignature& signature, const PreprocessConfig& base_config,
    const SubSplitSpec& spec) {
  if (models.size() != labels.size()) {
    fail(ErrorKind::bad_argument, "models and labels differ in length");
  }
  const std::vector<SubSplit> splits = draw_sub_splits(labels, spec);
  const std::vector<TensorSpec> tensors =
      effective_tensors(base_config, signature);

  std::vector<TensorScore> scores(tensors.size());
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    try {
      PreprocessConfig config = base_config;
      config.tensor_whitelist = std::vector<std::string>{tensors[t].name};
      const FeatureMatrix matrix =
          build_feature_matrix(models, {}, config, signature);

      double auc_sum = 0.0;
      for (const SubSplit& split : splits) {
        std::vector<int> train_y, val_y;
        for (std::size_t i : split.train) train_y.push_back(labels[i]);
        for (std::size_t i : split.validation) val_y.push_back(labels[i]);

        FeatureMatrix train_rows;
        train_rows.columns = matrix.columns;
        train_rows.row_ids.resize(split.train.size());
        train_rows.values.resize(split.train.size() * matrix.cols());
        for (std::size_t r = 0; r < split.train.size(); ++r) {
          const auto row = matrix.row(split.train[r]);
          std::copy(row.begin(), row.end(),
                    train_rows.values.begin() + r * matrix.cols());
        }

        const std::vector<FeatureScore> column_scores =
            feature_auc_scores(train_rows, train_y);
        const std::vector<std::size_t> keep =
            top_weight_columns(column_scores, spec.weight_k);

        const std::size_t d = keep.size();
        std::vector<double> train_x(split.train.size() * d);
        for (std::size_t r = 0; r < split.train.size(); ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            train_x[r * d + j] = matrix.at(split.train[r], keep[j]);
          }
        }
        const LogregFit fit = train_logreg(train_x, split.train.size(), d,
                                           train_y, spec.fit_p);

        std::vector<double> val_scores(split.validation.size());
        for (std::size_t r = 0; r < split.validation.size(); ++r) {
          double z = fit.bias;
          for (std::size_t j = 0; j < d; ++j) {
            z += fit.weights[j] * matrix.at(split.validation[r], keep[j]);
          }
          val_scores[r] = sigmoid(z);
        }
        auc_sum += roc_auc(val_scores, val_y);
      }
      scores[t] = {tensors[t].name, auc_sum / static_cast<double>(splits.size()),
                   splits.size()};
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return scores;
}

std::vector<std::string> select_top_tensors(std::span<const TensorScore> scores,
                                            std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a].mean_validation_auc > scores[b].mean_validation_auc;
  });
  if (order.size() > k) order.resize(k);
  std::vector<std::string> names;
  names.reserve(order.size());
  for (std::size_t i : order) names.push_back(scores[i].tensor_name);
  return names;
}

}  // namespace weightscan
