#include "weightscan/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "weightscan/error.hpp"
#include "weightscan/metrics.hpp"
#include "weightscan/rng.hpp"

namespace weightscan {

std::optional<NamedConfig> named_config(std::string_view name) {
  for (const NamedConfig& c : all_named_configs()) {
    if (c.name == name) return c;
  }
  return std::nullopt;
}

std::vector<NamedConfig> all_named_configs() {
  return {
      {"Base", true, NormMethod::tensor, true, false},
      {"A", false, NormMethod::tensor, true, false},
      {"B", true, NormMethod::model, true, true},
      {"C", true, NormMethod::tensor, false, false},
      {"D", true, NormMethod::tensor, true, true},
      {"E", false, NormMethod::tensor, true, true},
      {"F", false, NormMethod::none, true, true},
  };
}

namespace {

bool has_two_per_class(std::span<const int> labels,
                       const std::vector<std::size_t>& idx) {
  std::size_t pos = 0, neg = 0;
  for (std::size_t i : idx) {
    (labels[i] == 1 ? pos : neg) += 1;
  }
  return pos >= 2 && neg >= 2;
}

struct TrialSplit {
  std::vector<std::size_t> retained;
  std::vector<std::size_t> holdout;
};

TrialSplit draw_trial_split(std::size_t n, std::span<const int> labels,
                            std::size_t held_count, std::uint64_t seed,
                            std::size_t max_retries) {
  Rng rng(seed);
  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    TrialSplit split;
    split.holdout = rng.sample(n, held_count);
    std::vector<bool> held(n, false);
    for (std::size_t i : split.holdout) held[i] = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (!held[i]) split.retained.push_back(i);
    }
    bool pos = false, neg = false;
    for (std::size_t i : split.holdout) (labels[i] == 1 ? pos : neg) = true;
    if (pos && neg && has_two_per_class(labels, split.retained)) return split;
  }
  fail(ErrorKind::retry_exhausted, "could not draw an evaluation holdout");
}

std::vector<std::size_t> subsample(const std::vector<std::size_t>& pool,
                                   std::span<const int> labels, std::size_t k,
                                   std::uint64_t seed, std::size_t max_retries) {
  if (k >= pool.size()) return pool;
  Rng rng(seed);
  for (std::size_t attempt = 0; attempt <= max_retries; ++attempt) {
    const std::vector<std::size_t> picks = rng.sample(pool.size(), k);
    std::vector<std::size_t> subset;
    subset.reserve(k);
    for (std::size_t p : picks) subset.push_back(pool[p]);
    if (has_two_per_class(labels, subset)) return subset;
  }
  fail(ErrorKind::retry_exhausted,
       "could not subsample a training set with two models per class");
}

}  // namespace

std::vector<TrialRow> run_experiment(std::span<const ModelWeights> models,
                                     std::span<const int> labels,
                                     const ExperimentSpec& spec) {
  if (spec.configs.empty() || spec.configs.size() != spec.config_names.size()) {
    fail(ErrorKind::bad_argument, "experiment needs at least one named config");
  }
  if (spec.repeats == 0) fail(ErrorKind::bad_argument, "repeats must be >= 1");
  const std::size_t n = models.size();
  if (n < 6) {
    fail(ErrorKind::bad_argument, "experiment needs at least six models");
  }
  const std::size_t held_count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(spec.holdout_fraction *
                                            static_cast<double>(n))),
      2, n - 4);

  std::vector<std::size_t> sizes = spec.train_sizes;
  if (sizes.empty()) sizes.push_back(0);  // 0 = all retained models

  const std::size_t jobs = spec.configs.size() * spec.repeats * sizes.size();
  std::vector<TrialRow> rows(jobs);
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic)
  for (std::size_t job = 0; job < jobs; ++job) {
    try {
      const std::size_t c = job / (spec.repeats * sizes.size());
      const std::size_t rem = job % (spec.repeats * sizes.size());
      const std::size_t t = rem / sizes.size();
      const std::size_t s = rem % sizes.size();

      const TrialSplit split = draw_trial_split(n, labels, held_count,
                                                spec.seed + t, spec.max_retries);
      std::vector<std::size_t> train_idx = split.retained;
      if (sizes[s] > 0) {
        train_idx = subsample(split.retained, labels, sizes[s],
                              spec.seed + t + 31337 * (s + 1), spec.max_retries);
      }

      std::vector<ModelWeights> train_models;
      std::vector<int> train_labels;
      train_models.reserve(train_idx.size());
      for (std::size_t i : train_idx) {
        train_models.push_back(models[i]);
        train_labels.push_back(labels[i]);
      }

      DetectorOptions options = spec.configs[c];
      options.seed = spec.seed + t;
      const Detector detector =
          fit_detector(train_models, train_labels, options);

      std::vector<double> probs(split.holdout.size());
      std::vector<int> held_labels(split.holdout.size());
      for (std::size_t i = 0; i < split.holdout.size(); ++i) {
        probs[i] = predict_proba(detector, models[split.holdout[i]]);
        held_labels[i] = labels[split.holdout[i]];
      }
      const EvalReport report = evaluate(probs, held_labels);
      rows[job] = {spec.config_names[c], std::to_string(t), spec.seed + t,
                   train_idx.size(), report.auc, report.ce};
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  // Group means, appended after each (config, n_train) block.
  std::vector<TrialRow> ordered;
  ordered.reserve(rows.size() + spec.configs.size() * sizes.size());
  for (std::size_t c = 0; c < spec.configs.size(); ++c) {
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      double auc_sum = 0.0, ce_sum = 0.0;
      std::size_t n_train = 0;
      for (std::size_t t = 0; t < spec.repeats; ++t) {
        const TrialRow& row = rows[(c * spec.repeats + t) * sizes.size() + s];
        ordered.push_back(row);
        auc_sum += row.auc;
        ce_sum += row.ce;
        n_train = row.n_train;
      }
      ordered.push_back({spec.config_names[c], "mean", spec.seed, n_train,
                         auc_sum / static_cast<double>(spec.repeats),
                         ce_sum / static_cast<double>(spec.repeats)});
    }
  }
  return ordered;
}

void write_experiment_csv(const std::filesystem::path& path,
                          std::span<const TrialRow> rows,
                          const std::string& invocation) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string());
  if (!invocation.empty()) out << "# invocation: " << invocation << '\n';
  out << "config,trial,seed,n_train,auc,ce\n";
  char buf[128];
  for (const TrialRow& row : rows) {
    std::snprintf(buf, sizeof(buf), ",%llu,%zu,%.17g,%.17g\n",
                  static_cast<unsigned long long>(row.seed), row.n_train,
                  row.auc, row.ce);
    out << row.config << ',' << row.trial << buf;
  }
  if (!out) fail(ErrorKind::io, "write failed: " + path.string());
}

}  // namespace weightscan
