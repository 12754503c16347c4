#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support/oracles.hpp"
#include "weightscan/error.hpp"
#include "weightscan/feature_select.hpp"
#include "weightscan/linear_detector.hpp"
#include "weightscan/metrics.hpp"
#include "weightscan/rng.hpp"

using namespace weightscan;

namespace {

FeatureMatrix matrix_from_columns(const std::vector<std::vector<double>>& cols) {
  FeatureMatrix m;
  const std::size_t n = cols.front().size();
  const std::size_t d = cols.size();
  m.row_ids.resize(n);
  for (std::size_t j = 0; j < d; ++j) {
    m.columns.push_back({"t", j});
  }
  m.values.resize(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      m.values[i * d + j] = cols[j][i];
    }
  }
  return m;
}

ModelWeights model_with(const std::vector<std::pair<std::string, std::vector<double>>>& tensors) {
  ModelWeights m;
  for (const auto& [name, data] : tensors) {
    WeightTensor t;
    t.name = name;
    t.shape = {data.size()};
    t.data = data;
    m.tensors.push_back(std::move(t));
  }
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("feature_select");

TEST_CASE("sigma for cleanly separated columns") {
  const FeatureMatrix m = matrix_from_columns({{0.1, 0.2, 0.8, 0.9}});
  const std::vector<int> y{0, 0, 1, 1};
  const auto scores = feature_auc_scores(m, y);
  CHECK(scores[0].sigma == 0.5);

  // anti-correlated columns are just as informative
  const FeatureMatrix inv = matrix_from_columns({{0.8, 0.9, 0.1, 0.2}});
  CHECK(feature_auc_scores(inv, y)[0].sigma == 0.5);

  const FeatureMatrix flat = matrix_from_columns({{0.4, 0.4, 0.4, 0.4}});
  CHECK(feature_auc_scores(flat, y)[0].sigma == 0.0);
}

TEST_CASE("sigma matches the pairwise oracle with ties") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 6 + rng.below(30);
    std::vector<double> col(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = static_cast<double>(rng.below(6)) / 6.0;
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 0;
    y[1] = 1;
    const FeatureMatrix m = matrix_from_columns({col});
    CHECK(feature_auc_scores(m, y)[0].sigma ==
          std::abs(oracles::pairwise_auc(col, y) - 0.5));
  }
}

TEST_CASE("sigma stays in [0, 0.5]") {
  Rng rng(22);
  std::vector<std::vector<double>> cols;
  for (int j = 0; j < 50; ++j) {
    std::vector<double> col(20);
    for (double& v : col) v = rng.uniform(-1, 1);
    cols.push_back(std::move(col));
  }
  std::vector<int> y(20);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 2;
  for (const auto& s : feature_auc_scores(matrix_from_columns(cols), y)) {
    CHECK(s.sigma >= 0.0);
    CHECK(s.sigma <= 0.5);
  }
}

TEST_CASE("correlation scores") {
  const std::vector<int> y{0, 1, 0, 1, 1, 0};
  std::vector<double> as_double(y.begin(), y.end());

  SUBCASE("column equal to the labels scores 1") {
    const FeatureMatrix m = matrix_from_columns({as_double});
    CHECK(feature_correlation_scores(m, y)[0] == doctest::Approx(1.0));
  }
  SUBCASE("constant column scores 0") {
    const FeatureMatrix m = matrix_from_columns({{2, 2, 2, 2, 2, 2}});
    CHECK(feature_correlation_scores(m, y)[0] == 0.0);
  }
  SUBCASE("random columns match the covariance formula") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<double> col(6);
      for (double& v : col) v = rng.uniform(-2, 2);
      const FeatureMatrix m = matrix_from_columns({col});
      CHECK(feature_correlation_scores(m, y)[0] ==
            doctest::Approx(std::abs(oracles::covariance_pearson(col, as_double)))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("select_top_weights ordering and ties") {
  std::vector<FeatureScore> scores;
  scores.push_back({{"t", 0}, 0.5});
  scores.push_back({{"t", 1}, 0.1});
  scores.push_back({{"t", 2}, 0.3});

  SUBCASE("descending sigma") {
    const auto picked = select_top_weights(scores, 2);
    REQUIRE(picked.size() == 2);
    CHECK(picked[0].position == 0);
    CHECK(picked[1].position == 2);
  }
  SUBCASE("all equal keeps provenance order") {
    for (auto& s : scores) s.sigma = 0.2;
    const auto picked = select_top_weights(scores, 2);
    CHECK(picked[0].position == 0);
    CHECK(picked[1].position == 1);
  }
  SUBCASE("k larger than the column count returns everything") {
    CHECK(select_top_weights(scores, 100).size() == 3);
  }
  SUBCASE("matches a full stable sort on random scores") {
    Rng rng(24);
    std::vector<FeatureScore> random_scores;
    for (std::size_t j = 0; j < 200; ++j) {
      random_scores.push_back({{"t", j}, static_cast<double>(rng.below(15)) / 30.0});
    }
    const auto picked = top_weight_columns(random_scores, 50);

    std::vector<std::size_t> expect(random_scores.size());
    std::iota(expect.begin(), expect.end(), std::size_t{0});
    std::stable_sort(expect.begin(), expect.end(), [&](std::size_t a, std::size_t b) {
      return random_scores[a].sigma > random_scores[b].sigma;
    });
    expect.resize(50);
    CHECK(picked == expect);
  }
}

TEST_CASE("sigma equals a literally trained 1-D logistic model") {
  Rng rng(25);
  const std::size_t n = 40;
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = i % 2;

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> col(n);
    for (double& v : col) v = rng.uniform(-2, 2);

    const FeatureMatrix m = matrix_from_columns({col});
    const double sigma = feature_auc_scores(m, y)[0].sigma;

    const LogregFit fit = train_logreg(col, n, 1, y, 1.0);
    std::vector<double> probs(n);
    for (std::size_t i = 0; i < n; ++i) {
      probs[i] = sigmoid(fit.weights[0] * col[i] + fit.bias);
    }
    const double model_sigma = std::abs(roc_auc(probs, y) - 0.5);
    CHECK(sigma == doctest::Approx(model_sigma).epsilon(1e-9));
  }
}

TEST_CASE("tensor generalization ranking") {
  Rng rng(26);
  const std::size_t n = 60;
  std::vector<int> y(n);
  std::vector<ModelWeights> models;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    std::vector<double> informative(4);
    informative[0] = static_cast<double>(y[i]);  // first weight equals label
    for (std::size_t k = 1; k < 4; ++k) informative[k] = rng.uniform(-1, 1);
    std::vector<double> noise(4);
    for (double& v : noise) v = rng.uniform(-1, 1);
    models.push_back(model_with({{"informative", informative}, {"noise", noise}}));
  }
  const ArchitectureSignature sig{{{"informative", {4}}, {"noise", {4}}}};
  PreprocessConfig base;  // norm none, unsorted

  SubSplitSpec spec;
  spec.seed = 4242;
  const auto scores = tensor_generalization_scores(models, y, sig, base, spec);
  REQUIRE(scores.size() == 2);
  CHECK(scores[0].tensor_name == "informative");
  CHECK(scores[0].mean_validation_auc == 1.0);
  CHECK(scores[0].n_splits == 5);
  // pure noise stays near chance at this sample size
  CHECK(scores[1].mean_validation_auc >= 0.3);
  CHECK(scores[1].mean_validation_auc <= 0.7);

  SUBCASE("informative tensor ranks first") {
    const auto top = select_top_tensors(scores, 1);
    CHECK(top == std::vector<std::string>{"informative"});
  }
}

TEST_CASE("select_top_tensors ordering") {
  std::vector<TensorScore> scores{{"a", 0.6, 5}, {"b", 0.9, 5}, {"c", 0.6, 5}};
  SUBCASE("descending mean AUC") {
    CHECK(select_top_tensors(scores, 2) ==
          std::vector<std::string>{"b", "a"});  // tie a/c keeps earlier
  }
  SUBCASE("all returned when k exceeds the list") {
    CHECK(select_top_tensors(scores, 10).size() == 3);
  }
  SUBCASE("equal scores keep signature order") {
    for (auto& s : scores) s.mean_validation_auc = 0.5;
    CHECK(select_top_tensors(scores, 3) ==
          std::vector<std::string>{"a", "b", "c"});
  }
}

TEST_SUITE_END();
