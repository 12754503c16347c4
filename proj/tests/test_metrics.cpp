#include <cmath>
#include <vector>

#include "doctest.h"
#include "support/oracles.hpp"
#include "weightscan/error.hpp"
#include "weightscan/metrics.hpp"
#include "weightscan/rng.hpp"

using namespace weightscan;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("perfect and inverted separation") {
  const std::vector<double> scores{0.9, 0.8, 0.1, 0.2};
  const std::vector<int> labels{1, 1, 0, 0};
  CHECK(roc_auc(scores, labels) == 1.0);

  const std::vector<int> flipped{0, 0, 1, 1};
  CHECK(roc_auc(scores, flipped) == 0.0);
}

TEST_CASE("all scores equal gives 0.5") {
  const std::vector<double> scores{0.3, 0.3, 0.3, 0.3, 0.3};
  const std::vector<int> labels{1, 0, 1, 0, 0};
  CHECK(roc_auc(scores, labels) == 0.5);
}

TEST_CASE("single class is an error") {
  const std::vector<double> scores{0.1, 0.2};
  const std::vector<int> labels{1, 1};
  CHECK_THROWS_AS(roc_auc(scores, labels), Error);
  try {
    roc_auc(scores, labels);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::single_class);
  }
}

TEST_CASE("matches the pairwise oracle exactly on tied data") {
  Rng rng(1234);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    // coarse grid so ties actually happen
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(8)) / 8.0;
      labels[i] = static_cast<int>(rng.below(2));
    }
    bool pos = false, neg = false;
    for (int y : labels) (y == 1 ? pos : neg) = true;
    if (!pos || !neg) continue;
    CHECK(roc_auc(scores, labels) == oracles::pairwise_auc(scores, labels));
  }
}

TEST_CASE("invariant under a strictly increasing transform") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng.below(30);
    std::vector<double> scores(n), mapped(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(16)) / 16.0;
      mapped[i] = 2.0 * scores[i] + 3.0;  // exact on this grid
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[0] = 0;
    labels[1] = 1;
    CHECK(roc_auc(scores, labels) == roc_auc(mapped, labels));
  }
}

TEST_CASE("complement identity for tie-free scores") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng.below(30);
    std::vector<double> scores(n), negated(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(i) / 16.0;  // distinct
      labels[i] = static_cast<int>(rng.below(2));
    }
    rng.shuffle(scores);
    labels[0] = 0;
    labels[1] = 1;
    for (std::size_t i = 0; i < n; ++i) negated[i] = -scores[i];
    CHECK(roc_auc(scores, labels) + roc_auc(negated, labels) == 1.0);
  }
}

TEST_CASE("cross entropy closed forms") {
  const std::vector<double> half{0.5, 0.5, 0.5};
  const std::vector<int> labels{1, 0, 1};
  CHECK(cross_entropy(half, labels) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const std::vector<double> p{0.8};
  const std::vector<int> one{1};
  CHECK(cross_entropy(p, one) == doctest::Approx(0.223144).epsilon(1e-5));

  // confident mistake hits the clamp
  const std::vector<double> sure{1.0};
  const std::vector<int> zero{0};
  CHECK(cross_entropy(sure, zero) ==
        doctest::Approx(-std::log(1e-7)).epsilon(1e-12));
}

TEST_CASE("perfect AUC does not bound CE") {
  // a perfect ranker that is badly calibrated
  const std::vector<double> probs{0.01, 0.02};
  const std::vector<int> labels{0, 1};
  CHECK(roc_auc(probs, labels) == 1.0);
  CHECK(cross_entropy(probs, labels) > std::log(2.0));
}

TEST_CASE("roc curve shapes") {
  SUBCASE("perfect separation") {
    const std::vector<double> scores{0.9, 0.8, 0.2, 0.1};
    const std::vector<int> labels{1, 1, 0, 0};
    const auto curve = roc_curve(scores, labels);
    REQUIRE(curve.size() >= 3);
    CHECK(curve.front().fpr == 0.0);
    CHECK(curve.front().tpr == 0.0);
    CHECK(curve[2].tpr == 1.0);
    CHECK(curve[2].fpr == 0.0);
    CHECK(curve.back().fpr == 1.0);
    CHECK(curve.back().tpr == 1.0);
  }
  SUBCASE("all tied") {
    const std::vector<double> scores{0.4, 0.4, 0.4};
    const std::vector<int> labels{1, 0, 1};
    const auto curve = roc_curve(scores, labels);
    REQUIRE(curve.size() == 2);
    CHECK(trapezoid_area(curve) == 0.5);
  }
}

TEST_CASE("trapezoid area equals roc_auc") {
  Rng rng(31337);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.below(40);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(10)) / 10.0;
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[0] = 0;
    labels[1] = 1;
    const auto curve = roc_curve(scores, labels);
    CHECK(trapezoid_area(curve) ==
          doctest::Approx(roc_auc(scores, labels)).epsilon(1e-12));
    // staircase is monotone
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].fpr >= curve[i - 1].fpr);
      CHECK(curve[i].tpr >= curve[i - 1].tpr);
    }
  }
}

TEST_CASE("evaluate fills the report") {
  const std::vector<double> probs{0.9, 0.2, 0.7, 0.1};
  const std::vector<int> labels{1, 0, 1, 0};
  const EvalReport report = evaluate(probs, labels);
  CHECK(report.auc == 1.0);
  CHECK(report.n_pos == 2);
  CHECK(report.n_neg == 2);
  CHECK(report.clamp == kDefaultCeClamp);
  CHECK(report.ce > 0.0);
}

TEST_SUITE_END();
