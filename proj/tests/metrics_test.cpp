#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "samtl/common.hpp"
#include "samtl/metrics.hpp"

using namespace samtl;

namespace {

// O(n^2) oracle: mean over all positive/negative pairs, ties 1/2
double auc_pairwise(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  double wins = 0;
  long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] <= 0) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] > 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("perfect ranking and all-ties anchors") {
  CHECK(roc_auc({0.9, 0.1}, {1, 0}) == doctest::Approx(1.0));
  CHECK(roc_auc({0.1, 0.9}, {1, 0}) == doctest::Approx(0.0));
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == doctest::Approx(0.5));
}

TEST_CASE("degenerate label vectors are rejected") {
  CHECK_THROWS_WITH_AS(roc_auc({0.1, 0.2}, {1, 1}),
                       doctest::Contains("DegenerateLabels"), DataError);
  CHECK_THROWS_WITH_AS(roc_auc({0.1, 0.2}, {0, 0}),
                       doctest::Contains("DegenerateLabels"), DataError);
}

TEST_CASE("matches the pairwise oracle exactly on random instances") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    size_t n = 2 + rng.uniform_index(199);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool has_pos = false, has_neg = false;
    for (size_t i = 0; i < n; ++i) {
      // coarse grid so ties actually occur
      scores[i] = std::floor(rng.uniform(0, 10)) / 10.0;
      labels[i] = rng.bernoulli(0.4) ? 1 : 0;
      has_pos = has_pos || labels[i] == 1;
      has_neg = has_neg || labels[i] == 0;
    }
    if (!has_pos) labels[0] = 1;
    if (!has_neg) labels[n - 1] = 0;
    double fast = roc_auc(scores, labels);
    double slow = auc_pairwise(scores, labels);
    CHECK(std::abs(fast - slow) < 1e-12);
  }
}

TEST_CASE("complement and monotone-transform invariances") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    size_t n = 5 + rng.uniform_index(60);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (size_t i = 0; i < n; ++i) {
      scores[i] = std::floor(rng.uniform(-5, 5)) / 2.0;
      labels[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    std::vector<double> negated(n), warped(n);
    for (size_t i = 0; i < n; ++i) {
      negated[i] = -scores[i];
      warped[i] = std::exp(0.7 * scores[i]) + 3;  // strictly increasing
    }
    double base = roc_auc(scores, labels);
    CHECK(base + roc_auc(negated, labels) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(roc_auc(warped, labels) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("evaluate_auc skips single-class tasks and masks rows") {
  std::vector<std::vector<double>> scores = {
      {0.9, 0.8, 0.1, 0.3}, {0.2, 0.4, 0.6, 0.5}, {0.9, 0.2, 0.8, 0.4}};
  std::vector<std::vector<int>> labels = {
      {1, 0, 0, 1}, {1, 1, 1, 1}, {1, 0, 1, 0}};
  std::vector<std::vector<uint8_t>> mask = {
      {1, 1, 1, 0}, {1, 1, 1, 1}, {1, 1, 1, 1}};
  AucResult res = evaluate_auc(scores, labels, mask);
  REQUIRE(res.per_task_auc.size() == 3);
  // task 0: labeled items (0.9,1) (0.8,0) (0.1,0) -> perfect
  CHECK(res.per_task_auc[0] == doctest::Approx(1.0));
  CHECK(std::isnan(res.per_task_auc[1]));
  REQUIRE(res.skipped_tasks.size() == 1);
  CHECK(res.skipped_tasks[0] == 1);
  CHECK(res.per_task_auc[2] == doctest::Approx(1.0));
  CHECK(res.mean_auc == doctest::Approx(1.0));

  AucResult again = evaluate_auc(scores, labels, mask);
  CHECK(again.mean_auc == res.mean_auc);  // deterministic
}
