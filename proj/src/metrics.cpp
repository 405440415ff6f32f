#include "samtl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace samtl {

double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels) {
  size_t n = scores.size();
  if (n != labels.size() || n < 2)
    throw DataError("roc_auc: need >= 2 paired scores and labels");
  long n_pos = 0;
  for (int y : labels) n_pos += y > 0 ? 1 : 0;
  long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("DegenerateLabels: a positive and a negative are required");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // average ranks across tie groups (1-based)
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k] > 0) rank_sum_pos += rank[k];
  double u = rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

AucResult evaluate_auc(const std::vector<std::vector<double>>& scores,
                       const std::vector<std::vector<int>>& labels,
                       const std::vector<std::vector<uint8_t>>& mask) {
  if (scores.size() != labels.size() || scores.size() != mask.size())
    throw DataError("evaluate_auc: task count mismatch");
  AucResult out;
  double total = 0.0;
  int eligible = 0;
  for (size_t t = 0; t < scores.size(); ++t) {
    std::vector<double> s;
    std::vector<int> y;
    for (size_t i = 0; i < scores[t].size(); ++i) {
      if (!mask[t][i]) continue;
      s.push_back(scores[t][i]);
      y.push_back(labels[t][i]);
    }
    long pos = 0;
    for (int v : y) pos += v > 0 ? 1 : 0;
    if (s.size() < 2 || pos == 0 || pos == static_cast<long>(y.size())) {
      out.per_task_auc.push_back(std::numeric_limits<double>::quiet_NaN());
      out.skipped_tasks.push_back(static_cast<int>(t));
      continue;
    }
    double auc = roc_auc(s, y);
    out.per_task_auc.push_back(auc);
    total += auc;
    ++eligible;
  }
  out.mean_auc = eligible > 0 ? total / eligible
                              : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace samtl
