#pragma once

#include <string>
#include <vector>

#include "samtl/common.hpp"

namespace samtl {

// Rank-based ROC-AUC equivalent to the Mann-Whitney U statistic;
// tied scores contribute 1/2.
double roc_auc(const std::vector<double>& scores,
               const std::vector<int>& labels);

struct AucResult {
  std::vector<double> per_task_auc;  // NaN for skipped tasks
  double mean_auc = 0.0;
  std::vector<int> skipped_tasks;  // tasks lacking both classes
};

// scores[t][i], labels[t][i] in {0,1}, mask[t][i] marks labeled
// instances. Tasks without both classes among labeled instances are
// skipped and excluded from the mean.
AucResult evaluate_auc(const std::vector<std::vector<double>>& scores,
                       const std::vector<std::vector<int>>& labels,
                       const std::vector<std::vector<uint8_t>>& mask);

}  // namespace samtl
