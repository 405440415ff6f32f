#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "samtl/data.hpp"
#include "samtl/metrics.hpp"
#include "samtl/model.hpp"

namespace samtl {

struct TrainConfig {
  int batch_size = 60;
  double learning_rate = 5e-5;
  int max_epochs = 300;
  int patience = 10;  // evaluations without improvement
  int eval_every = 1;
  double grad_clip_norm = 5.0;
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  int jobs = 0;  // 0: min(seeds, hardware threads)
};

// Adam; beta1 0.9, beta2 0.999, eps 1e-8. Buffers are keyed by the
// visit order of the parameter set.
class AdamState {
 public:
  AdamState(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ModelParams<float>& params, double lr, double clip_norm);
  long step_count() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// A dataset tokenized once; shared read-only across seeds.
struct EncodedDataset {
  std::vector<TokenSequence> sequences;
  std::vector<std::vector<uint8_t>> labels;  // [task][record], 0 when missing
  std::vector<std::vector<uint8_t>> mask;    // [task][record]
  std::vector<std::string> task_names;

  size_t size() const { return sequences.size(); }
  static EncodedDataset from_table(const DatasetTable& table,
                                   const Vocabulary& vocab,
                                   const ModelConfig& cfg);
};

struct MetricsRow {
  int epoch;
  std::string task;
  std::string split;
  double auc;   // NaN when not applicable
  double loss;  // NaN when not applicable
};

struct RunResult {
  uint64_t seed = 0;
  std::vector<double> train_loss_per_epoch;
  std::vector<MetricsRow> metrics;
  int best_epoch = -1;
  double best_valid_auc = 0.0;
  AucResult test;
  double wall_seconds = 0.0;
  ModelParams<float> best_params;
  long steps = 0;
};

// Per-task sigmoid scores for a frozen model.
std::vector<std::vector<double>> predict_scores(const ModelParams<float>& params,
                                                const ModelConfig& cfg,
                                                const EncodedDataset& data,
                                                int batch_size = 60);

AucResult evaluate_model(const ModelParams<float>& params,
                         const ModelConfig& cfg, const EncodedDataset& data,
                         int batch_size = 60);

// Shuffled seeded mini-batches, Adam step per batch, periodic
// validation AUC with best-checkpoint tracking and early stopping;
// test AUC computed once on the best checkpoint.
RunResult fit(const ModelConfig& cfg, const Vocabulary& vocab,
              const EncodedDataset& train, const EncodedDataset& valid,
              const EncodedDataset& test,
              const std::vector<TaskHeadSpec>& head_specs,
              const TrainConfig& tc, uint64_t seed,
              std::ostream* log = nullptr);

// Mean of the member sigmoid outputs. All members must share the
// model configuration.
std::vector<std::vector<double>> ensemble_predict(
    const std::vector<const ModelParams<float>*>& members,
    const std::vector<ModelConfig>& configs, const EncodedDataset& data,
    int batch_size = 60);

AucResult ensemble_evaluate(
    const std::vector<const ModelParams<float>*>& members,
    const std::vector<ModelConfig>& configs, const EncodedDataset& data,
    int batch_size = 60);

}  // namespace samtl
