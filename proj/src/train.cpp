#include "samtl/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "samtl/loss.hpp"

namespace samtl {

void AdamState::step(ModelParams<float>& params, double lr, double clip_norm) {
  std::vector<std::vector<float>*> grads;
  std::vector<std::vector<float>*> values;
  params.visit([&](const std::string&, Tensor<float>& t) {
    values.push_back(&t.value());
    grads.push_back(&t.grad());
  });
  if (m_.empty()) {
    for (auto* g : grads) {
      m_.emplace_back(g->size(), 0.0f);
      v_.emplace_back(g->size(), 0.0f);
    }
  }
  if (m_.size() != grads.size())
    throw NumericError("AdamState: parameter set changed between steps");

  if (clip_norm > 0) {
    double sq = 0.0;
    for (auto* g : grads)
      for (float x : *g) sq += static_cast<double>(x) * x;
    double norm = std::sqrt(sq);
    if (norm > clip_norm) {
      float scale = static_cast<float>(clip_norm / norm);
      for (auto* g : grads)
        for (float& x : *g) x *= scale;
    }
  }

  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t p = 0; p < grads.size(); ++p) {
    auto& g = *grads[p];
    auto& val = *values[p];
    auto& m = m_[p];
    auto& v = v_[p];
    for (size_t i = 0; i < g.size(); ++i) {
      m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
      v[i] = static_cast<float>(beta2_ * v[i] +
                                (1.0 - beta2_) * double(g[i]) * g[i]);
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      val[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

EncodedDataset EncodedDataset::from_table(const DatasetTable& table,
                                          const Vocabulary& vocab,
                                          const ModelConfig& cfg) {
  EncodedDataset out;
  out.task_names = table.task_names;
  TokenizerOptions opt;
  opt.two_char_atoms = cfg.two_char_embedding;
  size_t tasks = table.task_names.size();
  out.labels.assign(tasks, {});
  out.mask.assign(tasks, {});
  for (const auto& rec : table.records) {
    out.sequences.push_back(
        tokenize(rec.smiles, vocab, cfg.max_seq_len, opt));
    for (size_t t = 0; t < tasks; ++t) {
      out.labels[t].push_back(rec.labels[t] == 1 ? 1 : 0);
      out.mask[t].push_back(rec.labels[t] >= 0 ? 1 : 0);
    }
  }
  return out;
}

namespace {

struct BatchView {
  TokenBatch tokens;
  std::vector<std::vector<uint8_t>> labels;  // [task][item]
  std::vector<std::vector<uint8_t>> mask;
};

BatchView gather_batch(const EncodedDataset& data,
                       const std::vector<int>& indices, int cap_len) {
  BatchView view;
  std::vector<const TokenSequence*> seqs;
  seqs.reserve(indices.size());
  for (int i : indices) seqs.push_back(&data.sequences[static_cast<size_t>(i)]);
  view.tokens = make_batch(seqs, cap_len);
  size_t tasks = data.labels.size();
  view.labels.assign(tasks, {});
  view.mask.assign(tasks, {});
  for (size_t t = 0; t < tasks; ++t) {
    for (int i : indices) {
      view.labels[t].push_back(data.labels[t][static_cast<size_t>(i)]);
      view.mask[t].push_back(data.mask[t][static_cast<size_t>(i)]);
    }
  }
  return view;
}

}  // namespace

std::vector<std::vector<double>> predict_scores(const ModelParams<float>& params,
                                                const ModelConfig& cfg,
                                                const EncodedDataset& data,
                                                int batch_size) {
  size_t tasks = data.labels.size();
  std::vector<std::vector<double>> scores(tasks);
  int n = static_cast<int>(data.size());
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i)
      idx.push_back(i);
    BatchView view = gather_batch(data, idx, cfg.max_seq_len);
    Tape<float> tape(false);
    auto logits = forward(tape, params, cfg, view.tokens, false, nullptr);
    for (size_t t = 0; t < tasks; ++t) {
      auto probs = sigmoid(tape, logits[t]);
      for (int i = 0; i < probs.size(); ++i)
        scores[t].push_back(static_cast<double>(probs.data()[i]));
    }
  }
  return scores;
}

AucResult evaluate_model(const ModelParams<float>& params,
                         const ModelConfig& cfg, const EncodedDataset& data,
                         int batch_size) {
  auto scores = predict_scores(params, cfg, data, batch_size);
  std::vector<std::vector<int>> labels(data.labels.size());
  for (size_t t = 0; t < data.labels.size(); ++t)
    for (uint8_t v : data.labels[t]) labels[t].push_back(v);
  return evaluate_auc(scores, labels, data.mask);
}

RunResult fit(const ModelConfig& cfg, const Vocabulary& vocab,
              const EncodedDataset& train, const EncodedDataset& valid,
              const EncodedDataset& test,
              const std::vector<TaskHeadSpec>& head_specs,
              const TrainConfig& tc, uint64_t seed, std::ostream* log) {
  auto t0 = std::chrono::steady_clock::now();
  if (train.size() == 0 || valid.size() == 0 || test.size() == 0)
    throw DataError("fit: train/valid/test must all be non-empty");

  RunResult result;
  result.seed = seed;
  ModelParams<float> params =
      init_params<float>(cfg, vocab.size(), head_specs, seed);
  params.set_requires_grad(true);
  if (log)
    *log << "[seed " << seed << "] params=" << params.param_count()
         << " train=" << train.size() << " valid=" << valid.size()
         << " test=" << test.size() << "\n";

  std::vector<float> pos_weights;
  for (const auto& spec : head_specs)
    pos_weights.push_back(static_cast<float>(spec.balancing_bias));

  AdamState adam;
  Rng rng(seed);
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  int evals_since_best = 0;
  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    long batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(tc.batch_size)) {
      std::vector<int> idx(
          order.begin() + static_cast<long>(start),
          order.begin() +
              static_cast<long>(std::min(order.size(),
                                         start + static_cast<size_t>(
                                                     tc.batch_size))));
      BatchView view = gather_batch(train, idx, cfg.max_seq_len);
      bool any_label = false;
      for (const auto& m : view.mask)
        for (uint8_t v : m) any_label = any_label || v;
      if (!any_label) continue;

      Tape<float> tape;
      auto logits = forward(tape, params, cfg, view.tokens, true, &rng);
      Tensor<float> loss = weighted_multitask_loss(tape, logits, view.labels,
                                                   view.mask, pos_weights);
      float loss_v = loss.item();
      if (!std::isfinite(loss_v))
        throw NumericError(
            "DivergedLoss: non-finite loss at epoch " + std::to_string(epoch) +
            " step " + std::to_string(result.steps) + " (seed " +
            std::to_string(seed) + ")");
      tape.backward(loss);
      adam.step(params, tc.learning_rate, tc.grad_clip_norm);
      params.zero_grad();
      epoch_loss += loss_v;
      ++batches;
      ++result.steps;
    }
    double mean_loss = batches ? epoch_loss / static_cast<double>(batches)
                               : std::numeric_limits<double>::quiet_NaN();
    result.train_loss_per_epoch.push_back(mean_loss);
    result.metrics.push_back({epoch, "-", "train",
                              std::numeric_limits<double>::quiet_NaN(),
                              mean_loss});

    if ((epoch + 1) % tc.eval_every != 0) continue;
    AucResult val = evaluate_model(params, cfg, valid, tc.batch_size);
    for (size_t t = 0; t < val.per_task_auc.size(); ++t)
      result.metrics.push_back({epoch, train.task_names[t], "valid",
                                val.per_task_auc[t],
                                std::numeric_limits<double>::quiet_NaN()});
    result.metrics.push_back({epoch, "mean", "valid", val.mean_auc,
                              std::numeric_limits<double>::quiet_NaN()});
    if (log)
      *log << "[seed " << seed << "] epoch " << epoch << " loss " << mean_loss
           << " valid_auc " << val.mean_auc << "\n";
    if (std::isfinite(val.mean_auc) &&
        (result.best_epoch < 0 || val.mean_auc > result.best_valid_auc)) {
      result.best_valid_auc = val.mean_auc;
      result.best_epoch = epoch;
      result.best_params = params.clone();
      evals_since_best = 0;
    } else {
      ++evals_since_best;
      if (evals_since_best >= tc.patience) break;
    }
  }
  if (result.best_epoch < 0) {
    result.best_params = params.clone();
    result.best_epoch = tc.max_epochs - 1;
  }

  result.test = evaluate_model(result.best_params, cfg, test, tc.batch_size);
  for (size_t t = 0; t < result.test.per_task_auc.size(); ++t)
    result.metrics.push_back({result.best_epoch, train.task_names[t], "test",
                              result.test.per_task_auc[t],
                              std::numeric_limits<double>::quiet_NaN()});
  result.metrics.push_back({result.best_epoch, "mean", "test",
                            result.test.mean_auc,
                            std::numeric_limits<double>::quiet_NaN()});
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (log)
    *log << "[seed " << seed << "] best_epoch " << result.best_epoch
         << " valid_auc " << result.best_valid_auc << " test_auc "
         << result.test.mean_auc << " (" << result.wall_seconds << "s)\n";
  return result;
}

std::vector<std::vector<double>> ensemble_predict(
    const std::vector<const ModelParams<float>*>& members,
    const std::vector<ModelConfig>& configs, const EncodedDataset& data,
    int batch_size) {
  if (members.empty()) throw DataError("ensemble_predict: no members");
  if (configs.size() != members.size())
    throw DataError("ensemble_predict: config count mismatch");
  for (size_t k = 1; k < members.size(); ++k) {
    const ModelConfig &a = configs[0], &b = configs[k];
    if (a.embed_size != b.embed_size || a.hidden_size != b.hidden_size ||
        a.ffn_size != b.ffn_size || a.num_sa_layers != b.num_sa_layers ||
        a.num_heads != b.num_heads || a.max_seq_len != b.max_seq_len ||
        a.num_tasks != b.num_tasks || a.use_cnn != b.use_cnn ||
        a.use_self_attention != b.use_self_attention ||
        a.use_rnn_instead_of_cnn != b.use_rnn_instead_of_cnn ||
        a.head_kind != b.head_kind ||
        a.two_char_embedding != b.two_char_embedding)
      throw DataError("ConfigMismatch: ensemble members differ in architecture");
  }
  std::vector<std::vector<double>> acc;
  for (size_t k = 0; k < members.size(); ++k) {
    auto scores = predict_scores(*members[k], configs[k], data, batch_size);
    if (k == 0) {
      acc = std::move(scores);
    } else {
      for (size_t t = 0; t < acc.size(); ++t)
        for (size_t i = 0; i < acc[t].size(); ++i) acc[t][i] += scores[t][i];
    }
  }
  double inv = 1.0 / static_cast<double>(members.size());
  for (auto& task : acc)
    for (auto& v : task) v *= inv;
  return acc;
}

AucResult ensemble_evaluate(
    const std::vector<const ModelParams<float>*>& members,
    const std::vector<ModelConfig>& configs, const EncodedDataset& data,
    int batch_size) {
  auto scores = ensemble_predict(members, configs, data, batch_size);
  std::vector<std::vector<int>> labels(data.labels.size());
  for (size_t t = 0; t < data.labels.size(); ++t)
    for (uint8_t v : data.labels[t]) labels[t].push_back(v);
  return evaluate_auc(scores, labels, data.mask);
}

}  // namespace samtl
