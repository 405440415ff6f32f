#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "samtl/checkpoint.hpp"
#include "samtl/loss.hpp"
#include "samtl/train.hpp"

using namespace samtl;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(int tasks = 1) {
  ModelConfig cfg;
  cfg.embed_size = 16;
  cfg.hidden_size = 16;
  cfg.ffn_size = 32;
  cfg.conv_filter_width = 3;
  cfg.num_sa_layers = 1;
  cfg.max_seq_len = 24;
  cfg.num_tasks = tasks;
  cfg.dropout_rate = 0.0;
  return cfg;
}

// synthetic single-task set: positives carry nitrogen, negatives are
// plain carbon chains -- linearly separable from token content
DatasetTable synthetic_table(int n) {
  DatasetTable t;
  t.task_names = {"y"};
  Rng rng(17);
  for (int i = 0; i < n; ++i) {
    MoleculeRecord r;
    int len = 3 + static_cast<int>(rng.uniform_index(8));
    bool positive = i % 2 == 0;
    r.smiles = "C";
    for (int j = 0; j < len; ++j) r.smiles += positive && j == 1 ? "N" : "C";
    r.labels = {static_cast<int8_t>(positive ? 1 : 0)};
    r.source_row = i;
    t.records.push_back(r);
  }
  t.recount();
  return t;
}

struct Pieces {
  Vocabulary vocab;
  EncodedDataset train, valid, test;
  std::vector<TaskHeadSpec> specs;
};

Pieces prepare(const DatasetTable& table, const ModelConfig& cfg) {
  Pieces p;
  std::vector<std::string> corpus;
  for (const auto& r : table.records) corpus.push_back(r.smiles);
  p.vocab = build_vocabulary(corpus);
  SplitSpec spec;
  spec.seed = 1;
  SplitResult parts = split(table, spec);
  p.train = EncodedDataset::from_table(parts.train, p.vocab, cfg);
  p.valid = EncodedDataset::from_table(parts.valid, p.vocab, cfg);
  p.test = EncodedDataset::from_table(parts.test, p.vocab, cfg);
  for (size_t t = 0; t < table.num_tasks(); ++t)
    p.specs.push_back({static_cast<int>(t), parts.train.balancing_bias(t)});
  return p;
}

}  // namespace

TEST_CASE("per-item loss at logit zero is ln 2") {
  Tape<float> tape(false);
  Tensor<float> z = Tensor<float>::from({1}, {0.0f});
  Tensor<float> loss = weighted_bce_sum(tape, z, {1}, {1}, 1.0f);
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  // positive items scale by the task weight
  Tensor<float> loss_w = weighted_bce_sum(tape, z, {1}, {1}, 13.4f);
  CHECK(loss_w.item() == doctest::Approx(13.4 * std::log(2.0)).epsilon(1e-5));
  // negative items do not
  Tensor<float> loss_n = weighted_bce_sum(tape, z, {0}, {1}, 13.4f);
  CHECK(loss_n.item() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("masked-out labels contribute zero loss and zero gradient") {
  Tape<float> tape;
  Tensor<float> z = Tensor<float>::from({3}, {0.4f, -1.2f, 2.0f}, true);
  Tensor<float> loss = weighted_bce_sum(tape, z, {1, 0, 1}, {1, 0, 1}, 2.0f);
  Tape<float> t2(false);
  Tensor<float> masked_only =
      weighted_bce_sum(t2, z, {1, 0, 1}, {1, 0, 0}, 2.0f);
  Tensor<float> third = weighted_bce_sum(t2, z, {1, 0, 1}, {0, 0, 1}, 2.0f);
  CHECK(loss.item() ==
        doctest::Approx(masked_only.item() + third.item()).epsilon(1e-6));
  tape.backward(loss);
  CHECK(z.grad()[1] == 0.0f);  // exactly zero, not just small
  CHECK(z.grad()[0] != 0.0f);
}

TEST_CASE("whole-task mask leaves head gradients exactly zero") {
  ModelConfig cfg = tiny_config(2);
  DatasetTable table = synthetic_table(12);
  table.task_names = {"a", "b"};
  for (auto& r : table.records) r.labels = {r.labels[0], r.labels[0]};
  table.recount();
  Pieces p = prepare(table, cfg);

  auto params = init_params<float>(cfg, p.vocab.size(), p.specs, 3);
  params.set_requires_grad(true);
  std::vector<const TokenSequence*> seqs;
  for (const auto& s : p.train.sequences) seqs.push_back(&s);
  TokenBatch batch = make_batch(seqs, cfg.max_seq_len);
  Tape<float> tape;
  auto logits = forward(tape, params, cfg, batch, false, nullptr);
  std::vector<std::vector<uint8_t>> labels = {p.train.labels[0],
                                              p.train.labels[1]};
  std::vector<std::vector<uint8_t>> mask = {
      p.train.mask[0],
      std::vector<uint8_t>(p.train.size(), 0)};  // task b fully masked
  Tensor<float> loss =
      weighted_multitask_loss(tape, logits, labels, mask, {1.0f, 1.0f});
  tape.backward(loss);
  for (float g : params.heads[1].fc1_w.grad()) CHECK(g == 0.0f);
  for (float g : params.heads[1].fc2_w.grad()) CHECK(g == 0.0f);
  bool any = false;
  for (float g : params.heads[0].fc1_w.grad()) any = any || g != 0.0f;
  CHECK(any);

  std::vector<std::vector<uint8_t>> all_masked = {
      std::vector<uint8_t>(p.train.size(), 0),
      std::vector<uint8_t>(p.train.size(), 0)};
  CHECK_THROWS_WITH_AS(
      weighted_multitask_loss(tape, logits, labels, all_masked, {1.0f, 1.0f}),
      doctest::Contains("AllMasked"), DataError);
}

TEST_CASE("fit overfits a tiny separable set and is deterministic") {
  ModelConfig cfg = tiny_config(1);
  DatasetTable table = synthetic_table(40);
  Pieces p = prepare(table, cfg);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.learning_rate = 2e-3;
  tc.max_epochs = 40;
  tc.patience = 40;
  RunResult a = fit(cfg, p.vocab, p.train, p.valid, p.test, p.specs, tc, 5);
  AucResult train_auc = evaluate_model(a.best_params, cfg, p.train);
  CHECK(train_auc.mean_auc > 0.95);

  RunResult b = fit(cfg, p.vocab, p.train, p.valid, p.test, p.specs, tc, 5);
  CHECK(a.best_epoch == b.best_epoch);
  CHECK(a.best_valid_auc == b.best_valid_auc);
  CHECK(a.test.mean_auc == b.test.mean_auc);
  REQUIRE(a.train_loss_per_epoch.size() == b.train_loss_per_epoch.size());
  for (size_t i = 0; i < a.train_loss_per_epoch.size(); ++i)
    CHECK(a.train_loss_per_epoch[i] == b.train_loss_per_epoch[i]);

  // loss decreases between the first and last stretch of training
  double head = 0, tail = 0;
  size_t n = a.train_loss_per_epoch.size();
  REQUIRE(n >= 10);
  for (size_t i = 0; i < 5; ++i) {
    head += a.train_loss_per_epoch[i];
    tail += a.train_loss_per_epoch[n - 1 - i];
  }
  CHECK(tail < head);
}

TEST_CASE("diverged loss is reported as a numeric error") {
  ModelConfig cfg = tiny_config(1);
  DatasetTable table = synthetic_table(24);
  Pieces p = prepare(table, cfg);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.learning_rate = 1e18;  // drives activations to overflow
  tc.grad_clip_norm = 0;    // no clipping
  tc.max_epochs = 50;
  CHECK_THROWS_WITH_AS(
      fit(cfg, p.vocab, p.train, p.valid, p.test, p.specs, tc, 2),
      doctest::Contains("DivergedLoss"), NumericError);
}

TEST_CASE("checkpoints round-trip bitwise and preserve the test AUC") {
  ModelConfig cfg = tiny_config(1);
  DatasetTable table = synthetic_table(30);
  Pieces p = prepare(table, cfg);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 6;
  RunResult r = fit(cfg, p.vocab, p.train, p.valid, p.test, p.specs, tc, 4);

  fs::path path = fs::temp_directory_path() / "samtl_ckpt_test.samtl";
  save_checkpoint(path.string(), r.best_params, cfg, {{"seed", 4}});
  LoadedCheckpoint loaded = load_checkpoint(path.string());
  CHECK(loaded.header.at("meta").at("seed") == 4);

  std::vector<std::vector<float>> va, vb;
  r.best_params.visit(
      [&](const std::string&, const Tensor<float>& t) { va.push_back(t.value()); });
  loaded.params.visit(
      [&](const std::string&, const Tensor<float>& t) { vb.push_back(t.value()); });
  REQUIRE(va.size() == vb.size());
  for (size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);

  AucResult before = evaluate_model(r.best_params, cfg, p.test);
  AucResult after = evaluate_model(loaded.params, loaded.config, p.test);
  CHECK(std::abs(before.mean_auc - after.mean_auc) < 1e-7);
  fs::remove(path);
}

TEST_CASE("ensemble of identical members is the identity") {
  ModelConfig cfg = tiny_config(1);
  DatasetTable table = synthetic_table(30);
  Pieces p = prepare(table, cfg);
  auto params = init_params<float>(cfg, p.vocab.size(), p.specs, 12);

  auto solo = predict_scores(params, cfg, p.test);
  std::vector<const ModelParams<float>*> members = {&params, &params, &params,
                                                    &params, &params};
  std::vector<ModelConfig> configs(5, cfg);
  auto blended = ensemble_predict(members, configs, p.test);
  REQUIRE(blended.size() == solo.size());
  for (size_t t = 0; t < solo.size(); ++t)
    for (size_t i = 0; i < solo[t].size(); ++i) {
      CHECK(std::abs(blended[t][i] - solo[t][i]) < 1e-7);
      CHECK(blended[t][i] >= 0.0);
      CHECK(blended[t][i] <= 1.0);
    }

  ModelConfig other = cfg;
  other.hidden_size = 32;
  other.embed_size = 32;
  auto params2 = init_params<float>(other, p.vocab.size(), p.specs, 12);
  std::vector<const ModelParams<float>*> bad = {&params, &params2};
  std::vector<ModelConfig> bad_cfgs = {cfg, other};
  CHECK_THROWS_WITH_AS(ensemble_predict(bad, bad_cfgs, p.test),
                       doctest::Contains("ConfigMismatch"), DataError);
}

TEST_CASE("adam updates carry momentum and respect clipping") {
  ModelConfig cfg = tiny_config(1);
  auto params = init_params<float>(cfg, 8, {{0, 1.0}}, 1);
  params.set_requires_grad(true);
  // artificial gradient of ones on every parameter
  params.visit([](const std::string&, Tensor<float>& t) {
    auto& g = t.grad();
    std::fill(g.begin(), g.end(), 1.0f);
  });
  std::vector<float> before = params.embedding.value();
  AdamState adam;
  adam.step(params, 1e-2, 0);
  // first unclipped Adam step moves every weight by about -lr
  for (size_t i = 0; i < 8; ++i)
    CHECK(params.embedding.value()[i] ==
          doctest::Approx(before[i] - 1e-2).epsilon(1e-3));
  CHECK(adam.step_count() == 1);
}
