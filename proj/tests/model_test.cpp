#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "samtl/model.hpp"

using namespace samtl;

namespace {

// small config so shape logic is exercised without heavy compute
ModelConfig tiny_config(int tasks = 2) {
  ModelConfig cfg;
  cfg.embed_size = 8;
  cfg.hidden_size = 8;
  cfg.ffn_size = 16;
  cfg.conv_filter_width = 3;
  cfg.num_sa_layers = 2;
  cfg.max_seq_len = 10;
  cfg.num_tasks = tasks;
  cfg.dropout_rate = 0.0;
  return cfg;
}

std::vector<TaskHeadSpec> specs_for(int tasks) {
  std::vector<TaskHeadSpec> specs;
  for (int t = 0; t < tasks; ++t) specs.push_back({t, 1.0 + t});
  return specs;
}

TokenBatch batch_of(const std::vector<std::vector<int>>& id_rows, int L) {
  TokenBatch b;
  b.batch_size = static_cast<int>(id_rows.size());
  b.seq_len = L;
  b.ids.assign(static_cast<size_t>(b.batch_size) * L, 0);
  b.valid.assign(static_cast<size_t>(b.batch_size) * L, 0);
  for (size_t r = 0; r < id_rows.size(); ++r)
    for (size_t j = 0; j < id_rows[r].size(); ++j) {
      b.ids[r * static_cast<size_t>(L) + j] = id_rows[r][j];
      b.valid[r * static_cast<size_t>(L) + j] = 1;
    }
  return b;
}

}  // namespace

TEST_CASE("parameter count is a pure function of config and vocab") {
  ModelConfig cfg;  // table defaults
  cfg.num_tasks = 12;
  auto p = init_params<float>(cfg, 40, specs_for(12), 1);
  auto q = init_params<float>(cfg, 40, specs_for(12), 99);
  CHECK(p.param_count() == q.param_count());

  // independent arithmetic for the default architecture
  long embedding = 40L * 128;
  long conv = 7L * 128 * 128 + 128;
  long per_layer = 4L * 128 * 128 + 128L * 1024 + 1024L * 128 + 4 * 128;
  long per_head = 128 + 1 + 200 + 1;
  CHECK(p.param_count() == embedding + conv + 5 * per_layer + 12 * per_head);
}

TEST_CASE("same seed gives bitwise-identical parameters") {
  ModelConfig cfg = tiny_config();
  auto a = init_params<float>(cfg, 12, specs_for(2), 7);
  auto b = init_params<float>(cfg, 12, specs_for(2), 7);
  std::vector<std::vector<float>> va, vb;
  a.visit([&](const std::string&, const Tensor<float>& t) { va.push_back(t.value()); });
  b.visit([&](const std::string&, const Tensor<float>& t) { vb.push_back(t.value()); });
  REQUIRE(va.size() == vb.size());
  for (size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);

  auto c = init_params<float>(cfg, 12, specs_for(2), 8);
  CHECK_FALSE(c.embedding.value() == a.embedding.value());
}

TEST_CASE("balancing bias lands in the final per-task scalar") {
  ModelConfig cfg = tiny_config(2);
  std::vector<TaskHeadSpec> specs = {{0, 13.4}, {1, 1.0}};
  auto p = init_params<float>(cfg, 12, specs, 3);
  CHECK(p.heads[0].fc2_b.data()[0] ==
        doctest::Approx(-std::log(13.4)).epsilon(1e-6));
  CHECK(p.heads[1].fc2_b.data()[0] == doctest::Approx(0.0));

  cfg.head_kind = HeadKind::max_pool;
  auto q = init_params<float>(cfg, 12, specs, 3);
  CHECK_FALSE(q.heads[0].fc2_w.defined());
  CHECK(q.heads[0].fc1_b.data()[0] ==
        doctest::Approx(-std::log(13.4)).epsilon(1e-6));

  CHECK_THROWS_WITH_AS(init_params<float>(cfg, 12, specs_for(3), 3),
                       doctest::Contains("BadHeadCount"), DataError);
}

TEST_CASE("forward yields one logit vector per task") {
  ModelConfig cfg = tiny_config(12);
  auto p = init_params<float>(cfg, 12, specs_for(12), 5);
  TokenBatch batch = batch_of({{2, 3, 4}, {5, 6, 7, 8}, {9, 2}}, 6);
  Tape<float> tape(false);
  auto logits = forward(tape, p, cfg, batch, false, nullptr);
  REQUIRE(logits.size() == 12);
  for (const auto& l : logits) {
    CHECK(l.shape() == Shape{3});
    for (int i = 0; i < 3; ++i) CHECK(std::isfinite(l.data()[i]));
  }

  Tensor<float> enc = encode(tape, p, cfg, batch, false, nullptr);
  CHECK(enc.shape() == Shape{3, 6, cfg.hidden_size});
}

TEST_CASE("all-padding input returns exactly the head biases") {
  ModelConfig cfg = tiny_config(2);
  std::vector<TaskHeadSpec> specs = {{0, 13.4}, {1, 2.0}};
  auto p = init_params<float>(cfg, 12, specs, 11);
  TokenBatch batch;
  batch.batch_size = 1;
  batch.seq_len = 4;
  batch.ids = {0, 0, 0, 0};
  batch.valid = {0, 0, 0, 0};
  Tape<float> tape(false);
  auto logits = forward(tape, p, cfg, batch, false, nullptr);
  CHECK(logits[0].data()[0] == p.heads[0].fc2_b.data()[0]);
  CHECK(logits[1].data()[0] == p.heads[1].fc2_b.data()[0]);

  cfg.head_kind = HeadKind::max_pool;
  auto q = init_params<float>(cfg, 12, specs, 11);
  auto pool_logits = forward(tape, q, cfg, batch, false, nullptr);
  CHECK(pool_logits[0].data()[0] == q.heads[0].fc1_b.data()[0]);
}

TEST_CASE("permuting the batch permutes the logits identically") {
  ModelConfig cfg = tiny_config(2);
  auto p = init_params<float>(cfg, 12, specs_for(2), 5);
  TokenBatch ab = batch_of({{2, 3, 4}, {5, 6, 7, 8}}, 8);
  TokenBatch ba = batch_of({{5, 6, 7, 8}, {2, 3, 4}}, 8);
  Tape<float> tape(false);
  auto first = forward(tape, p, cfg, ab, false, nullptr);
  auto second = forward(tape, p, cfg, ba, false, nullptr);
  for (size_t t = 0; t < first.size(); ++t) {
    CHECK(first[t].data()[0] == second[t].data()[1]);
    CHECK(first[t].data()[1] == second[t].data()[0]);
  }
}

TEST_CASE("padding beyond true_len never changes logits") {
  ModelConfig cfg = tiny_config(2);
  auto p = init_params<float>(cfg, 12, specs_for(2), 21);
  TokenBatch narrow = batch_of({{2, 3, 4}, {5, 6, 2, 3}}, 5);
  TokenBatch wide = batch_of({{2, 3, 4}, {5, 6, 2, 3}}, 10);
  Tape<float> tape(false);
  auto a = forward(tape, p, cfg, narrow, false, nullptr);
  auto b = forward(tape, p, cfg, wide, false, nullptr);
  for (size_t t = 0; t < a.size(); ++t)
    for (int i = 0; i < 2; ++i)
      CHECK(std::abs(a[t].data()[i] - b[t].data()[i]) < 1e-5);

  cfg.use_rnn_instead_of_cnn = true;
  cfg.use_cnn = false;
  auto q = init_params<float>(cfg, 12, specs_for(2), 22);
  auto ra = forward(tape, q, cfg, narrow, false, nullptr);
  auto rb = forward(tape, q, cfg, wide, false, nullptr);
  for (size_t t = 0; t < ra.size(); ++t)
    for (int i = 0; i < 2; ++i)
      CHECK(std::abs(ra[t].data()[i] - rb[t].data()[i]) < 1e-5);
}

TEST_CASE("task heads are isolated") {
  ModelConfig cfg = tiny_config(3);
  auto p = init_params<float>(cfg, 12, specs_for(3), 9);
  TokenBatch batch = batch_of({{2, 3, 4, 5}}, 6);
  Tape<float> tape(false);
  auto before = forward(tape, p, cfg, batch, false, nullptr);
  p.heads[1].fc1_w.data()[0] += 10.0f;
  p.heads[1].fc2_b.data()[0] -= 3.0f;
  auto after = forward(tape, p, cfg, batch, false, nullptr);
  CHECK(after[0].data()[0] == before[0].data()[0]);
  CHECK(after[2].data()[0] == before[2].data()[0]);
  CHECK(after[1].data()[0] != before[1].data()[0]);
}

TEST_CASE("encode honors the ablation toggles") {
  ModelConfig cfg = tiny_config(1);
  cfg.use_self_attention = false;
  auto p = init_params<float>(cfg, 12, specs_for(1), 2);
  TokenBatch batch = batch_of({{2, 3, 4}}, 5);
  Tape<float> tape(false);

  // without self-attention, encode is exactly the CNN front end
  Tensor<float> enc = encode(tape, p, cfg, batch, false, nullptr);
  Tensor<float> emb =
      embedding_lookup(tape, p.embedding, batch.ids, 1, 5);
  emb = zero_masked(tape, emb, batch.valid);
  Tensor<float> conv =
      relu(tape, conv1d_same(tape, emb, p.conv_w, p.conv_b, &batch.valid));
  REQUIRE(enc.shape() == conv.shape());
  for (int i = 0; i < enc.size(); ++i) CHECK(enc.data()[i] == conv.data()[i]);

  // degenerate config: embeddings flow straight to the heads
  ModelConfig deg = tiny_config(1);
  deg.use_cnn = false;
  deg.use_self_attention = false;
  auto pd = init_params<float>(deg, 12, specs_for(1), 2);
  Tensor<float> raw = encode(tape, pd, deg, batch, false, nullptr);
  CHECK(raw.shape() == Shape{1, 5, deg.embed_size});

  ModelConfig bad = deg;
  bad.embed_size = 6;  // hidden stays 8
  auto pb = init_params<float>(bad, 12, specs_for(1), 2);
  CHECK_THROWS_WITH_AS(encode(tape, pb, bad, batch, false, nullptr),
                       doctest::Contains("ConfigShapeMismatch"), DataError);

  ModelConfig conflict = tiny_config(1);
  conflict.use_rnn_instead_of_cnn = true;  // cnn still on
  CHECK_THROWS_WITH_AS(conflict.validate(),
                       doctest::Contains("ConfigConflict"), DataError);
}

TEST_CASE("all eight ablation configurations run forward") {
  std::vector<std::function<void(ModelConfig&)>> tweaks = {
      [](ModelConfig&) {},
      [](ModelConfig& c) { c.two_char_embedding = false; },
      [](ModelConfig& c) { c.num_tasks = 1; },  // single-task stand-in
      [](ModelConfig& c) { c.use_self_attention = false; },
      [](ModelConfig& c) { c.use_cnn = false; },
      [](ModelConfig& c) {
        c.use_cnn = false;
        c.use_rnn_instead_of_cnn = true;
      },
      [](ModelConfig& c) { c.head_kind = HeadKind::max_pool; },
      [](ModelConfig& c) { c.num_heads = 5; },
      [](ModelConfig& c) { c.use_position_encoding = true; },
  };
  TokenBatch batch = batch_of({{2, 3, 4, 5, 6}, {7, 8, 9}}, 6);
  for (size_t i = 0; i < tweaks.size(); ++i) {
    ModelConfig cfg = tiny_config(2);
    tweaks[i](cfg);
    cfg.validate();
    auto p = init_params<float>(cfg, 12, specs_for(cfg.num_tasks),
                                static_cast<uint64_t>(100 + i));
    Tape<float> tape(false);
    auto logits = forward(tape, p, cfg, batch, false, nullptr);
    REQUIRE(static_cast<int>(logits.size()) == cfg.num_tasks);
    for (const auto& l : logits)
      for (int j = 0; j < l.size(); ++j) CHECK(std::isfinite(l.data()[j]));
  }
}

TEST_CASE("five heads over hidden 128 concatenate back to 128") {
  ModelConfig cfg;
  cfg.num_tasks = 1;
  cfg.num_heads = 5;  // uneven split of 128
  cfg.max_seq_len = 12;
  cfg.dropout_rate = 0.0;
  auto p = init_params<float>(cfg, 20, specs_for(1), 4);
  TokenBatch batch = batch_of({{2, 3, 4, 5}}, 8);
  Tape<float> tape(false);
  Tensor<float> enc = encode(tape, p, cfg, batch, false, nullptr);
  CHECK(enc.shape() == Shape{1, 8, 128});
  for (int i = 0; i < enc.size(); ++i) CHECK(std::isfinite(enc.data()[i]));
}

TEST_CASE("positional encoding values and effect") {
  auto pe = positional_encoding<float>(6, 8);
  CHECK(pe.shape() == Shape{6, 8});
  for (int i = 0; i < 4; ++i) {
    CHECK(pe.data()[2 * i] == doctest::Approx(0.0f));      // sin 0
    CHECK(pe.data()[2 * i + 1] == doctest::Approx(1.0f));  // cos 0
  }
  for (int i = 0; i < pe.size(); ++i) {
    CHECK(pe.data()[i] <= 1.0f);
    CHECK(pe.data()[i] >= -1.0f);
  }
  CHECK_THROWS_WITH_AS(positional_encoding<float>(4, 7),
                       doctest::Contains("OddHidden"), DataError);

  ModelConfig cfg = tiny_config(1);
  auto p = init_params<float>(cfg, 12, specs_for(1), 6);
  TokenBatch batch = batch_of({{2, 3, 4, 2}}, 6);
  Tape<float> tape(false);
  auto plain = forward(tape, p, cfg, batch, false, nullptr);
  cfg.use_position_encoding = true;
  auto positioned = forward(tape, p, cfg, batch, false, nullptr);
  CHECK(std::abs(plain[0].data()[0] - positioned[0].data()[0]) > 0.0f);
}

TEST_CASE("gru fixpoint at zero and output shape") {
  GruParams<float> g;
  g.w_ih = Tensor<float>::zeros({4, 9});
  g.w_hh = Tensor<float>::zeros({3, 9});
  g.b_ih = Tensor<float>::zeros({9});
  g.b_hh = Tensor<float>::zeros({9});
  Rng rng(5);
  for (int i = 0; i < g.w_ih.size(); ++i)
    g.w_ih.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  for (int i = 0; i < g.w_hh.size(); ++i)
    g.w_hh.data()[i] = static_cast<float>(rng.uniform(-1, 1));

  Tensor<float> x = Tensor<float>::zeros({2, 5, 4});
  std::vector<uint8_t> valid(10, 1);
  Tape<float> tape(false);
  Tensor<float> out = gru_layer(tape, g, x, valid);
  CHECK(out.shape() == Shape{2, 5, 3});
  for (int i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0f);
}

TEST_CASE("attention rows over valid keys sum to one") {
  ModelConfig cfg = tiny_config(1);
  cfg.num_sa_layers = 1;
  auto p = init_params<float>(cfg, 12, specs_for(1), 8);
  TokenBatch batch = batch_of({{2, 3, 4}}, 6);
  Tape<float> tape(false);
  AttentionDump dump;
  encode(tape, p, cfg, batch, false, nullptr, &dump);
  REQUIRE_FALSE(dump.rows.empty());
  for (int q = 0; q < 3; ++q) {
    double total = 0;
    for (const auto& r : dump.rows)
      if (r.layer == 0 && r.query_pos == q) total += r.weight;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
  }
  // masked keys carry zero weight everywhere
  for (const auto& r : dump.rows)
    if (r.key_pos >= 3) CHECK(r.weight == 0.0);
}

TEST_CASE("make_batch sizes to the longest sequence and validates") {
  TokenSequence a;
  a.ids = {2, 3, 0, 0, 0, 0};
  a.kinds.assign(6, TokenKind::atom);
  a.true_len = 2;
  a.source = "CC";
  TokenSequence b = a;
  b.ids = {2, 3, 4, 5, 0, 0};
  b.true_len = 4;
  TokenBatch batch = make_batch(std::vector<TokenSequence>{a, b}, 6);
  CHECK(batch.seq_len == 4);
  CHECK(batch.valid == std::vector<uint8_t>{1, 1, 0, 0, 1, 1, 1, 1});
  CHECK_THROWS_AS(make_batch(std::vector<TokenSequence>{}, 6), DataError);
  b.true_len = 7;
  CHECK_THROWS_WITH_AS(make_batch(std::vector<TokenSequence>{b}, 6),
                       doctest::Contains("SequenceTooLong"), DataError);
}
