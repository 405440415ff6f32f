#pragma once

#include <optional>
#include <string>
#include <vector>

#include "samtl/tensor.hpp"
#include "samtl/tokenizer.hpp"

namespace samtl {

enum class HeadKind { discrete_output, max_pool };

struct ModelConfig {
  int embed_size = 128;
  int hidden_size = 128;
  int ffn_size = 1024;
  int conv_filter_width = 7;
  int num_sa_layers = 5;
  int num_heads = 1;
  double dropout_rate = 0.1;
  int max_seq_len = 200;
  int num_tasks = 1;
  bool use_position_encoding = false;
  bool use_self_attention = true;
  bool use_cnn = true;
  bool use_rnn_instead_of_cnn = false;
  HeadKind head_kind = HeadKind::discrete_output;
  bool two_char_embedding = true;

  void validate() const {
    if (embed_size < 1 || hidden_size < 1 || ffn_size < 1 ||
        conv_filter_width < 1 || num_sa_layers < 0 || num_heads < 1 ||
        max_seq_len < 1 || num_tasks < 1)
      throw DataError("ModelConfig: all sizes must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw DataError("ModelConfig: dropout_rate outside [0,1)");
    if (use_cnn && use_rnn_instead_of_cnn)
      throw DataError("ConfigConflict: both CNN and RNN front layers enabled");
    if (conv_filter_width % 2 == 0)
      throw DataError("ModelConfig: conv_filter_width must be odd");
    if (num_heads > hidden_size)
      throw DataError("ModelConfig: more heads than hidden units");
  }
};

struct TaskHeadSpec {
  int task_index = 0;
  double balancing_bias = 1.0;  // n_neg / n_pos on the training labels
};

template <typename T>
struct SaLayerParams {
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> ffn_w1, ffn_w2;
  Tensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

template <typename T>
struct GruParams {
  Tensor<T> w_ih, w_hh, b_ih, b_hh;  // gate order r|z|n
};

template <typename T>
struct HeadParams {
  Tensor<T> fc1_w, fc1_b;
  Tensor<T> fc2_w, fc2_b;  // undefined for max_pool heads
};

template <typename T>
struct ModelParams {
  Tensor<T> embedding;
  Tensor<T> conv_w, conv_b;
  std::optional<GruParams<T>> gru;
  std::vector<SaLayerParams<T>> sa_layers;
  std::vector<HeadParams<T>> heads;

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("embedding", embedding);
    if (conv_w.defined()) {
      fn("conv.w", conv_w);
      fn("conv.b", conv_b);
    }
    if (gru) {
      fn("gru.w_ih", gru->w_ih);
      fn("gru.w_hh", gru->w_hh);
      fn("gru.b_ih", gru->b_ih);
      fn("gru.b_hh", gru->b_hh);
    }
    for (size_t l = 0; l < sa_layers.size(); ++l) {
      std::string p = "sa" + std::to_string(l) + ".";
      auto& s = sa_layers[l];
      fn(p + "wq", s.wq);
      fn(p + "wk", s.wk);
      fn(p + "wv", s.wv);
      fn(p + "wo", s.wo);
      fn(p + "ffn_w1", s.ffn_w1);
      fn(p + "ffn_w2", s.ffn_w2);
      fn(p + "ln1_gamma", s.ln1_gamma);
      fn(p + "ln1_beta", s.ln1_beta);
      fn(p + "ln2_gamma", s.ln2_gamma);
      fn(p + "ln2_beta", s.ln2_beta);
    }
    for (size_t h = 0; h < heads.size(); ++h) {
      std::string p = "head" + std::to_string(h) + ".";
      auto& hp = heads[h];
      fn(p + "fc1_w", hp.fc1_w);
      fn(p + "fc1_b", hp.fc1_b);
      if (hp.fc2_w.defined()) {
        fn(p + "fc2_w", hp.fc2_w);
        fn(p + "fc2_b", hp.fc2_b);
      }
    }
  }

  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string& name, Tensor<T>& t) {
          fn(name, static_cast<const Tensor<T>&>(t));
        });
  }

  long param_count() const {
    long n = 0;
    visit([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  void set_requires_grad(bool b) {
    visit([&](const std::string&, Tensor<T>& t) { t.set_requires_grad(b); });
  }

  void zero_grad() {
    visit([&](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }

  ModelParams clone() const {
    ModelParams out;
    out.embedding = clone_tensor(embedding);
    out.conv_w = clone_tensor(conv_w);
    out.conv_b = clone_tensor(conv_b);
    if (gru)
      out.gru = GruParams<T>{clone_tensor(gru->w_ih), clone_tensor(gru->w_hh),
                             clone_tensor(gru->b_ih), clone_tensor(gru->b_hh)};
    for (const auto& s : sa_layers)
      out.sa_layers.push_back(
          {clone_tensor(s.wq), clone_tensor(s.wk), clone_tensor(s.wv),
           clone_tensor(s.wo), clone_tensor(s.ffn_w1), clone_tensor(s.ffn_w2),
           clone_tensor(s.ln1_gamma), clone_tensor(s.ln1_beta),
           clone_tensor(s.ln2_gamma), clone_tensor(s.ln2_beta)});
    for (const auto& h : heads)
      out.heads.push_back({clone_tensor(h.fc1_w), clone_tensor(h.fc1_b),
                           clone_tensor(h.fc2_w), clone_tensor(h.fc2_b)});
    return out;
  }

 private:
  static Tensor<T> clone_tensor(const Tensor<T>& t) {
    if (!t.defined()) return {};
    Tensor<T> c = Tensor<T>::from(t.shape(), t.value(), t.requires_grad());
    return c;
  }
};

// Glorot-uniform weights; layer-norm scales 1, shifts 0; plain biases
// 0; the final per-task scalar bias starts at -ln(balancing_bias) so
// the initial sigmoid output matches the prior positive rate.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, int vocab_size,
                           const std::vector<TaskHeadSpec>& head_specs,
                           uint64_t seed);

struct TokenBatch {
  std::vector<int> ids;        // B*L row-major
  std::vector<uint8_t> valid;  // B*L, 1 below each sequence's true_len
  int batch_size = 0;
  int seq_len = 0;
};

// seq_len becomes the longest true_len in the batch (at least 1),
// capped by cap_len. Sequences longer than cap_len are an error.
TokenBatch make_batch(const std::vector<const TokenSequence*>& seqs,
                      int cap_len);
TokenBatch make_batch(const std::vector<TokenSequence>& seqs, int cap_len);

struct AttentionDump {
  struct Row {
    int layer, head, batch, query_pos, key_pos;
    double weight;
  };
  std::vector<Row> rows;
};

// PE[p,2i] = sin(p / 10000^(2i/hidden)), PE[p,2i+1] = cos(same angle).
template <typename T>
Tensor<T> positional_encoding(int max_seq_len, int hidden);

template <typename T>
Tensor<T> gru_layer(Tape<T>& tape, const GruParams<T>& p, const Tensor<T>& x,
                    const std::vector<uint8_t>& valid);

// Encoder output [B, L, hidden]; stops before the task heads.
template <typename T>
Tensor<T> encode(Tape<T>& tape, const ModelParams<T>& params,
                 const ModelConfig& cfg, const TokenBatch& batch, bool train,
                 Rng* rng, AttentionDump* dump = nullptr);

// Per-task pre-sigmoid logits, each of shape [batch].
template <typename T>
std::vector<Tensor<T>> forward(Tape<T>& tape, const ModelParams<T>& params,
                               const ModelConfig& cfg, const TokenBatch& batch,
                               bool train, Rng* rng,
                               AttentionDump* dump = nullptr);

// ---------------------------------------------------------------------------
// Implementation
// ---------------------------------------------------------------------------

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, int vocab_size,
                           const std::vector<TaskHeadSpec>& head_specs,
                           uint64_t seed) {
  cfg.validate();
  if (vocab_size < 2)
    throw DataError("init_params: vocabulary must hold pad and unknown");
  if (static_cast<int>(head_specs.size()) != cfg.num_tasks)
    throw DataError("BadHeadCount: " + std::to_string(head_specs.size()) +
                    " head specs for " + std::to_string(cfg.num_tasks) +
                    " tasks");
  Rng rng(seed);
  auto glorot = [&rng](const Shape& shape) {
    int fan_out = shape.back();
    int fan_in = numel(shape) / fan_out;
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor<T> t = Tensor<T>::zeros(shape, true);
    for (int i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
    return t;
  };
  auto constant = [](const Shape& shape, T v) {
    Tensor<T> t = Tensor<T>::zeros(shape, true);
    std::fill(t.value().begin(), t.value().end(), v);
    return t;
  };

  ModelParams<T> p;
  p.embedding = glorot({vocab_size, cfg.embed_size});
  if (cfg.use_cnn) {
    p.conv_w = glorot({cfg.conv_filter_width, cfg.embed_size, cfg.hidden_size});
    p.conv_b = constant({cfg.hidden_size}, T(0));
  }
  if (cfg.use_rnn_instead_of_cnn) {
    GruParams<T> g;
    g.w_ih = glorot({cfg.embed_size, 3 * cfg.hidden_size});
    g.w_hh = glorot({cfg.hidden_size, 3 * cfg.hidden_size});
    g.b_ih = constant({3 * cfg.hidden_size}, T(0));
    g.b_hh = constant({3 * cfg.hidden_size}, T(0));
    p.gru = g;
  }
  if (cfg.use_self_attention) {
    for (int l = 0; l < cfg.num_sa_layers; ++l) {
      SaLayerParams<T> s;
      s.wq = glorot({cfg.hidden_size, cfg.hidden_size});
      s.wk = glorot({cfg.hidden_size, cfg.hidden_size});
      s.wv = glorot({cfg.hidden_size, cfg.hidden_size});
      s.wo = glorot({cfg.hidden_size, cfg.hidden_size});
      s.ffn_w1 = glorot({cfg.hidden_size, cfg.ffn_size});
      s.ffn_w2 = glorot({cfg.ffn_size, cfg.hidden_size});
      s.ln1_gamma = constant({cfg.hidden_size}, T(1));
      s.ln1_beta = constant({cfg.hidden_size}, T(0));
      s.ln2_gamma = constant({cfg.hidden_size}, T(1));
      s.ln2_beta = constant({cfg.hidden_size}, T(0));
      p.sa_layers.push_back(std::move(s));
    }
  }
  int feature_dim = (cfg.use_cnn || cfg.use_rnn_instead_of_cnn ||
                     cfg.use_self_attention)
                        ? cfg.hidden_size
                        : cfg.embed_size;
  for (const auto& spec : head_specs) {
    if (spec.balancing_bias <= 0.0)
      throw DataError("TaskHeadSpec: balancing_bias must be positive");
    HeadParams<T> h;
    h.fc1_w = glorot({feature_dim, 1});
    T final_bias = static_cast<T>(-std::log(spec.balancing_bias));
    if (cfg.head_kind == HeadKind::discrete_output) {
      h.fc1_b = constant({1}, T(0));
      h.fc2_w = glorot({cfg.max_seq_len, 1});
      h.fc2_b = constant({1}, final_bias);
    } else {
      h.fc1_b = constant({1}, final_bias);
    }
    p.heads.push_back(std::move(h));
  }
  return p;
}

template <typename T>
Tensor<T> positional_encoding(int max_seq_len, int hidden) {
  if (hidden % 2 != 0)
    throw DataError("OddHidden: positional encoding needs even hidden, got " +
                    std::to_string(hidden));
  Tensor<T> pe = Tensor<T>::zeros({max_seq_len, hidden});
  for (int p = 0; p < max_seq_len; ++p) {
    for (int i = 0; i < hidden / 2; ++i) {
      double angle = p / std::pow(10000.0, (2.0 * i) / hidden);
      pe.data()[static_cast<size_t>(p) * hidden + 2 * i] =
          static_cast<T>(std::sin(angle));
      pe.data()[static_cast<size_t>(p) * hidden + 2 * i + 1] =
          static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

template <typename T>
Tensor<T> gru_layer(Tape<T>& tape, const GruParams<T>& p, const Tensor<T>& x,
                    const std::vector<uint8_t>& valid) {
  int B = x.dim(0), L = x.dim(1);
  int H = p.w_hh.dim(0);
  Tensor<T> h = Tensor<T>::zeros({B, H});
  std::vector<Tensor<T>> outputs;
  outputs.reserve(static_cast<size_t>(L));
  for (int t = 0; t < L; ++t) {
    Tensor<T> xt = slice_seq(tape, x, t);
    Tensor<T> gi = add(tape, matmul(tape, xt, p.w_ih), p.b_ih);
    Tensor<T> gh = add(tape, matmul(tape, h, p.w_hh), p.b_hh);
    Tensor<T> r = sigmoid(tape, add(tape, slice_lastdim(tape, gi, 0, H),
                                    slice_lastdim(tape, gh, 0, H)));
    Tensor<T> z = sigmoid(tape, add(tape, slice_lastdim(tape, gi, H, H),
                                    slice_lastdim(tape, gh, H, H)));
    Tensor<T> n = tanh_op(
        tape, add(tape, slice_lastdim(tape, gi, 2 * H, H),
                  mul(tape, r, slice_lastdim(tape, gh, 2 * H, H))));
    // h = (1-z)*n + z*h_prev, written as n + z*(h_prev - n)
    h = add(tape, n, mul(tape, z, sub(tape, h, n)));
    outputs.push_back(h);
  }
  return zero_masked(tape, stack_seq(tape, outputs), valid);
}

template <typename T>
Tensor<T> encode(Tape<T>& tape, const ModelParams<T>& params,
                 const ModelConfig& cfg, const TokenBatch& batch, bool train,
                 Rng* rng, AttentionDump* dump) {
  if (batch.batch_size < 1) throw DataError("encode: empty batch");
  const int B = batch.batch_size, L = batch.seq_len;
  const int H = cfg.hidden_size;
  if (L > cfg.max_seq_len)
    throw DataError("ConfigShapeMismatch: batch length " + std::to_string(L) +
                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));

  Tensor<T> x = embedding_lookup(tape, params.embedding, batch.ids, B, L);
  x = zero_masked(tape, x, batch.valid);
  if (cfg.use_position_encoding) {
    Tensor<T> pe = positional_encoding<T>(cfg.max_seq_len, cfg.embed_size);
    Tensor<T> pe_l = (L == cfg.max_seq_len)
                         ? pe
                         : Tensor<T>::from({L, cfg.embed_size},
                                           std::vector<T>(pe.data(),
                                                          pe.data() +
                                                              static_cast<size_t>(L) *
                                                                  cfg.embed_size));
    x = zero_masked(tape, add(tape, x, pe_l), batch.valid);
  }
  x = dropout(tape, x, cfg.dropout_rate, train, rng);

  if (cfg.use_cnn) {
    x = relu(tape, conv1d_same(tape, x, params.conv_w, params.conv_b,
                               &batch.valid));
  } else if (cfg.use_rnn_instead_of_cnn) {
    x = gru_layer(tape, *params.gru, x, batch.valid);
  } else if (cfg.embed_size != H) {
    throw DataError(
        "ConfigShapeMismatch: without a front layer embed_size must equal "
        "hidden_size (" +
        std::to_string(cfg.embed_size) + " vs " + std::to_string(H) + ")");
  }

  if (!cfg.use_self_attention) return x;

  for (size_t layer = 0; layer < params.sa_layers.size(); ++layer) {
    const auto& s = params.sa_layers[layer];
    Tensor<T> q = matmul(tape, x, s.wq, &batch.valid);
    Tensor<T> k = matmul(tape, x, s.wk, &batch.valid);
    Tensor<T> v = matmul(tape, x, s.wv, &batch.valid);

    // heads split the feature axis; uneven widths allowed
    int num_heads = cfg.num_heads;
    int base = H / num_heads, rem = H % num_heads;
    std::vector<Tensor<T>> ctx_parts;
    int offset = 0;
    for (int hidx = 0; hidx < num_heads; ++hidx) {
      int width = base + (hidx < rem ? 1 : 0);
      Tensor<T> qh = num_heads == 1 ? q : slice_lastdim(tape, q, offset, width);
      Tensor<T> kh = num_heads == 1 ? k : slice_lastdim(tape, k, offset, width);
      Tensor<T> vh = num_heads == 1 ? v : slice_lastdim(tape, v, offset, width);
      Tensor<T> scores = mul_scalar(
          tape,
          matmul(tape, qh, transpose_last2(tape, kh), &batch.valid),
          static_cast<T>(1.0 / std::sqrt(double(width))));
      Tensor<T> probs = softmax_lastdim(tape, scores, &batch.valid);
      if (dump) {
        for (int b = 0; b < B; ++b)
          for (int qp = 0; qp < L; ++qp)
            for (int kp = 0; kp < L; ++kp)
              dump->rows.push_back(
                  {static_cast<int>(layer), hidx, b, qp, kp,
                   static_cast<double>(
                       probs.data()[(static_cast<size_t>(b) * L + qp) * L +
                                    kp])});
      }
      ctx_parts.push_back(matmul(tape, probs, vh));
      offset += width;
    }
    Tensor<T> ctx =
        num_heads == 1 ? ctx_parts[0] : concat_lastdim(tape, ctx_parts);
    Tensor<T> attn_out = matmul(tape, ctx, s.wo, &batch.valid);
    attn_out = dropout(tape, attn_out, cfg.dropout_rate, train, rng);
    x = layer_norm(tape, add(tape, x, attn_out), s.ln1_gamma, s.ln1_beta);

    Tensor<T> f = relu(tape, matmul(tape, x, s.ffn_w1, &batch.valid));
    f = matmul(tape, f, s.ffn_w2, &batch.valid);
    f = dropout(tape, f, cfg.dropout_rate, train, rng);
    x = zero_masked(tape,
                    layer_norm(tape, add(tape, x, f), s.ln2_gamma, s.ln2_beta),
                    batch.valid);
  }
  return x;
}

// 2D row slice helper for the per-position output weights.
template <typename T>
Tensor<T> slice_rows(Tape<T>& tape, const Tensor<T>& x, int offset, int rows) {
  if (x.rank() != 2) shape_mismatch("slice_rows", x.shape(), {});
  int M = x.dim(0), N = x.dim(1);
  if (offset < 0 || rows < 1 || offset + rows > M)
    throw NumericError("slice_rows: range outside " + shape_str(x.shape()));
  Tensor<T> out = Tensor<T>::from(
      {rows, N},
      std::vector<T>(x.data() + static_cast<size_t>(offset) * N,
                     x.data() + static_cast<size_t>(offset + rows) * N));
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc, offset, rows, N]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < N; ++j)
          dx[static_cast<size_t>(offset + r) * N + j] +=
              dy[static_cast<size_t>(r) * N + j];
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> forward(Tape<T>& tape, const ModelParams<T>& params,
                               const ModelConfig& cfg, const TokenBatch& batch,
                               bool train, Rng* rng, AttentionDump* dump) {
  Tensor<T> enc = encode(tape, params, cfg, batch, train, rng, dump);
  const int B = batch.batch_size, L = batch.seq_len;
  std::vector<Tensor<T>> logits;
  logits.reserve(params.heads.size());
  for (const auto& head : params.heads) {
    Tensor<T> a = matmul(tape, enc, head.fc1_w, &batch.valid);  // [B,L,1]
    Tensor<T> a2 = add(tape, reshape(tape, a, {B, L}), head.fc1_b);
    if (cfg.head_kind == HeadKind::discrete_output) {
      a2 = relu(tape, a2);
      a2 = zero_masked(tape, a2, batch.valid);
      Tensor<T> w2 = L == cfg.max_seq_len ? head.fc2_w
                                          : slice_rows(tape, head.fc2_w, 0, L);
      Tensor<T> logit = add(tape, matmul(tape, a2, w2), head.fc2_b);
      logits.push_back(reshape(tape, logit, {B}));
    } else {
      logits.push_back(masked_max_lastdim(tape, a2, batch.valid));
    }
  }
  return logits;
}

}  // namespace samtl
