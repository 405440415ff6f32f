#include "samtl/gradcheck_suite.hpp"

#include <chrono>
#include <functional>

#include "samtl/loss.hpp"
#include "samtl/model.hpp"

namespace samtl {

namespace {

using DTensor = Tensor<double>;
using DTape = Tape<double>;

DTensor rand_tensor(Rng& rng, const Shape& shape, double lo = -1.0,
                    double hi = 1.0) {
  DTensor t = DTensor::zeros(shape);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// values bounded away from zero, for kinked ops
DTensor rand_tensor_nonzero(Rng& rng, const Shape& shape) {
  DTensor t = DTensor::zeros(shape);
  for (int i = 0; i < t.size(); ++i) {
    double mag = rng.uniform(0.2, 1.0);
    t.data()[i] = rng.bernoulli(0.5) ? mag : -mag;
  }
  return t;
}

// reduce an op output to a scalar through a fixed random projection,
// reconstructed identically on every call
DTensor project(DTape& tape, const DTensor& out, uint64_t seed) {
  Rng r(seed ^ 0x9e3779b97f4a7c15ull);
  DTensor w = rand_tensor(r, out.shape());
  return sum(tape, mul(tape, out, w));
}

struct Suite {
  SuiteResult result;
  std::ostream* log;
  int seeds;

  void run(const std::string& name,
           const std::function<GradCheckReport(uint64_t)>& one, double tol) {
    GradCheckReport worst;
    worst.tol = tol;
    worst.pass = true;
    for (int s = 1; s <= seeds; ++s) {
      GradCheckReport r = one(static_cast<uint64_t>(s));
      worst.checked += r.checked;
      if (r.max_rel_err > worst.max_rel_err) {
        worst.max_rel_err = r.max_rel_err;
        worst.worst = r.worst;
      }
      worst.pass = worst.pass && r.pass;
    }
    result.cases.push_back({name, worst});
    result.max_rel_err = std::max(result.max_rel_err, worst.max_rel_err);
    if (log)
      *log << (worst.pass ? "  ok   " : "  FAIL ") << name << "  max_rel_err "
           << worst.max_rel_err << " (" << worst.checked << " checks)\n";
  }
};

std::vector<uint8_t> random_mask(Rng& rng, size_t n, size_t min_valid) {
  std::vector<uint8_t> m(n);
  size_t valid = 0;
  for (auto& v : m) {
    v = rng.bernoulli(0.3) ? 0 : 1;
    valid += v;
  }
  for (size_t i = 0; i < n && valid < min_valid; ++i)
    if (!m[i]) {
      m[i] = 1;
      ++valid;
    }
  return m;
}

}  // namespace

SuiteResult run_gradcheck_suite(int seeds_per_op, std::ostream* log) {
  auto t0 = std::chrono::steady_clock::now();
  Suite suite;
  suite.log = log;
  suite.seeds = seeds_per_op;
  const double kOpTol = 1e-4;

  suite.run(
      "add",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {2, 3, 4});
        auto b = rand_tensor(rng, {2, 3, 4});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, add(t, in[0], in[1]), s);
            },
            {a, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "add_broadcast",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {2, 3, 4});
        auto bias = rand_tensor(rng, {4});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, add(t, in[0], in[1]), s);
            },
            {a, bias}, 1e-4);
      },
      kOpTol);

  suite.run(
      "sub",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {3, 4});
        auto b = rand_tensor(rng, {3, 4});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, sub(t, in[0], in[1]), s);
            },
            {a, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "mul",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {3, 4});
        auto b = rand_tensor(rng, {3, 4});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, mul(t, in[0], in[1]), s);
            },
            {a, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "mul_scalar",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {5});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, mul_scalar(t, in[0], 0.37), s);
            },
            {a}, 1e-4);
      },
      kOpTol);

  suite.run(
      "matmul_2d",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {3, 4});
        auto b = rand_tensor(rng, {4, 5});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, matmul(t, in[0], in[1]), s);
            },
            {a, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "matmul_3d_2d",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {2, 3, 4});
        auto b = rand_tensor(rng, {4, 5});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, matmul(t, in[0], in[1]), s);
            },
            {a, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "matmul_3d_2d_masked",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {2, 3, 4});
        auto b = rand_tensor(rng, {4, 5});
        auto mask = std::make_shared<std::vector<uint8_t>>(
            random_mask(rng, 6, 2));
        return grad_check(
            [s, mask](DTape& t, std::vector<DTensor>& in) {
              return project(t, matmul(t, in[0], in[1], mask.get()), s);
            },
            {a, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "matmul_3d_3d",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {2, 3, 4});
        auto b = rand_tensor(rng, {2, 4, 5});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, matmul(t, in[0], in[1]), s);
            },
            {a, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "transpose_last2",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {2, 3, 4});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, transpose_last2(t, in[0]), s);
            },
            {a}, 1e-4);
      },
      kOpTol);

  suite.run(
      "embedding_lookup",
      [](uint64_t s) {
        Rng rng(s);
        auto table = rand_tensor(rng, {7, 4});
        std::vector<int> ids;
        for (int i = 0; i < 6; ++i)
          ids.push_back(static_cast<int>(rng.uniform_index(7)));
        return grad_check(
            [s, ids](DTape& t, std::vector<DTensor>& in) {
              return project(t, embedding_lookup(t, in[0], ids, 2, 3), s);
            },
            {table}, 1e-4);
      },
      kOpTol);

  suite.run(
      "conv1d_same",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {2, 6, 3});
        auto w = rand_tensor(rng, {5, 3, 4});
        auto b = rand_tensor(rng, {4});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, conv1d_same(t, in[0], in[1], in[2]), s);
            },
            {x, w, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "conv1d_same_masked",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {2, 6, 3});
        auto w = rand_tensor(rng, {5, 3, 4});
        auto b = rand_tensor(rng, {4});
        auto mask = std::make_shared<std::vector<uint8_t>>(
            random_mask(rng, 12, 3));
        return grad_check(
            [s, mask](DTape& t, std::vector<DTensor>& in) {
              return project(t, conv1d_same(t, in[0], in[1], in[2], mask.get()),
                             s);
            },
            {x, w, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "relu",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor_nonzero(rng, {3, 5});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, relu(t, in[0]), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "sigmoid",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {3, 5}, -3, 3);
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, sigmoid(t, in[0]), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "tanh",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {3, 5}, -2, 2);
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, tanh_op(t, in[0]), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "softmax_lastdim",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {3, 6}, -2, 2);
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, softmax_lastdim(t, in[0]), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "softmax_lastdim_masked",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {2, 3, 4}, -2, 2);
        auto mask = std::make_shared<std::vector<uint8_t>>(
            random_mask(rng, 8, 2));
        return grad_check(
            [s, mask](DTape& t, std::vector<DTensor>& in) {
              return project(t, softmax_lastdim(t, in[0], mask.get()), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "layer_norm",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {4, 6});
        auto gamma = rand_tensor(rng, {6}, 0.5, 1.5);
        auto beta = rand_tensor(rng, {6});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, layer_norm(t, in[0], in[1], in[2]), s);
            },
            {x, gamma, beta}, 1e-4);
      },
      kOpTol);

  suite.run(
      "dropout",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {4, 5});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              Rng drop_rng(s * 31 + 7);  // fixed mask across FD calls
              return project(t, dropout(t, in[0], 0.3, true, &drop_rng), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "mean_lastdim",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {3, 4, 5});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, mean_lastdim(t, in[0]), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "concat_lastdim",
      [](uint64_t s) {
        Rng rng(s);
        auto a = rand_tensor(rng, {2, 3, 2});
        auto b = rand_tensor(rng, {2, 3, 4});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, concat_lastdim(t, {in[0], in[1]}), s);
            },
            {a, b}, 1e-4);
      },
      kOpTol);

  suite.run(
      "slice_lastdim",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {2, 3, 6});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, slice_lastdim(t, in[0], 2, 3), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "slice_seq_stack_seq",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {2, 4, 3});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              std::vector<DTensor> parts;
              for (int p = 3; p >= 0; --p)
                parts.push_back(slice_seq(t, in[0], p));
              return project(t, stack_seq(t, parts), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "reshape",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {2, 6});
        return grad_check(
            [s](DTape& t, std::vector<DTensor>& in) {
              return project(t, reshape(t, in[0], {3, 4}), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "zero_masked",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {2, 3, 4});
        auto mask = std::make_shared<std::vector<uint8_t>>(
            random_mask(rng, 6, 1));
        return grad_check(
            [s, mask](DTape& t, std::vector<DTensor>& in) {
              return project(t, zero_masked(t, in[0], *mask), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "masked_max_lastdim",
      [](uint64_t s) {
        Rng rng(s);
        // spaced values so +-h never flips the argmax
        DTensor x = DTensor::zeros({3, 5});
        std::vector<int> perm(15);
        for (int i = 0; i < 15; ++i) perm[static_cast<size_t>(i)] = i;
        rng.shuffle(perm);
        for (int i = 0; i < 15; ++i)
          x.data()[i] = 0.05 * perm[static_cast<size_t>(i)];
        auto mask = std::make_shared<std::vector<uint8_t>>(
            random_mask(rng, 15, 3));
        return grad_check(
            [s, mask](DTape& t, std::vector<DTensor>& in) {
              return project(t, masked_max_lastdim(t, in[0], *mask), s);
            },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "sum",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {7});
        return grad_check(
            [](DTape& t, std::vector<DTensor>& in) { return sum(t, in[0]); },
            {x}, 1e-4);
      },
      kOpTol);

  suite.run(
      "weighted_bce_sum",
      [](uint64_t s) {
        Rng rng(s);
        auto z = rand_tensor(rng, {6}, -2, 2);
        std::vector<uint8_t> labels, mask;
        for (int i = 0; i < 6; ++i) {
          labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
          mask.push_back(rng.bernoulli(0.8) ? 1 : 0);
        }
        mask[0] = 1;
        return grad_check(
            [labels, mask](DTape& t, std::vector<DTensor>& in) {
              return weighted_bce_sum(t, in[0], labels, mask, 4.2);
            },
            {z}, 1e-4);
      },
      kOpTol);

  suite.run(
      "gru_layer",
      [](uint64_t s) {
        Rng rng(s);
        auto x = rand_tensor(rng, {2, 4, 3});
        GruParams<double> p;
        auto w_ih = rand_tensor(rng, {3, 15});
        auto w_hh = rand_tensor(rng, {5, 15});
        auto b_ih = rand_tensor(rng, {15});
        auto b_hh = rand_tensor(rng, {15});
        auto mask = std::make_shared<std::vector<uint8_t>>(
            random_mask(rng, 8, 4));
        return grad_check(
            [s, mask](DTape& t, std::vector<DTensor>& in) {
              GruParams<double> g{in[1], in[2], in[3], in[4]};
              return project(t, gru_layer(t, g, in[0], *mask), s);
            },
            {x, w_ih, w_hh, b_ih, b_hh}, 1e-4);
      },
      kOpTol);

  // Full model: defaults reduced to max_seq_len 30 and batch 2,
  // 25 sampled parameters, tol 1e-3.
  {
    ModelConfig cfg;
    cfg.max_seq_len = 30;
    cfg.num_tasks = 2;
    Rng rng(2024);
    const int vocab_size = 20;
    std::vector<TaskHeadSpec> specs = {{0, 3.0}, {1, 0.5}};
    ModelParams<double> params =
        init_params<double>(cfg, vocab_size, specs, 7);
    TokenBatch batch;
    batch.batch_size = 2;
    batch.seq_len = cfg.max_seq_len;
    batch.ids.assign(60, 0);
    batch.valid.assign(60, 0);
    int lens[2] = {26, 17};
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < lens[b]; ++i) {
        batch.ids[static_cast<size_t>(b * 30 + i)] =
            2 + static_cast<int>(rng.uniform_index(vocab_size - 2));
        batch.valid[static_cast<size_t>(b * 30 + i)] = 1;
      }
    std::vector<std::vector<uint8_t>> labels = {{1, 0}, {0, 1}};
    std::vector<std::vector<uint8_t>> mask = {{1, 1}, {1, 0}};
    std::vector<double> weights = {3.0, 0.5};

    std::vector<DTensor> inputs;
    std::vector<std::string> names;
    params.visit([&](const std::string& n, Tensor<double>& t) {
      names.push_back(n);
      inputs.push_back(t);
    });
    auto fn = [&cfg, &params, &batch, &labels, &mask,
               &weights](DTape& t, std::vector<DTensor>&) {
      Rng drop_rng(99);  // dropout mask fixed across FD calls
      auto logits = forward(t, params, cfg, batch, true, &drop_rng);
      return weighted_multitask_loss(t, logits, labels, mask, weights);
    };
    Rng sample_rng(5);
    GradCheckReport rep =
        grad_check_sampled(fn, inputs, 25, sample_rng, 1e-3);
    suite.result.cases.push_back({"model_end_to_end", rep});
    suite.result.max_rel_err =
        std::max(suite.result.max_rel_err, rep.max_rel_err);
    if (log)
      *log << (rep.pass ? "  ok   " : "  FAIL ") << "model_end_to_end"
           << "  max_rel_err " << rep.max_rel_err << " (" << rep.checked
           << " checks)\n";
  }

  suite.result.pass = true;
  for (const auto& c : suite.result.cases)
    suite.result.pass = suite.result.pass && c.report.pass;
  suite.result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return suite.result;
}

}  // namespace samtl
