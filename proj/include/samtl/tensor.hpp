#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "samtl/common.hpp"

namespace samtl {

using Shape = std::vector<int>;

inline int numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream ss;
  ss << '[';
  for (size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
  ss << ']';
  return ss.str();
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a,
                                        const Shape& b) {
  throw NumericError(std::string("ShapeMismatch in ") + op + ": " +
                     shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until touched
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& s, bool requires_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    t.n_->shape = s;
    t.n_->value.assign(static_cast<size_t>(numel(s)), T(0));
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(const Shape& s, std::vector<T> data,
                     bool requires_grad = false) {
    if (static_cast<int>(data.size()) != numel(s))
      throw NumericError("Tensor::from: data size " +
                         std::to_string(data.size()) + " != numel of " +
                         shape_str(s));
    Tensor t;
    t.n_ = std::make_shared<TensorNode<T>>();
    t.n_->shape = s;
    t.n_->value = std::move(data);
    t.n_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(n_->value.size()); }

  std::vector<T>& value() { return n_->value; }
  const std::vector<T>& value() const { return n_->value; }
  T* data() { return n_->value.data(); }
  const T* data() const { return n_->value.data(); }

  bool requires_grad() const { return n_ && n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  bool has_grad() const { return n_ && !n_->grad.empty(); }
  std::vector<T>& grad() {
    if (n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1)
      throw NumericError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->value[0];
  }

  bool same_node(const Tensor& other) const { return n_ == other.n_; }

 private:
  std::shared_ptr<TensorNode<T>> n_;
};

// Records one closure per differentiable op, in execution order;
// backward() replays them in exact reverse order.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t size() const { return steps_.size(); }

  void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw NumericError("NonScalarLoss: backward needs a scalar, got " +
                         shape_str(loss.shape()));
    if (backward_done_)
      throw NumericError("DoubleBackward: tape already traversed; reset first");
    backward_done_ = true;
    loss.grad()[0] = T(1);
    for (size_t i = steps_.size(); i > 0; --i) {
      steps_[i - 1]();
      steps_[i - 1] = nullptr;  // release captured buffers eagerly
    }
  }

  void reset() {
    steps_.clear();
    backward_done_ = false;
  }

 private:
  std::vector<std::function<void()>> steps_;
  bool recording_ = true;
  bool backward_done_ = false;
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<EMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const EMat<T>>;

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, int rows, int cols) {
  return MatMap<T>(t.data(), rows, cols);
}
template <typename T>
CMatMap<T> as_matrix(const Tensor<T>& t, int rows, int cols) {
  return CMatMap<T>(t.data(), rows, cols);
}
template <typename T>
MatMap<T> grad_matrix(Tensor<T>& t, int rows, int cols) {
  return MatMap<T>(t.grad().data(), rows, cols);
}

template <typename T, typename... Ts>
bool track(const Tape<T>& tape, const Ts&... inputs) {
  return tape.recording() && (inputs.requires_grad() || ...);
}

inline std::shared_ptr<std::vector<int>> valid_row_indices(
    const std::vector<uint8_t>& mask) {
  auto idx = std::make_shared<std::vector<int>>();
  idx->reserve(mask.size());
  for (size_t r = 0; r < mask.size(); ++r)
    if (mask[r]) idx->push_back(static_cast<int>(r));
  return idx;
}

template <typename T>
EMat<T> gather_rows(const T* src, int cols, const std::vector<int>& idx) {
  EMat<T> out(static_cast<int>(idx.size()), cols);
  for (size_t r = 0; r < idx.size(); ++r)
    out.row(static_cast<int>(r)) =
        CMatMap<T>(src + static_cast<size_t>(idx[r]) * cols, 1, cols);
  return out;
}

template <typename T>
void scatter_rows(const EMat<T>& src, T* dst, int cols,
                  const std::vector<int>& idx, bool accumulate) {
  for (size_t r = 0; r < idx.size(); ++r) {
    MatMap<T> row(dst + static_cast<size_t>(idx[r]) * cols, 1, cols);
    if (accumulate)
      row += src.row(static_cast<int>(r));
    else
      row = src.row(static_cast<int>(r));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcasting ops
// ---------------------------------------------------------------------------

// b broadcasts when it is a scalar or its shape is a suffix of a's.
template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const int na = a.size(), nb = b.size();
  bool suffix_ok = nb == 1;
  if (!suffix_ok && b.rank() <= a.rank()) {
    suffix_ok = true;
    for (int i = 0; i < b.rank(); ++i)
      if (b.dim(b.rank() - 1 - i) != a.dim(a.rank() - 1 - i)) suffix_ok = false;
  }
  if (!suffix_ok || na % nb != 0) shape_mismatch("add", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int i = 0; i < na; ++i) po[i] = pa[i] + pb[i % nb];
  if (detail::track(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, oc = out;
    tape.record([ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      if (ac.requires_grad()) {
        auto& da = ac.grad();
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (bc.requires_grad()) {
        auto& db = bc.grad();
        const size_t nb2 = db.size();
        for (size_t i = 0; i < dy.size(); ++i) db[i % nb2] += dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (detail::track(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, oc = out;
    tape.record([ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      if (ac.requires_grad()) {
        auto& da = ac.grad();
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (bc.requires_grad()) {
        auto& db = bc.grad();
        for (size_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::track(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, oc = out;
    tape.record([ac, bc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      if (ac.requires_grad()) {
        auto& da = ac.grad();
        for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bc.data()[i];
      }
      if (bc.requires_grad()) {
        auto& db = bc.grad();
        for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * ac.data()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(Tape<T>& tape, const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (detail::track(tape, a)) {
    out.set_requires_grad(true);
    Tensor<T> ac = a, oc = out;
    tape.record([ac, oc, c]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& da = ac.grad();
      for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int i = 0; i < x.size(); ++i)
    out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (size_t i = 0; i < dy.size(); ++i)
        if (oc.data()[i] > T(0)) dx[i] += dy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int i = 0; i < x.size(); ++i) {
    T v = x.data()[i];
    out.data()[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                              : std::exp(v) / (T(1) + std::exp(v));
  }
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (size_t i = 0; i < dy.size(); ++i) {
        T s = oc.data()[i];
        dx[i] += dy[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> tanh_op(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int i = 0; i < x.size(); ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (size_t i = 0; i < dy.size(); ++i) {
        T v = oc.data()[i];
        dx[i] += dy[i] * (T(1) - v * v);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.size()) shape_mismatch("reshape", x.shape(), shape);
  Tensor<T> out = Tensor<T>::from(shape, x.value());
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose_last2(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() < 2) shape_mismatch("transpose_last2", x.shape(), {});
  Shape s = x.shape();
  int m = s[s.size() - 2], n = s[s.size() - 1];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  int batches = x.size() / (m * n);
  Tensor<T> out = Tensor<T>::zeros(s);
  for (int b = 0; b < batches; ++b) {
    detail::CMatMap<T> in(x.data() + static_cast<size_t>(b) * m * n, m, n);
    detail::MatMap<T> o(out.data() + static_cast<size_t>(b) * m * n, n, m);
    o = in.transpose();
  }
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc, batches, m, n]() mutable {
      if (!oc.has_grad()) return;
      for (int b = 0; b < batches; ++b) {
        detail::CMatMap<T> dy(oc.grad().data() + static_cast<size_t>(b) * m * n,
                              n, m);
        detail::MatMap<T> dx(xc.grad().data() + static_cast<size_t>(b) * m * n,
                             m, n);
        dx += dy.transpose();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_lastdim(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw NumericError("concat: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int total_last = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    int last = l.back();
    l.pop_back();
    if (l != lead) shape_mismatch("concat", parts[0].shape(), p.shape());
    total_last += last;
  }
  Shape out_shape = lead;
  out_shape.push_back(total_last);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  int rows = numel(lead);
  int off = 0;
  for (const auto& p : parts) {
    int last = p.shape().back();
    for (int r = 0; r < rows; ++r)
      std::copy(p.data() + static_cast<size_t>(r) * last,
                p.data() + static_cast<size_t>(r + 1) * last,
                out.data() + static_cast<size_t>(r) * total_last + off);
    off += last;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape.recording() && any) {
    out.set_requires_grad(true);
    std::vector<Tensor<T>> pc = parts;
    Tensor<T> oc = out;
    tape.record([pc, oc, rows, total_last]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      int off2 = 0;
      for (auto& p : pc) {
        int last = p.shape().back();
        if (p.requires_grad()) {
          auto& dp = p.grad();
          for (int r = 0; r < rows; ++r)
            for (int j = 0; j < last; ++j)
              dp[static_cast<size_t>(r) * last + j] +=
                  dy[static_cast<size_t>(r) * total_last + off2 + j];
        }
        off2 += last;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_lastdim(Tape<T>& tape, const Tensor<T>& x, int offset,
                        int length) {
  int last = x.shape().back();
  if (offset < 0 || length < 1 || offset + length > last)
    throw NumericError("slice_lastdim: range [" + std::to_string(offset) +
                       "," + std::to_string(offset + length) +
                       ") outside last dim " + std::to_string(last));
  Shape s = x.shape();
  s.back() = length;
  int rows = x.size() / last;
  Tensor<T> out = Tensor<T>::zeros(s);
  for (int r = 0; r < rows; ++r)
    std::copy(x.data() + static_cast<size_t>(r) * last + offset,
              x.data() + static_cast<size_t>(r) * last + offset + length,
              out.data() + static_cast<size_t>(r) * length);
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc, rows, last, offset, length]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < length; ++j)
          dx[static_cast<size_t>(r) * last + offset + j] +=
              dy[static_cast<size_t>(r) * length + j];
    });
  }
  return out;
}

// x [B,L,E] -> [B,E] at sequence position t
template <typename T>
Tensor<T> slice_seq(Tape<T>& tape, const Tensor<T>& x, int t) {
  if (x.rank() != 3) shape_mismatch("slice_seq", x.shape(), {});
  int B = x.dim(0), L = x.dim(1), E = x.dim(2);
  if (t < 0 || t >= L)
    throw NumericError("slice_seq: position " + std::to_string(t) +
                       " outside length " + std::to_string(L));
  Tensor<T> out = Tensor<T>::zeros({B, E});
  for (int b = 0; b < B; ++b)
    std::copy(x.data() + (static_cast<size_t>(b) * L + t) * E,
              x.data() + (static_cast<size_t>(b) * L + t + 1) * E,
              out.data() + static_cast<size_t>(b) * E);
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc, B, L, E, t]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (int b = 0; b < B; ++b)
        for (int e = 0; e < E; ++e)
          dx[(static_cast<size_t>(b) * L + t) * E + e] +=
              dy[static_cast<size_t>(b) * E + e];
    });
  }
  return out;
}

// parts: L tensors [B,E] -> [B,L,E]
template <typename T>
Tensor<T> stack_seq(Tape<T>& tape, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw NumericError("stack_seq: no inputs");
  int B = parts[0].dim(0), E = parts[0].dim(1);
  int L = static_cast<int>(parts.size());
  for (const auto& p : parts)
    if (p.shape() != Shape{B, E})
      shape_mismatch("stack_seq", parts[0].shape(), p.shape());
  Tensor<T> out = Tensor<T>::zeros({B, L, E});
  for (int t = 0; t < L; ++t)
    for (int b = 0; b < B; ++b)
      std::copy(parts[static_cast<size_t>(t)].data() + static_cast<size_t>(b) * E,
                parts[static_cast<size_t>(t)].data() +
                    static_cast<size_t>(b + 1) * E,
                out.data() + (static_cast<size_t>(b) * L + t) * E);
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape.recording() && any) {
    out.set_requires_grad(true);
    std::vector<Tensor<T>> pc = parts;
    Tensor<T> oc = out;
    tape.record([pc, oc, B, L, E]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      for (int t = 0; t < L; ++t) {
        if (!pc[static_cast<size_t>(t)].requires_grad()) continue;
        auto& dp = pc[static_cast<size_t>(t)].grad();
        for (int b = 0; b < B; ++b)
          for (int e = 0; e < E; ++e)
            dp[static_cast<size_t>(b) * E + e] +=
                dy[(static_cast<size_t>(b) * L + t) * E + e];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (int i = 0; i < x.size(); ++i) acc += x.data()[i];
  out.data()[0] = acc;
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc]() mutable {
      if (!oc.has_grad()) return;
      T dy = oc.grad()[0];
      auto& dx = xc.grad();
      for (auto& v : dx) v += dy;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_lastdim(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() < 1) shape_mismatch("mean_lastdim", x.shape(), {});
  int last = x.shape().back();
  Shape s(x.shape().begin(), x.shape().end() - 1);
  if (s.empty()) s = {1};
  int rows = x.size() / last;
  Tensor<T> out = Tensor<T>::zeros(s);
  for (int r = 0; r < rows; ++r) {
    T acc = T(0);
    for (int j = 0; j < last; ++j)
      acc += x.data()[static_cast<size_t>(r) * last + j];
    out.data()[r] = acc / T(last);
  }
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc, rows, last]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < last; ++j)
          dx[static_cast<size_t>(r) * last + j] += dy[r] / T(last);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix multiplication
// ---------------------------------------------------------------------------

// Supports [m,k]x[k,n], [B,m,k]x[k,n] and [B,m,k]x[B,k,n]. For the
// 3D x 2D case an optional row mask (size B*m) restricts computation
// to valid rows; masked output rows are exactly zero.
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b,
                 const std::vector<uint8_t>* row_mask = nullptr) {
  if (a.rank() == 2 && b.rank() == 2) {
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) shape_mismatch("matmul", a.shape(), b.shape());
    Tensor<T> out = Tensor<T>::zeros({m, n});
    detail::as_matrix(out, m, n).noalias() =
        detail::as_matrix(a, m, k) * detail::as_matrix(b, k, n);
    if (detail::track(tape, a, b)) {
      out.set_requires_grad(true);
      Tensor<T> ac = a, bc = b, oc = out;
      tape.record([ac, bc, oc, m, k, n]() mutable {
        if (!oc.has_grad()) return;
        detail::CMatMap<T> dy(oc.grad().data(), m, n);
        if (ac.requires_grad())
          detail::grad_matrix(ac, m, k).noalias() +=
              dy * detail::as_matrix(bc, k, n).transpose();
        if (bc.requires_grad())
          detail::grad_matrix(bc, k, n).noalias() +=
              detail::as_matrix(ac, m, k).transpose() * dy;
      });
    }
    return out;
  }
  if (a.rank() == 3 && b.rank() == 2) {
    int B = a.dim(0), m = a.dim(1), k = a.dim(2);
    if (b.dim(0) != k) shape_mismatch("matmul", a.shape(), b.shape());
    int n = b.dim(1);
    int rows = B * m;
    if (row_mask && static_cast<int>(row_mask->size()) != rows)
      throw NumericError("matmul: row mask size " +
                         std::to_string(row_mask->size()) + " != rows " +
                         std::to_string(rows));
    Tensor<T> out = Tensor<T>::zeros({B, m, n});
    std::shared_ptr<std::vector<int>> idx;
    if (row_mask) {
      idx = detail::valid_row_indices(*row_mask);
      detail::EMat<T> packed = detail::gather_rows(a.data(), k, *idx);
      detail::EMat<T> prod = packed * detail::as_matrix(b, k, n);
      detail::scatter_rows(prod, out.data(), n, *idx, false);
    } else {
      detail::as_matrix(out, rows, n).noalias() =
          detail::as_matrix(a, rows, k) * detail::as_matrix(b, k, n);
    }
    if (detail::track(tape, a, b)) {
      out.set_requires_grad(true);
      Tensor<T> ac = a, bc = b, oc = out;
      tape.record([ac, bc, oc, rows, k, n, idx]() mutable {
        if (!oc.has_grad()) return;
        if (idx) {
          detail::EMat<T> dyp = detail::gather_rows(oc.grad().data(), n, *idx);
          if (ac.requires_grad()) {
            detail::EMat<T> dap =
                dyp * detail::as_matrix(bc, k, n).transpose();
            ac.grad();
            detail::scatter_rows(dap, ac.grad().data(), k, *idx, true);
          }
          if (bc.requires_grad()) {
            detail::EMat<T> ap = detail::gather_rows(ac.data(), k, *idx);
            detail::grad_matrix(bc, k, n).noalias() += ap.transpose() * dyp;
          }
        } else {
          detail::CMatMap<T> dy(oc.grad().data(), rows, n);
          if (ac.requires_grad())
            detail::grad_matrix(ac, rows, k).noalias() +=
                dy * detail::as_matrix(bc, k, n).transpose();
          if (bc.requires_grad())
            detail::grad_matrix(bc, k, n).noalias() +=
                detail::as_matrix(ac, rows, k).transpose() * dy;
        }
      });
    }
    return out;
  }
  if (a.rank() == 3 && b.rank() == 3) {
    int B = a.dim(0), m = a.dim(1), k = a.dim(2);
    if (b.dim(0) != B || b.dim(1) != k)
      shape_mismatch("matmul", a.shape(), b.shape());
    int n = b.dim(2);
    if (row_mask && static_cast<int>(row_mask->size()) != B * m)
      throw NumericError("matmul: row mask size " +
                         std::to_string(row_mask->size()) + " != rows " +
                         std::to_string(B * m));
    Tensor<T> out = Tensor<T>::zeros({B, m, n});
    std::shared_ptr<std::vector<uint8_t>> mask;
    if (row_mask) mask = std::make_shared<std::vector<uint8_t>>(*row_mask);
    for (int i = 0; i < B; ++i) {
      detail::CMatMap<T> bi(b.data() + static_cast<size_t>(i) * k * n, k, n);
      if (mask) {
        std::vector<int> idx;
        for (int r = 0; r < m; ++r)
          if ((*mask)[static_cast<size_t>(i * m + r)]) idx.push_back(r);
        detail::EMat<T> ap = detail::gather_rows(
            a.data() + static_cast<size_t>(i) * m * k, k, idx);
        detail::EMat<T> prod = ap * bi;
        detail::scatter_rows(prod, out.data() + static_cast<size_t>(i) * m * n,
                             n, idx, false);
      } else {
        detail::CMatMap<T> ai(a.data() + static_cast<size_t>(i) * m * k, m, k);
        detail::MatMap<T> oi(out.data() + static_cast<size_t>(i) * m * n, m, n);
        oi.noalias() = ai * bi;
      }
    }
    if (detail::track(tape, a, b)) {
      out.set_requires_grad(true);
      Tensor<T> ac = a, bc = b, oc = out;
      tape.record([ac, bc, oc, mask, B, m, k, n]() mutable {
        if (!oc.has_grad()) return;
        for (int i = 0; i < B; ++i) {
          detail::CMatMap<T> bi(bc.data() + static_cast<size_t>(i) * k * n, k,
                                n);
          if (mask) {
            std::vector<int> idx;
            for (int r = 0; r < m; ++r)
              if ((*mask)[static_cast<size_t>(i * m + r)]) idx.push_back(r);
            detail::EMat<T> dyp = detail::gather_rows(
                oc.grad().data() + static_cast<size_t>(i) * m * n, n, idx);
            if (ac.requires_grad()) {
              detail::EMat<T> dap = dyp * bi.transpose();
              ac.grad();
              detail::scatter_rows(dap,
                                   ac.grad().data() + static_cast<size_t>(i) * m * k,
                                   k, idx, true);
            }
            if (bc.requires_grad()) {
              detail::EMat<T> ap = detail::gather_rows(
                  ac.data() + static_cast<size_t>(i) * m * k, k, idx);
              detail::MatMap<T> db(bc.grad().data() + static_cast<size_t>(i) * k * n,
                                   k, n);
              db.noalias() += ap.transpose() * dyp;
            }
          } else {
            detail::CMatMap<T> dy(oc.grad().data() + static_cast<size_t>(i) * m * n,
                                  m, n);
            detail::CMatMap<T> ai(ac.data() + static_cast<size_t>(i) * m * k, m,
                                  k);
            if (ac.requires_grad()) {
              detail::MatMap<T> da(ac.grad().data() + static_cast<size_t>(i) * m * k,
                                   m, k);
              da.noalias() += dy * bi.transpose();
            }
            if (bc.requires_grad()) {
              detail::MatMap<T> db(bc.grad().data() + static_cast<size_t>(i) * k * n,
                                   k, n);
              db.noalias() += ai.transpose() * dy;
            }
          }
        }
      });
    }
    return out;
  }
  shape_mismatch("matmul", a.shape(), b.shape());
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

// ids laid out row-major [B*L]; output [B,L,E].
template <typename T>
Tensor<T> embedding_lookup(Tape<T>& tape, const Tensor<T>& table,
                           const std::vector<int>& ids, int batch, int len) {
  if (table.rank() != 2) shape_mismatch("embedding_lookup", table.shape(), {});
  int V = table.dim(0), E = table.dim(1);
  if (static_cast<int>(ids.size()) != batch * len)
    throw NumericError("embedding_lookup: ids size " +
                       std::to_string(ids.size()) + " != " +
                       std::to_string(batch * len));
  for (int id : ids)
    if (id < 0 || id >= V)
      throw NumericError("IdOutOfRange: token id " + std::to_string(id) +
                         " outside vocabulary of " + std::to_string(V));
  Tensor<T> out = Tensor<T>::zeros({batch, len, E});
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy(table.data() + static_cast<size_t>(ids[r]) * E,
              table.data() + static_cast<size_t>(ids[r] + 1) * E,
              out.data() + r * E);
  if (detail::track(tape, table)) {
    out.set_requires_grad(true);
    Tensor<T> tc = table, oc = out;
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    tape.record([tc, oc, ids_copy, E]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dt = tc.grad();
      for (size_t r = 0; r < ids_copy->size(); ++r) {
        T* dst = dt.data() + static_cast<size_t>((*ids_copy)[r]) * E;
        const T* src = dy.data() + r * E;
        for (int e = 0; e < E; ++e) dst[e] += src[e];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence masking
// ---------------------------------------------------------------------------

// valid has one byte per leading row group; the trailing lane is
// numel / valid.size(). Masked lanes become exactly zero.
template <typename T>
Tensor<T> zero_masked(Tape<T>& tape, const Tensor<T>& x,
                      const std::vector<uint8_t>& valid) {
  if (valid.empty() || x.size() % static_cast<int>(valid.size()) != 0)
    throw NumericError("zero_masked: mask size " +
                       std::to_string(valid.size()) +
                       " does not divide tensor " + shape_str(x.shape()));
  int lane = x.size() / static_cast<int>(valid.size());
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t r = 0; r < valid.size(); ++r)
    if (valid[r])
      std::copy(x.data() + r * lane, x.data() + (r + 1) * lane,
                out.data() + r * lane);
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    auto mask = std::make_shared<std::vector<uint8_t>>(valid);
    tape.record([xc, oc, mask, lane]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (size_t r = 0; r < mask->size(); ++r)
        if ((*mask)[r])
          for (int j = 0; j < lane; ++j)
            dx[r * lane + j] += dy[r * lane + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax with additive padding mask
// ---------------------------------------------------------------------------

// For 3D x [B,q,k] the mask (size B*k) marks valid key lanes shared by
// all query rows of a batch item; for 2D x it matches x element-wise.
// Masked lanes get -inf before the softmax and 0 after; fully masked
// rows output all zeros.
template <typename T>
Tensor<T> softmax_lastdim(Tape<T>& tape, const Tensor<T>& x,
                          const std::vector<uint8_t>* valid = nullptr) {
  int last = x.shape().back();
  int rows = x.size() / last;
  int rows_per_mask = 1;
  if (valid) {
    if (x.rank() == 3 &&
        static_cast<int>(valid->size()) == x.dim(0) * x.dim(2))
      rows_per_mask = x.dim(1);
    else if (static_cast<int>(valid->size()) != rows * last)
      throw NumericError("softmax_lastdim: mask size " +
                         std::to_string(valid->size()) + " unusable for " +
                         shape_str(x.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int r = 0; r < rows; ++r) {
    const T* in = x.data() + static_cast<size_t>(r) * last;
    T* o = out.data() + static_cast<size_t>(r) * last;
    const uint8_t* m = nullptr;
    if (valid) m = valid->data() + static_cast<size_t>(r / rows_per_mask) * last;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < last; ++j)
      if (!m || m[j]) mx = std::max(mx, in[j]);
    if (mx == -std::numeric_limits<T>::infinity()) continue;  // fully masked
    T denom = T(0);
    for (int j = 0; j < last; ++j) {
      if (!m || m[j]) {
        o[j] = std::exp(in[j] - mx);
        denom += o[j];
      }
    }
    for (int j = 0; j < last; ++j) o[j] /= denom;
  }
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc, rows, last]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (int r = 0; r < rows; ++r) {
        const T* y = oc.data() + static_cast<size_t>(r) * last;
        const T* g = dy.data() + static_cast<size_t>(r) * last;
        T dot = T(0);
        for (int j = 0; j < last; ++j) dot += g[j] * y[j];
        for (int j = 0; j < last; ++j)
          dx[static_cast<size_t>(r) * last + j] += (g[j] - dot) * y[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  int H = x.shape().back();
  if (gamma.shape() != Shape{H} || beta.shape() != Shape{H})
    shape_mismatch("layer_norm", x.shape(), gamma.shape());
  int rows = x.size() / H;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const T* in = x.data() + static_cast<size_t>(r) * H;
    T mu = T(0);
    for (int j = 0; j < H; ++j) mu += in[j];
    mu /= T(H);
    T var = T(0);
    for (int j = 0; j < H; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= T(H);
    T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[static_cast<size_t>(r)] = rs;
    T* o = out.data() + static_cast<size_t>(r) * H;
    for (int j = 0; j < H; ++j) {
      T xh = (in[j] - mu) * rs;
      (*xhat)[static_cast<size_t>(r) * H + j] = xh;
      o[j] = xh * gamma.data()[j] + beta.data()[j];
    }
  }
  if (detail::track(tape, x, gamma, beta)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, gc = gamma, bc = beta, oc = out;
    tape.record([xc, gc, bc, oc, xhat, rstd, rows, H]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      for (int r = 0; r < rows; ++r) {
        const T* g = dy.data() + static_cast<size_t>(r) * H;
        const T* xh = xhat->data() + static_cast<size_t>(r) * H;
        if (gc.requires_grad()) {
          auto& dgamma = gc.grad();
          for (int j = 0; j < H; ++j) dgamma[j] += g[j] * xh[j];
        }
        if (bc.requires_grad()) {
          auto& dbeta = bc.grad();
          for (int j = 0; j < H; ++j) dbeta[j] += g[j];
        }
        if (xc.requires_grad()) {
          T m1 = T(0), m2 = T(0);
          for (int j = 0; j < H; ++j) {
            T dxh = g[j] * gc.data()[j];
            m1 += dxh;
            m2 += dxh * xh[j];
          }
          m1 /= T(H);
          m2 /= T(H);
          auto& dx = xc.grad();
          T rs = (*rstd)[static_cast<size_t>(r)];
          for (int j = 0; j < H; ++j) {
            T dxh = g[j] * gc.data()[j];
            dx[static_cast<size_t>(r) * H + j] +=
                rs * (dxh - m1 - xh[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling at train time)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double rate, bool train,
                  Rng* rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw NumericError("dropout: rate " + std::to_string(rate) +
                       " outside [0,1)");
  if (!train || rate == 0.0) return x;
  if (!rng) throw NumericError("dropout: train mode needs an RNG");
  T scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<uint8_t>>(x.value().size());
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (size_t i = 0; i < mask->size(); ++i) {
    (*mask)[i] = rng->bernoulli(rate) ? 0 : 1;
    if ((*mask)[i]) out.data()[i] = x.data()[i] * scale;
  }
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc, mask, scale]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (size_t i = 0; i < dy.size(); ++i)
        if ((*mask)[i]) dx[i] += dy[i] * scale;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1-D convolution along the sequence axis, same padding
// ---------------------------------------------------------------------------

// x [B,L,E], w [W,E,H], bias [H] -> [B,L,H]. The kernel spans all E
// input channels. With a row mask, masked input rows are treated as
// zero and masked output rows stay exactly zero (no bias).
template <typename T>
Tensor<T> conv1d_same(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                      const Tensor<T>& bias,
                      const std::vector<uint8_t>* row_mask = nullptr) {
  if (x.rank() != 3 || w.rank() != 3) shape_mismatch("conv1d_same", x.shape(), w.shape());
  int B = x.dim(0), L = x.dim(1), E = x.dim(2);
  int W = w.dim(0), H = w.dim(2);
  if (w.dim(1) != E) shape_mismatch("conv1d_same", x.shape(), w.shape());
  if (bias.shape() != Shape{H}) shape_mismatch("conv1d_same", w.shape(), bias.shape());
  if (W % 2 == 0 || W < 1)
    throw NumericError("conv1d_same: width must be odd, got " +
                       std::to_string(W));
  if (row_mask && static_cast<int>(row_mask->size()) != B * L)
    throw NumericError("conv1d_same: row mask size mismatch");
  int c = W / 2;

  // masked copy of the input; shared with the backward closure
  auto xm = std::make_shared<Tensor<T>>(Tensor<T>::zeros({B, L, E}));
  if (row_mask) {
    for (int r = 0; r < B * L; ++r)
      if ((*row_mask)[static_cast<size_t>(r)])
        std::copy(x.data() + static_cast<size_t>(r) * E,
                  x.data() + static_cast<size_t>(r + 1) * E,
                  xm->data() + static_cast<size_t>(r) * E);
  } else {
    std::copy(x.data(), x.data() + x.size(), xm->data());
  }

  Tensor<T> out = Tensor<T>::zeros({B, L, H});
  for (int r = 0; r < B * L; ++r) {
    if (row_mask && !(*row_mask)[static_cast<size_t>(r)]) continue;
    std::copy(bias.data(), bias.data() + H,
              out.data() + static_cast<size_t>(r) * H);
  }
  for (int b = 0; b < B; ++b) {
    detail::CMatMap<T> xb(xm->data() + static_cast<size_t>(b) * L * E, L, E);
    detail::MatMap<T> ob(out.data() + static_cast<size_t>(b) * L * H, L, H);
    for (int k = 0; k < W; ++k) {
      int s = k - c;  // output row p reads input row p+s
      int p0 = std::max(0, -s);
      int p1 = std::min(L, L - s);
      if (p1 <= p0) continue;
      detail::CMatMap<T> wk(w.data() + static_cast<size_t>(k) * E * H, E, H);
      ob.middleRows(p0, p1 - p0).noalias() +=
          xb.middleRows(p0 + s, p1 - p0) * wk;
    }
  }
  if (row_mask) {
    for (int r = 0; r < B * L; ++r)
      if (!(*row_mask)[static_cast<size_t>(r)])
        std::fill(out.data() + static_cast<size_t>(r) * H,
                  out.data() + static_cast<size_t>(r + 1) * H, T(0));
  }

  if (detail::track(tape, x, w, bias)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = bias, oc = out;
    std::shared_ptr<std::vector<uint8_t>> mask;
    if (row_mask) mask = std::make_shared<std::vector<uint8_t>>(*row_mask);
    tape.record([xc, wc, bc, oc, xm, mask, B, L, E, W, H, c]() mutable {
      if (!oc.has_grad()) return;
      // masked output rows carry no gradient by contract
      std::vector<T> dout = oc.grad();
      if (mask) {
        for (int r = 0; r < B * L; ++r)
          if (!(*mask)[static_cast<size_t>(r)])
            std::fill(dout.begin() + static_cast<size_t>(r) * H,
                      dout.begin() + static_cast<size_t>(r + 1) * H, T(0));
      }
      if (bc.requires_grad()) {
        auto& db = bc.grad();
        for (int r = 0; r < B * L; ++r)
          for (int h = 0; h < H; ++h)
            db[static_cast<size_t>(h)] += dout[static_cast<size_t>(r) * H + h];
      }
      std::vector<T> dxm;
      if (xc.requires_grad()) dxm.assign(static_cast<size_t>(B) * L * E, T(0));
      for (int b = 0; b < B; ++b) {
        detail::CMatMap<T> dob(dout.data() + static_cast<size_t>(b) * L * H, L,
                               H);
        detail::CMatMap<T> xb(xm->data() + static_cast<size_t>(b) * L * E, L,
                              E);
        for (int k = 0; k < W; ++k) {
          int s = k - c;
          int p0 = std::max(0, -s);
          int p1 = std::min(L, L - s);
          if (p1 <= p0) continue;
          if (wc.requires_grad()) {
            detail::MatMap<T> dwk(wc.grad().data() + static_cast<size_t>(k) * E * H,
                                  E, H);
            dwk.noalias() += xb.middleRows(p0 + s, p1 - p0).transpose() *
                             dob.middleRows(p0, p1 - p0);
          }
          if (xc.requires_grad()) {
            detail::CMatMap<T> wk(wc.data() + static_cast<size_t>(k) * E * H, E,
                                  H);
            detail::MatMap<T> dxb(dxm.data() + static_cast<size_t>(b) * L * E,
                                  L, E);
            dxb.middleRows(p0 + s, p1 - p0).noalias() +=
                dob.middleRows(p0, p1 - p0) * wk.transpose();
          }
        }
      }
      if (xc.requires_grad()) {
        auto& dx = xc.grad();
        for (int r = 0; r < B * L; ++r) {
          if (mask && !(*mask)[static_cast<size_t>(r)]) continue;
          for (int e = 0; e < E; ++e)
            dx[static_cast<size_t>(r) * E + e] +=
                dxm[static_cast<size_t>(r) * E + e];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masked max over the last dimension
// ---------------------------------------------------------------------------

// x [N,L], valid [N*L] -> [N]. Rows with no valid lane fall back to a
// max over all lanes so fully padded inputs stay well-defined.
template <typename T>
Tensor<T> masked_max_lastdim(Tape<T>& tape, const Tensor<T>& x,
                             const std::vector<uint8_t>& valid) {
  int last = x.shape().back();
  int rows = x.size() / last;
  if (static_cast<int>(valid.size()) != x.size())
    throw NumericError("masked_max_lastdim: mask size mismatch");
  Shape s(x.shape().begin(), x.shape().end() - 1);
  if (s.empty()) s = {1};
  Tensor<T> out = Tensor<T>::zeros(s);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const T* in = x.data() + static_cast<size_t>(r) * last;
    const uint8_t* m = valid.data() + static_cast<size_t>(r) * last;
    int best = -1;
    for (int j = 0; j < last; ++j)
      if (m[j] && (best < 0 || in[j] > in[best])) best = j;
    if (best < 0) {
      best = 0;
      for (int j = 1; j < last; ++j)
        if (in[j] > in[best]) best = j;
    }
    (*argmax)[static_cast<size_t>(r)] = best;
    out.data()[r] = in[best];
  }
  if (detail::track(tape, x)) {
    out.set_requires_grad(true);
    Tensor<T> xc = x, oc = out;
    tape.record([xc, oc, argmax, rows, last]() mutable {
      if (!oc.has_grad()) return;
      const auto& dy = oc.grad();
      auto& dx = xc.grad();
      for (int r = 0; r < rows; ++r)
        dx[static_cast<size_t>(r) * last + (*argmax)[static_cast<size_t>(r)]] +=
            dy[r];
    });
  }
  return out;
}

}  // namespace samtl
