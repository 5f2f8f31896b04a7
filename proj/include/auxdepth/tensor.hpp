#pragma once

// Dense tensors with reverse-mode differentiation. The op set is exactly what
// the detection pipeline needs; there is no general broadcasting beyond
// leading batch dimensions in matmul. All reductions run in a fixed serial
// order so forward results are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "auxdepth/common.hpp"

namespace auxdepth {

template <typename S>
class Tape;

namespace detail {

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily; same length as value when present
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // id of the tape that recorded the producing op

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

inline std::uint64_t next_tape_id() {
  static std::uint64_t counter = 0;  // tape creation is not concurrent per thread
  return ++counter;
}

template <typename S>
inline Tape<S>*& active_tape() {
  thread_local Tape<S>* tape = nullptr;
  return tape;
}

}  // namespace detail

template <typename S>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<detail::Node<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(static_cast<std::size_t>(numel_of(t.node_->shape)), v);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (numel_of(shape) != static_cast<Index>(data.size()))
      fail(Error::Kind::Dimension, "tensor: " + std::to_string(data.size()) +
                                       " values do not fill shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<detail::Node<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S v) { return filled(Shape{}, v); }

  /// Uniform fill in [lo, hi); draws in double so float and double builds
  /// see the same sequence.
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->value) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index extent(Index axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  Index numel() const { return static_cast<Index>(node_->value.size()); }

  S* data() { return node_->value.data(); }
  const S* data() const { return node_->value.data(); }
  std::vector<S>& values() { return node_->value; }
  const std::vector<S>& values() const { return node_->value; }

  S operator[](Index i) const { return node_->value[static_cast<std::size_t>(i)]; }
  S& operator[](Index i) { return node_->value[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  const std::vector<S>& grad() const {
    if (node_->grad.size() != node_->value.size())
      fail(Error::Kind::Tape, "tensor has no gradient; run backward first");
    return node_->grad;
  }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), S(0));
  }

  S value() const {
    if (numel() != 1)
      fail(Error::Kind::Contract, "value(): tensor " + shape_str(shape()) + " is not scalar");
    return node_->value[0];
  }

  using MatrixMap =
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  MatrixMap matrix(Index rows, Index cols) { return MatrixMap(data(), rows, cols); }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    return ConstMatrixMap(data(), rows, cols);
  }

  detail::Node<S>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

/// Ordered record of executed ops. Construction makes the tape active on the
/// current thread; destruction restores the previous one. One backward pass
/// per tape; each training step owns its tape exclusively.
template <typename S>
class Tape {
 public:
  Tape() : id_(detail::next_tape_id()), prev_(detail::active_tape<S>()) {
    detail::active_tape<S>() = this;
  }
  ~Tape() { detail::active_tape<S>() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return detail::active_tape<S>(); }

  std::uint64_t id() const { return id_; }
  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }
  std::size_t size() const { return records_.size(); }

  /// Populates dLoss/dLeaf for every requires_grad tensor reachable from
  /// `loss`. Gradients accumulate; call zero_grad on leaves between steps.
  void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
      fail(Error::Kind::Contract,
           "backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (loss.node()->tape_id != id_)
      fail(Error::Kind::Tape, "backward: loss was not produced under this tape");
    if (consumed_)
      fail(Error::Kind::Tape, "backward: tape already consumed; build a fresh tape");
    consumed_ = true;
    loss.node()->ensure_grad();
    loss.node()->grad[0] = S(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  }

 private:
  std::uint64_t id_;
  std::vector<std::function<void()>> records_;
  Tape* prev_;
  bool consumed_ = false;
};

namespace detail {

template <typename S>
inline void check_finite(const Tensor<S>& t, const char* op) {
#ifndef NDEBUG
  for (S v : t.values())
    if (!std::isfinite(static_cast<double>(v)))
      fail(Error::Kind::Contract, std::string(op) + ": non-finite value in result");
#else
  (void)t;
  (void)op;
#endif
}

template <typename S>
inline bool record_op(Tensor<S>& out, std::initializer_list<const Tensor<S>*> inputs,
                      std::function<void()> backward_fn) {
  Tape<S>* tape = Tape<S>::active();
  if (!tape) return false;
  bool any = false;
  for (const Tensor<S>* t : inputs) any = any || t->requires_grad();
  if (!any) return false;
  out.node()->requires_grad = true;
  out.node()->tape_id = tape->id();
  tape->record(std::move(backward_fn));
  return true;
}

inline Index axis_index(Index axis, Index rank, const char* op) {
  Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    fail(Error::Kind::Bounds,
         std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
             std::to_string(rank));
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S, typename FwdFn, typename DerivFn>
Tensor<S> unary_op(const Tensor<S>& x, const char* name, FwdFn fwd, DerivFn deriv) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const Index n = x.numel();
  const S* xv = x.data();
  S* ov = out.data();
  parallel_for(n, [&](Index i) { ov[i] = fwd(xv[i]); });
  detail::check_finite(out, name);
  auto xn = x.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x}, [xn, on, deriv] {
    on->ensure_grad();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->value.size(); ++i)
      xn->grad[i] += on->grad[i] * deriv(xn->value[i]);
  });
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary_op(
      x, "relu", [](S v) { return v > S(0) ? v : S(0); },
      [](S v) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> elu(const Tensor<S>& x) {
  return unary_op(
      x, "elu", [](S v) { return v > S(0) ? v : std::expm1(v); },
      [](S v) { return v > S(0) ? S(1) : std::exp(v); });
}

/// ELU(x) + 1; strictly positive for all finite x, so it can serve as the
/// positive feature map of linear attention.
template <typename S>
Tensor<S> elu_plus_one(const Tensor<S>& x) {
  return unary_op(
      x, "elu_plus_one", [](S v) { return v > S(0) ? v + S(1) : std::exp(v); },
      [](S v) { return v > S(0) ? S(1) : std::exp(v); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary_op(
      x, "sigmoid",
      [](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S v) {
        S y;
        if (v >= S(0))
          y = S(1) / (S(1) + std::exp(-v));
        else {
          const S e = std::exp(v);
          y = e / (S(1) + e);
        }
        return y * (S(1) - y);
      });
}

template <typename S>
Tensor<S> log_op(const Tensor<S>& x) {
  return unary_op(
      x, "log", [](S v) { return std::log(v); }, [](S v) { return S(1) / v; });
}

template <typename S>
Tensor<S> reciprocal(const Tensor<S>& x) {
  return unary_op(
      x, "reciprocal", [](S v) { return S(1) / v; },
      [](S v) { return S(-1) / (v * v); });
}

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& x, S c) {
  return unary_op(
      x, "scalar_mul", [c](S v) { return v * c; }, [c](S) { return c; });
}

template <typename S>
Tensor<S> scalar_add(const Tensor<S>& x, S c) {
  return unary_op(
      x, "scalar_add", [c](S v) { return v + c; }, [](S) { return S(1); });
}

/// Gradient passes through strictly inside [lo, hi] and is zero outside.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return unary_op(
      x, "clamp", [lo, hi](S v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](S v) { return (v > lo && v < hi) ? S(1) : S(0); });
}

namespace detail {

template <typename S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    fail(Error::Kind::Dimension, std::string(op) + ": shape " + shape_str(a.shape()) +
                                     " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const Index n = a.numel();
  const S* av = a.data();
  const S* bv = b.data();
  S* ov = out.data();
  parallel_for(n, [&](Index i) { ov[i] = av[i] + bv[i]; });
  detail::check_finite(out, "add");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&a, &b}, [an, bn, on] {
    on->ensure_grad();
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->value.size(); ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < bn->value.size(); ++i) bn->grad[i] += on->grad[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const Index n = a.numel();
  const S* av = a.data();
  const S* bv = b.data();
  S* ov = out.data();
  parallel_for(n, [&](Index i) { ov[i] = av[i] - bv[i]; });
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&a, &b}, [an, bn, on] {
    on->ensure_grad();
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->value.size(); ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < bn->value.size(); ++i) bn->grad[i] -= on->grad[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const Index n = a.numel();
  const S* av = a.data();
  const S* bv = b.data();
  S* ov = out.data();
  parallel_for(n, [&](Index i) { ov[i] = av[i] * bv[i]; });
  detail::check_finite(out, "mul");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&a, &b}, [an, bn, on] {
    on->ensure_grad();
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->value.size(); ++i)
        an->grad[i] += on->grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < bn->value.size(); ++i)
        bn->grad[i] += on->grad[i] * an->value[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape new_shape) {
  if (numel_of(new_shape) != x.numel())
    fail(Error::Kind::Dimension, "reshape: " + shape_str(x.shape()) + " -> " +
                                     shape_str(new_shape) + " changes element count");
  Tensor<S> out = Tensor<S>::from(std::move(new_shape), x.values());
  auto xn = x.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x}, [xn, on] {
    on->ensure_grad();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += on->grad[i];
  });
  return out;
}

namespace detail {

inline std::vector<Index> row_major_strides(const Shape& shape) {
  std::vector<Index> strides(shape.size());
  Index s = 1;
  for (Index i = static_cast<Index>(shape.size()) - 1; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] = s;
    s *= shape[static_cast<std::size_t>(i)];
  }
  return strides;
}

// For each output flat index, the corresponding input flat index under the
// given axis permutation.
inline std::vector<Index> permute_map(const Shape& in_shape, const std::vector<Index>& axes) {
  const std::size_t r = in_shape.size();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i)
    out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
  const auto in_strides = row_major_strides(in_shape);
  const Index n = numel_of(in_shape);
  std::vector<Index> map(static_cast<std::size_t>(n));
  std::vector<Index> idx(r, 0);
  for (Index o = 0; o < n; ++o) {
    Index src = 0;
    for (std::size_t i = 0; i < r; ++i)
      src += idx[i] * in_strides[static_cast<std::size_t>(axes[i])];
    map[static_cast<std::size_t>(o)] = src;
    for (Index i = static_cast<Index>(r) - 1; i >= 0; --i) {
      auto ui = static_cast<std::size_t>(i);
      if (++idx[ui] < out_shape[ui]) break;
      idx[ui] = 0;
    }
  }
  return map;
}

}  // namespace detail

template <typename S>
Tensor<S> permute(const Tensor<S>& x, std::vector<Index> axes) {
  const Index r = x.rank();
  if (static_cast<Index>(axes.size()) != r)
    fail(Error::Kind::Dimension, "permute: need " + std::to_string(r) + " axes");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (Index a : axes) {
    if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)])
      fail(Error::Kind::Dimension, "permute: invalid axis list");
    seen[static_cast<std::size_t>(a)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i)
    out_shape[static_cast<std::size_t>(i)] = x.extent(axes[static_cast<std::size_t>(i)]);
  const auto map = detail::permute_map(x.shape(), axes);
  Tensor<S> out = Tensor<S>::zeros(std::move(out_shape));
  const S* xv = x.data();
  S* ov = out.data();
  parallel_for(x.numel(), [&](Index o) { ov[o] = xv[map[static_cast<std::size_t>(o)]]; });
  auto xn = x.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x}, [xn, on, map] {
    on->ensure_grad();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t o = 0; o < map.size(); ++o)
      xn->grad[static_cast<std::size_t>(map[o])] += on->grad[o];
  });
  return out;
}

template <typename S>
Tensor<S> transpose_last2(const Tensor<S>& x) {
  const Index r = x.rank();
  if (r < 2) fail(Error::Kind::Dimension, "transpose_last2: rank must be >= 2");
  std::vector<Index> axes(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) axes[static_cast<std::size_t>(i)] = i;
  std::swap(axes[static_cast<std::size_t>(r - 2)], axes[static_cast<std::size_t>(r - 1)]);
  return permute(x, axes);
}

/// Concatenate along axis 0: [C1, rest...] + [C2, rest...] -> [C1+C2, rest...].
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != b.rank() || a.rank() < 1)
    fail(Error::Kind::Dimension, "concat_channels: rank mismatch " +
                                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (Index i = 1; i < a.rank(); ++i)
    if (a.extent(i) != b.extent(i))
      fail(Error::Kind::Dimension, "concat_channels: trailing extents differ: " +
                                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Shape out_shape = a.shape();
  out_shape[0] += b.extent(0);
  Tensor<S> out = Tensor<S>::zeros(std::move(out_shape));
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  const std::size_t na = static_cast<std::size_t>(a.numel());
  detail::record_op(out, {&a, &b}, [an, bn, on, na] {
    on->ensure_grad();
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < na; ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < bn->value.size(); ++i) bn->grad[i] += on->grad[i + na];
    }
  });
  return out;
}

/// out[m, :] = x[rows[m], :]
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<Index> rows) {
  if (x.rank() != 2) fail(Error::Kind::Dimension, "gather_rows: expected rank-2 input");
  const Index cols = x.extent(1);
  for (Index r : rows)
    if (r < 0 || r >= x.extent(0))
      fail(Error::Kind::Bounds, "gather_rows: row " + std::to_string(r) + " out of range");
  Tensor<S> out = Tensor<S>::zeros({static_cast<Index>(rows.size()), cols});
  for (std::size_t m = 0; m < rows.size(); ++m)
    std::copy(x.data() + rows[m] * cols, x.data() + (rows[m] + 1) * cols,
              out.data() + static_cast<Index>(m) * cols);
  auto xn = x.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x}, [xn, on, rows, cols] {
    on->ensure_grad();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t m = 0; m < rows.size(); ++m)
      for (Index c = 0; c < cols; ++c)
        xn->grad[static_cast<std::size_t>(rows[m] * cols + c)] +=
            on->grad[m * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.values()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  auto xn = x.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x}, [xn, on] {
    on->ensure_grad();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const S g = on->grad[0];
    for (std::size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += g;
  });
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return scalar_mul(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

template <typename S>
Tensor<S> sum_axis(const Tensor<S>& x, Index axis) {
  const Index a = detail::axis_index(axis, x.rank(), "sum_axis");
  Shape out_shape;
  for (Index i = 0; i < x.rank(); ++i)
    if (i != a) out_shape.push_back(x.extent(i));
  Index outer = 1, inner = 1;
  for (Index i = 0; i < a; ++i) outer *= x.extent(i);
  for (Index i = a + 1; i < x.rank(); ++i) inner *= x.extent(i);
  const Index n = x.extent(a);
  Tensor<S> out = Tensor<S>::zeros(std::move(out_shape));
  const S* xv = x.data();
  S* ov = out.data();
  for (Index o = 0; o < outer; ++o)
    for (Index i = 0; i < inner; ++i) {
      S acc = S(0);
      for (Index j = 0; j < n; ++j) acc += xv[(o * n + j) * inner + i];
      ov[o * inner + i] = acc;
    }
  auto xn = x.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x}, [xn, on, outer, inner, n] {
    on->ensure_grad();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < inner; ++i) {
        const S g = on->grad[static_cast<std::size_t>(o * inner + i)];
        for (Index j = 0; j < n; ++j)
          xn->grad[static_cast<std::size_t>((o * n + j) * inner + i)] += g;
      }
  });
  return out;
}

/// out[..., j] = x[..., j] * s[...] where s has x's shape minus the last axis.
template <typename S>
Tensor<S> scale_rows(const Tensor<S>& x, const Tensor<S>& s) {
  if (x.rank() < 1) fail(Error::Kind::Dimension, "scale_rows: rank-0 input");
  Shape expect(x.shape().begin(), x.shape().end() - 1);
  if (s.shape() != expect)
    fail(Error::Kind::Dimension, "scale_rows: scale shape " + shape_str(s.shape()) +
                                     " does not match rows of " + shape_str(x.shape()));
  const Index cols = x.extent(x.rank() - 1);
  const Index rows = x.numel() / cols;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* xv = x.data();
  const S* sv = s.data();
  S* ov = out.data();
  parallel_for(rows, [&](Index r) {
    for (Index c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] * sv[r];
  });
  auto xn = x.node_ptr();
  auto sn = s.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x, &s}, [xn, sn, on, rows, cols] {
    on->ensure_grad();
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
          xn->grad[static_cast<std::size_t>(r * cols + c)] +=
              on->grad[static_cast<std::size_t>(r * cols + c)] *
              sn->value[static_cast<std::size_t>(r)];
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      for (Index r = 0; r < rows; ++r) {
        S acc = S(0);
        for (Index c = 0; c < cols; ++c)
          acc += on->grad[static_cast<std::size_t>(r * cols + c)] *
                 xn->value[static_cast<std::size_t>(r * cols + c)];
        sn->grad[static_cast<std::size_t>(r)] += acc;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

/// Max-subtracted softmax along `axis`.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x, Index axis) {
  const Index a = detail::axis_index(axis, x.rank(), "softmax");
  Index outer = 1, inner = 1;
  for (Index i = 0; i < a; ++i) outer *= x.extent(i);
  for (Index i = a + 1; i < x.rank(); ++i) inner *= x.extent(i);
  const Index n = x.extent(a);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* xv = x.data();
  S* ov = out.data();
  parallel_for(outer * inner, [&](Index oi) {
    const Index o = oi / inner;
    const Index i = oi % inner;
    const Index base = o * n * inner + i;
    S mx = xv[base];
    for (Index j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
    S denom = S(0);
    for (Index j = 0; j < n; ++j) {
      const S e = std::exp(xv[base + j * inner] - mx);
      ov[base + j * inner] = e;
      denom += e;
    }
    const S inv = S(1) / denom;
    for (Index j = 0; j < n; ++j) ov[base + j * inner] *= inv;
  });
  auto xn = x.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x}, [xn, on, outer, inner, n] {
    on->ensure_grad();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * n * inner + i;
        S dot = S(0);
        for (Index j = 0; j < n; ++j)
          dot += on->grad[static_cast<std::size_t>(base + j * inner)] *
                 on->value[static_cast<std::size_t>(base + j * inner)];
        for (Index j = 0; j < n; ++j) {
          const std::size_t k = static_cast<std::size_t>(base + j * inner);
          xn->grad[k] += on->value[k] * (on->grad[k] - dot);
        }
      }
  });
  return out;
}

/// Last-axis layer normalization: per position, zero mean and unit variance
/// before the affine (gain, bias) map.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps) {
  if (eps <= S(0)) fail(Error::Kind::Config, "layer_norm: eps must be positive");
  const Index c = x.extent(x.rank() - 1);
  if (gain.shape() != Shape{c} || bias.shape() != Shape{c})
    fail(Error::Kind::Dimension, "layer_norm: gain/bias must have shape [" +
                                     std::to_string(c) + "]");
  const Index rows = x.numel() / c;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  std::vector<S> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<S> inv_sigma(static_cast<std::size_t>(rows));
  const S* xv = x.data();
  const S* gv = gain.data();
  const S* bv = bias.data();
  S* ov = out.data();
  parallel_for(rows, [&](Index r) {
    const S* row = xv + r * c;
    S mean = S(0);
    for (Index j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<S>(c);
    S var = S(0);
    for (Index j = 0; j < c; ++j) {
      const S d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<S>(c);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(r)] = inv;
    for (Index j = 0; j < c; ++j) {
      const S h = (row[j] - mean) * inv;
      xhat[static_cast<std::size_t>(r * c + j)] = h;
      ov[r * c + j] = gv[j] * h + bv[j];
    }
  });
  detail::check_finite(out, "layer_norm");
  auto xn = x.node_ptr();
  auto gn = gain.node_ptr();
  auto bn = bias.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x, &gain, &bias},
                    [xn, gn, bn, on, rows, c, xhat = std::move(xhat),
                     inv_sigma = std::move(inv_sigma)] {
    on->ensure_grad();
    for (Index r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r * c);
      if (xn->requires_grad) {
        xn->ensure_grad();
        S m1 = S(0), m2 = S(0);
        for (Index j = 0; j < c; ++j) {
          const S gh = on->grad[base + static_cast<std::size_t>(j)] *
                       gn->value[static_cast<std::size_t>(j)];
          m1 += gh;
          m2 += gh * xhat[base + static_cast<std::size_t>(j)];
        }
        m1 /= static_cast<S>(c);
        m2 /= static_cast<S>(c);
        const S inv = inv_sigma[static_cast<std::size_t>(r)];
        for (Index j = 0; j < c; ++j) {
          const S gh = on->grad[base + static_cast<std::size_t>(j)] *
                       gn->value[static_cast<std::size_t>(j)];
          xn->grad[base + static_cast<std::size_t>(j)] +=
              (gh - m1 - xhat[base + static_cast<std::size_t>(j)] * m2) * inv;
        }
      }
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (Index j = 0; j < c; ++j)
          gn->grad[static_cast<std::size_t>(j)] +=
              on->grad[base + static_cast<std::size_t>(j)] *
              xhat[base + static_cast<std::size_t>(j)];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (Index j = 0; j < c; ++j)
          bn->grad[static_cast<std::size_t>(j)] += on->grad[base + static_cast<std::size_t>(j)];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

struct BatchLayout {
  Shape out_batch;        // broadcast batch shape
  std::vector<Index> a_offsets;  // per flat batch index, matrix offset into a
  std::vector<Index> b_offsets;
};

inline BatchLayout broadcast_batches(const Shape& a, const Shape& b, Index m, Index k,
                                     Index n) {
  const std::size_t ra = a.size() - 2, rb = b.size() - 2;
  const std::size_t r = std::max(ra, rb);
  Shape batch(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const Index da = i < r - ra ? 1 : a[i - (r - ra)];
    const Index db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1)
      fail(Error::Kind::Dimension, "matmul: batch extents not broadcastable: " +
                                       shape_str(a) + " vs " + shape_str(b));
    batch[i] = std::max(da, db);
  }
  const Index count = numel_of(batch);
  BatchLayout layout;
  layout.out_batch = batch;
  layout.a_offsets.resize(static_cast<std::size_t>(count));
  layout.b_offsets.resize(static_cast<std::size_t>(count));
  std::vector<Index> idx(r, 0);
  for (Index f = 0; f < count; ++f) {
    Index ao = 0, bo = 0;
    Index astride = m * k, bstride = k * n;
    // row-major offset over the batch dims, broadcasting size-1 dims
    for (Index i = static_cast<Index>(r) - 1; i >= 0; --i) {
      const std::size_t ui = static_cast<std::size_t>(i);
      const Index da = ui < r - ra ? 1 : a[ui - (r - ra)];
      const Index db = ui < r - rb ? 1 : b[ui - (r - rb)];
      if (da != 1) ao += (idx[ui] % da) * astride, astride *= da;
      if (db != 1) bo += (idx[ui] % db) * bstride, bstride *= db;
    }
    layout.a_offsets[static_cast<std::size_t>(f)] = ao;
    layout.b_offsets[static_cast<std::size_t>(f)] = bo;
    for (Index i = static_cast<Index>(r) - 1; i >= 0; --i) {
      const std::size_t ui = static_cast<std::size_t>(i);
      if (++idx[ui] < batch[ui]) break;
      idx[ui] = 0;
    }
  }
  return layout;
}

}  // namespace detail

/// Batched matrix product a[.., M, K] x b[.., K, N] -> [.., M, N]. Leading
/// batch dims broadcast; there is no other broadcasting.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    fail(Error::Kind::Dimension, "matmul: operands must have rank >= 2, got " +
                                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Index m = a.extent(a.rank() - 2);
  const Index k = a.extent(a.rank() - 1);
  const Index kb = b.extent(b.rank() - 2);
  const Index n = b.extent(b.rank() - 1);
  if (k != kb)
    fail(Error::Kind::Dimension,
         "matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
             shape_str(b.shape()));
  const auto layout = detail::broadcast_batches(a.shape(), b.shape(), m, k, n);
  Shape out_shape = layout.out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<S> out = Tensor<S>::zeros(std::move(out_shape));
  const Index batches = static_cast<Index>(layout.a_offsets.size());
  for (Index f = 0; f < batches; ++f) {
    typename Tensor<S>::ConstMatrixMap am(a.data() + layout.a_offsets[static_cast<std::size_t>(f)], m, k);
    typename Tensor<S>::ConstMatrixMap bm(b.data() + layout.b_offsets[static_cast<std::size_t>(f)], k, n);
    typename Tensor<S>::MatrixMap om(out.data() + f * m * n, m, n);
    om.noalias() = am * bm;
  }
  detail::check_finite(out, "matmul");
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&a, &b}, [an, bn, on, layout, m, k, n, batches] {
    on->ensure_grad();
    using CMap = typename Tensor<S>::ConstMatrixMap;
    using Map = typename Tensor<S>::MatrixMap;
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (Index f = 0; f < batches; ++f) {
      CMap g(on->grad.data() + f * m * n, m, n);
      if (an->requires_grad) {
        CMap bm(bn->value.data() + layout.b_offsets[static_cast<std::size_t>(f)], k, n);
        Map ga(an->grad.data() + layout.a_offsets[static_cast<std::size_t>(f)], m, k);
        ga.noalias() += g * bm.transpose();
      }
      if (bn->requires_grad) {
        CMap am(an->value.data() + layout.a_offsets[static_cast<std::size_t>(f)], m, k);
        Map gb(bn->grad.data() + layout.b_offsets[static_cast<std::size_t>(f)], k, n);
        gb.noalias() += am.transpose() * g;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

struct Conv2dOpts {
  Index stride = 1;
  Index pad = 0;
  Index dilation = 1;
  Index groups = 1;
};

namespace detail {

struct ConvGeom {
  Index c_in, h, w, c_out, kk, h_out, w_out, groups;
  Index cg_in, cg_out;  // channels per group
};

inline ConvGeom conv_geometry(const Shape& x, const Shape& w, const Conv2dOpts& o) {
  if (x.size() != 3 || w.size() != 4)
    fail(Error::Kind::Dimension, "conv2d: expected x[C,H,W] and w[Co,Ci/g,k,k], got " +
                                     shape_str(x) + " and " + shape_str(w));
  ConvGeom g;
  g.c_in = x[0];
  g.h = x[1];
  g.w = x[2];
  g.c_out = w[0];
  g.kk = w[2];
  if (w[3] != g.kk) fail(Error::Kind::Config, "conv2d: kernel must be square");
  if (g.kk % 2 == 0) fail(Error::Kind::Config, "conv2d: kernel extent must be odd");
  if (o.dilation < 1) fail(Error::Kind::Config, "conv2d: dilation must be >= 1");
  if (o.stride < 1) fail(Error::Kind::Config, "conv2d: stride must be >= 1");
  if (o.pad < 0) fail(Error::Kind::Config, "conv2d: pad must be >= 0");
  if (o.groups < 1 || g.c_in % o.groups != 0)
    fail(Error::Kind::Config, "conv2d: input channels " + std::to_string(g.c_in) +
                                  " not divisible by groups " + std::to_string(o.groups));
  if (g.c_out % o.groups != 0)
    fail(Error::Kind::Config, "conv2d: output channels " + std::to_string(g.c_out) +
                                  " not divisible by groups " + std::to_string(o.groups));
  if (w[1] != g.c_in / o.groups)
    fail(Error::Kind::Config, "conv2d: weight expects " + std::to_string(w[1]) +
                                  " input channels per group, input has " +
                                  std::to_string(g.c_in / o.groups));
  const Index span = o.dilation * (g.kk - 1) + 1;
  g.h_out = (g.h + 2 * o.pad - span) / o.stride + 1;
  g.w_out = (g.w + 2 * o.pad - span) / o.stride + 1;
  if (g.h + 2 * o.pad < span || g.w + 2 * o.pad < span || g.h_out <= 0 || g.w_out <= 0)
    fail(Error::Kind::Geometry, "conv2d: non-positive output extent for input " +
                                    shape_str(x) + " with kernel span " + std::to_string(span));
  g.groups = o.groups;
  g.cg_in = g.c_in / o.groups;
  g.cg_out = g.c_out / o.groups;
  return g;
}

// column matrix for one group: [cg_in*k*k, h_out*w_out], zero padded
template <typename S>
void im2col(const S* x, const ConvGeom& g, const Conv2dOpts& o, Index group, S* col) {
  const Index cols = g.h_out * g.w_out;
  const S* xg = x + group * g.cg_in * g.h * g.w;
  Index row = 0;
  for (Index ci = 0; ci < g.cg_in; ++ci)
    for (Index kr = 0; kr < g.kk; ++kr)
      for (Index kc = 0; kc < g.kk; ++kc, ++row) {
        S* dst = col + row * cols;
        for (Index r = 0; r < g.h_out; ++r) {
          const Index ir = r * o.stride - o.pad + kr * o.dilation;
          for (Index c = 0; c < g.w_out; ++c) {
            const Index ic = c * o.stride - o.pad + kc * o.dilation;
            dst[r * g.w_out + c] = (ir >= 0 && ir < g.h && ic >= 0 && ic < g.w)
                                       ? xg[(ci * g.h + ir) * g.w + ic]
                                       : S(0);
          }
        }
      }
}

// scatter-add of a column-matrix gradient back onto the input
template <typename S>
void col2im_add(const S* col, const ConvGeom& g, const Conv2dOpts& o, Index group, S* gx) {
  const Index cols = g.h_out * g.w_out;
  S* xg = gx + group * g.cg_in * g.h * g.w;
  Index row = 0;
  for (Index ci = 0; ci < g.cg_in; ++ci)
    for (Index kr = 0; kr < g.kk; ++kr)
      for (Index kc = 0; kc < g.kk; ++kc, ++row) {
        const S* src = col + row * cols;
        for (Index r = 0; r < g.h_out; ++r) {
          const Index ir = r * o.stride - o.pad + kr * o.dilation;
          if (ir < 0 || ir >= g.h) continue;
          for (Index c = 0; c < g.w_out; ++c) {
            const Index ic = c * o.stride - o.pad + kc * o.dilation;
            if (ic < 0 || ic >= g.w) continue;
            xg[(ci * g.h + ir) * g.w + ic] += src[r * g.w_out + c];
          }
        }
      }
}

}  // namespace detail

/// 2D convolution over a single [C,H,W] image, lowered to GEMM per group.
/// groups == C_in with k=3 followed by groups=1 with k=1 realizes a
/// depthwise-separable convolution.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Conv2dOpts& o = {}) {
  const auto g = detail::conv_geometry(x.shape(), w.shape(), o);
  Tensor<S> out = Tensor<S>::zeros({g.c_out, g.h_out, g.w_out});
  const Index cols = g.h_out * g.w_out;
  const Index rows = g.cg_in * g.kk * g.kk;
  std::vector<S> col(static_cast<std::size_t>(rows * cols));
  for (Index grp = 0; grp < g.groups; ++grp) {
    detail::im2col(x.data(), g, o, grp, col.data());
    typename Tensor<S>::ConstMatrixMap wm(w.data() + grp * g.cg_out * rows, g.cg_out, rows);
    typename Tensor<S>::ConstMatrixMap cm(col.data(), rows, cols);
    typename Tensor<S>::MatrixMap om(out.data() + grp * g.cg_out * cols, g.cg_out, cols);
    om.noalias() = wm * cm;
  }
  detail::check_finite(out, "conv2d");
  auto xn = x.node_ptr();
  auto wn = w.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x, &w}, [xn, wn, on, g, o] {
    on->ensure_grad();
    const Index cols = g.h_out * g.w_out;
    const Index rows = g.cg_in * g.kk * g.kk;
    std::vector<S> col(static_cast<std::size_t>(rows * cols));
    std::vector<S> gcol(static_cast<std::size_t>(rows * cols));
    if (xn->requires_grad) xn->ensure_grad();
    if (wn->requires_grad) wn->ensure_grad();
    using CMap = typename Tensor<S>::ConstMatrixMap;
    using Map = typename Tensor<S>::MatrixMap;
    for (Index grp = 0; grp < g.groups; ++grp) {
      CMap go(on->grad.data() + grp * g.cg_out * cols, g.cg_out, cols);
      if (wn->requires_grad) {
        detail::im2col(xn->value.data(), g, o, grp, col.data());
        CMap cm(col.data(), rows, cols);
        Map gw(wn->grad.data() + grp * g.cg_out * rows, g.cg_out, rows);
        gw.noalias() += go * cm.transpose();
      }
      if (xn->requires_grad) {
        CMap wm(wn->value.data() + grp * g.cg_out * rows, g.cg_out, rows);
        Map gc(gcol.data(), rows, cols);
        gc.noalias() = wm.transpose() * go;
        detail::col2im_add(gcol.data(), g, o, grp, xn->grad.data());
      }
    }
  });
  return out;
}

/// x[C,H,W] + b[C] broadcast over the spatial extent.
template <typename S>
Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.rank() != 3 || b.shape() != Shape{x.extent(0)})
    fail(Error::Kind::Dimension, "add_channel_bias: " + shape_str(x.shape()) + " with bias " +
                                     shape_str(b.shape()));
  const Index c = x.extent(0);
  const Index hw = x.extent(1) * x.extent(2);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* xv = x.data();
  const S* bv = b.data();
  S* ov = out.data();
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < hw; ++i) ov[ch * hw + i] = xv[ch * hw + i] + bv[ch];
  auto xn = x.node_ptr();
  auto bn = b.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x, &b}, [xn, bn, on, c, hw] {
    on->ensure_grad();
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (Index ch = 0; ch < c; ++ch) {
        S acc = S(0);
        for (Index i = 0; i < hw; ++i) acc += on->grad[static_cast<std::size_t>(ch * hw + i)];
        bn->grad[static_cast<std::size_t>(ch)] += acc;
      }
    }
  });
  return out;
}

/// Per-row normalization with a uniform fallback: row d of the output is
/// x[d,:]/sum(x[d,:]) when the row mass is at least `min_mass`, otherwise the
/// uniform row 1/N (which averages to the global mean when used as weights).
/// Fallback rows carry zero gradient.
template <typename S>
Tensor<S> row_normalize(const Tensor<S>& x, S min_mass) {
  if (x.rank() != 2) fail(Error::Kind::Dimension, "row_normalize: expected rank-2 input");
  const Index rows = x.extent(0);
  const Index cols = x.extent(1);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  std::vector<S> inv_mass(static_cast<std::size_t>(rows), S(0));
  std::vector<char> fallback(static_cast<std::size_t>(rows), 0);
  const S* xv = x.data();
  S* ov = out.data();
  for (Index r = 0; r < rows; ++r) {
    S mass = S(0);
    for (Index c = 0; c < cols; ++c) mass += xv[r * cols + c];
    if (mass < min_mass) {
      fallback[static_cast<std::size_t>(r)] = 1;
      const S u = S(1) / static_cast<S>(cols);
      for (Index c = 0; c < cols; ++c) ov[r * cols + c] = u;
    } else {
      const S inv = S(1) / mass;
      inv_mass[static_cast<std::size_t>(r)] = inv;
      for (Index c = 0; c < cols; ++c) ov[r * cols + c] = xv[r * cols + c] * inv;
    }
  }
  auto xn = x.node_ptr();
  auto on = out.node_ptr();
  detail::record_op(out, {&x},
                    [xn, on, rows, cols, inv_mass = std::move(inv_mass),
                     fallback = std::move(fallback)] {
    on->ensure_grad();
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index r = 0; r < rows; ++r) {
      if (fallback[static_cast<std::size_t>(r)]) continue;
      const S inv = inv_mass[static_cast<std::size_t>(r)];
      S dot = S(0);
      for (Index c = 0; c < cols; ++c)
        dot += on->grad[static_cast<std::size_t>(r * cols + c)] *
               on->value[static_cast<std::size_t>(r * cols + c)];
      for (Index c = 0; c < cols; ++c)
        xn->grad[static_cast<std::size_t>(r * cols + c)] +=
            (on->grad[static_cast<std::size_t>(r * cols + c)] - dot) * inv;
    }
  });
  return out;
}

}  // namespace auxdepth
