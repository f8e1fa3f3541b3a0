// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over Array values. Ops append nodes to a Tape;
// Tape::backward replays them in reverse creation order, each exactly once.

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fcarac/array.hpp"

namespace fcarac {

/// Trainable tensor with its gradient and Adam moment accumulators.
struct Parameter {
  std::string name;
  Array value;
  Array grad;
  Array m;
  Array v;
  std::uint64_t steps = 0;

  Parameter() = default;
  Parameter(std::string n, Array init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape()),
        m(value.shape()),
        v(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Array& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value) { return push(std::move(value), {}, nullptr); }

  /// Leaf bound to a parameter; backward accumulates into param.grad.
  Var param(Parameter& p) {
    Var v = push(p.value, {}, nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  Var push(Array value, std::vector<std::size_t> inputs, Backward backward) {
    nodes_.push_back(Node{std::move(value), Array(), std::move(inputs), std::move(backward), nullptr});
    return Var{this, nodes_.size() - 1};
  }

  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Adds g into the gradient slot of node id.
  void accumulate(std::size_t id, const Array& g) {
    auto& node = nodes_[id];
    if (node.grad.empty()) {
      node.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
  }

  Array& grad_slot(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) node.grad = Array(node.value.shape());
    return node.grad;
  }

  /// Propagates d(loss)/d(node) to every parameter leaf reachable from loss.
  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (value(loss.id).size() != 1) {
      throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(value(loss.id).shape()));
    }
    for (auto& n : nodes_) n.grad = Array();
    visited_.clear();
    nodes_[loss.id].grad = Array(nodes_[loss.id].value.shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (node.grad.empty()) continue;
      visited_.push_back(i);
      if (node.param != nullptr) {
        auto& pg = node.param->grad;
        for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += node.grad[j];
      }
      // Closures only write to strictly earlier nodes, so node.grad stays put.
      if (node.backward) node.backward(*this, node.grad);
    }
  }

  /// Node ids visited by the most recent backward pass, in visit order.
  const std::vector<std::size_t>& last_backward_order() const noexcept { return visited_; }

 private:
  struct Node {
    Array value;
    Array grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    Parameter* param;
  };
  std::deque<Node> nodes_;  // stable references across push
  std::vector<std::size_t> visited_;
};

inline const Array& Var::value() const { return tape->value(id); }

namespace ops {

namespace detail {
inline Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw std::invalid_argument("Var not bound to a tape");
  return *a.tape;
}
inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands live on different tapes");
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Array out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, const Array& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Array out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, const Array& g) {
    t.accumulate(ia, g);
    Array neg = g;
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
    t.accumulate(ib, neg);
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Array out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, const Array& g) {
    const Array& av = t.value(ia);
    const Array& bv = t.value(ib);
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    Array& gb = t.grad_slot(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Var scale(Var a, double c) {
  Array out = a.value();
  for (auto& v : out.data()) v *= c;
  return a.tape->push(std::move(out), {a.id}, [ia = a.id, c](Tape& t, const Array& g) {
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

inline Var add_scalar(Var a, double c) {
  Array out = a.value();
  for (auto& v : out.data()) v += c;
  return a.tape->push(std::move(out), {a.id}, [ia = a.id](Tape& t, const Array& g) { t.accumulate(ia, g); });
}

/// Elementwise product with a constant array (no gradient to the constant).
inline Var mul_const(Var a, const Array& c) {
  require_same_shape(a.value(), c, "mul_const");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return a.tape->push(std::move(out), {a.id}, [ia = a.id, c](Tape& t, const Array& g) {
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c[i] * g[i];
  });
}

namespace detail {
template <class F, class DF>
Var unary(Var a, F f, DF df_from_out) {
  Array out = a.value();
  for (auto& v : out.data()) v = f(v);
  return a.tape->push(std::move(out), {a.id}, [ia = a.id, out_id = a.tape->size(), df_from_out](Tape& t, const Array& g) {
    const Array& x = t.value(ia);
    const Array& y = t.value(out_id);
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df_from_out(x[i], y[i]);
  });
}
}  // namespace detail

inline Var tanh(Var a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var abs(Var a) {
  return detail::unary(
      a, [](double x) { return std::abs(x); }, [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(Var a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Sum of all entries, shape [1].
inline Var sum(Var a) {
  return a.tape->push(Array::scalar(a.value().sum()), {a.id}, [ia = a.id](Tape& t, const Array& g) {
    Array& ga = t.grad_slot(ia);
    for (auto& v : ga.data()) v += g[0];
  });
}

inline Var mean(Var a) {
  const auto n = a.value().size();
  if (n == 0) throw std::invalid_argument("mean of empty array");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

inline Var reshape(Var a, Shape shape) {
  Array out = a.value().reshaped(std::move(shape));
  return a.tape->push(std::move(out), {a.id}, [ia = a.id](Tape& t, const Array& g) {
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  Array out = kernels::matmul(a.value(), b.value());
  return a.tape->push(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, const Array& g) {
    const Array& av = t.value(ia);
    const Array& bv = t.value(ib);
    const auto m = av.dim(0), n = av.dim(1), p = bv.dim(1);
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < n; ++l) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p; ++j) acc += g[i * p + j] * bv[l * p + j];
        ga[i * n + l] += acc;
      }
    Array& gb = t.grad_slot(ib);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < n; ++l) {
        const double a_il = av[i * n + l];
        if (a_il == 0.0) continue;
        for (std::size_t j = 0; j < p; ++j) gb[l * p + j] += a_il * g[i * p + j];
      }
  });
}

inline Var transpose(Var a) {
  Array out = kernels::transpose(a.value());
  return a.tape->push(std::move(out), {a.id}, [ia = a.id](Tape& t, const Array& g) {
    const Array gt = kernels::transpose(g);
    t.accumulate(ia, gt);
  });
}

/// a (m x n) + bias (n) broadcast over rows.
inline Var add_row_bias(Var a, Var bias) {
  detail::same_tape(a, bias);
  const auto& av = a.value();
  const auto& bv = bias.value();
  require_rank(av, 2, "add_row_bias");
  if (bv.size() != av.dim(1)) throw ShapeError("add_row_bias: bias width mismatch");
  Array out = av;
  const auto n = av.dim(1);
  for (std::size_t i = 0; i < av.dim(0); ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return a.tape->push(std::move(out), {a.id, bias.id}, [ia = a.id, ib = bias.id, n](Tape& t, const Array& g) {
    t.accumulate(ia, g);
    Array& gb = t.grad_slot(ib);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
  });
}

/// Row-wise softmax of a 2-D array.
inline Var softmax_rows(Var a) {
  const auto& av = a.value();
  require_rank(av, 2, "softmax_rows");
  const auto m = av.dim(0), n = av.dim(1);
  Array out(av.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, av[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(av[i * n + j] - mx));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return a.tape->push(std::move(out), {a.id}, [ia = a.id, out_id = a.tape->size(), m, n](Tape& t, const Array& g) {
    const Array& y = t.value(out_id);
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

/// Row sums of a 2-D array, shape [m].
inline Var row_sum(Var a) {
  const auto& av = a.value();
  require_rank(av, 2, "row_sum");
  const auto m = av.dim(0), n = av.dim(1);
  Array out(Shape{m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j];
  return a.tape->push(std::move(out), {a.id}, [ia = a.id, n](Tape& t, const Array& g) {
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i / n];
  });
}

/// Flat gather: out[i] = a[index[i]], or 0 where index[i] < 0.
inline Var gather(Var a, std::vector<std::ptrdiff_t> index, Shape out_shape) {
  if (shape_size(out_shape) != index.size()) throw ShapeError("gather: index count does not match output shape");
  const auto& av = a.value();
  Array out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto src = index[i];
    if (src >= 0) {
      if (static_cast<std::size_t>(src) >= av.size()) throw ShapeError("gather: index out of range");
      out[i] = av[static_cast<std::size_t>(src)];
    }
  }
  return a.tape->push(std::move(out), {a.id}, [ia = a.id, index = std::move(index)](Tape& t, const Array& g) {
    Array& ga = t.grad_slot(ia);
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) ga[static_cast<std::size_t>(index[i])] += g[i];
  });
}

/// Row gather on a 2-D array; negative row ids yield zero rows.
inline Var gather_rows(Var a, const std::vector<std::ptrdiff_t>& rows) {
  const auto& av = a.value();
  require_rank(av, 2, "gather_rows");
  const auto w = av.dim(1);
  std::vector<std::ptrdiff_t> idx(rows.size() * w);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < w; ++c)
      idx[r * w + c] = rows[r] < 0 ? -1 : rows[r] * static_cast<std::ptrdiff_t>(w) + static_cast<std::ptrdiff_t>(c);
  return gather(a, std::move(idx), Shape{rows.size(), w});
}

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  if (start + count > a.value().rows()) throw ShapeError("slice_rows out of range");
  std::vector<std::ptrdiff_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = static_cast<std::ptrdiff_t>(start + i);
  if (a.value().rank() == 1) {
    return gather(a, std::vector<std::ptrdiff_t>(rows.begin(), rows.end()), Shape{count});
  }
  return gather_rows(a, rows);
}

/// Unfolds a (T x C) sequence into (n x width*C) windows of the given stride.
/// pad_left frames of zeros precede the sequence; out_len windows are taken.
inline Var unfold(Var a, std::size_t width, std::size_t stride, std::ptrdiff_t pad_left, std::size_t out_len) {
  const auto& av = a.value();
  require_rank(av, 2, "unfold");
  const auto frames = static_cast<std::ptrdiff_t>(av.dim(0));
  std::vector<std::ptrdiff_t> rows(out_len * width);
  for (std::size_t o = 0; o < out_len; ++o)
    for (std::size_t j = 0; j < width; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(o * stride + j) - pad_left;
      rows[o * width + j] = (src < 0 || src >= frames) ? -1 : src;
    }
  Var g = gather_rows(a, rows);
  return reshape(g, Shape{out_len, width * av.dim(1)});
}

/// Concatenates equal-length column vectors / matrices along axis 1.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = detail::tape_of(parts[0]);
  const auto rows = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.value().rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(p.value().rank() == 1 ? 1 : p.value().cols());
    total += widths.back();
  }
  Array out(Shape{rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = pv[r * widths[k] + c];
    off += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return t.push(std::move(out), ids, [ids, widths, rows, total](Tape& tp, const Array& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Array& gk = tp.grad_slot(ids[k]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + o + c];
      o += widths[k];
    }
  });
}

/// Same-padded 1-D correlation; see kernels::correlate1d.
inline Var correlate1d(Var signal, Var kernel, std::size_t stride = 1) {
  detail::same_tape(signal, kernel);
  Array out = kernels::correlate1d(signal.value(), kernel.value(), stride);
  return signal.tape->push(std::move(out), {signal.id, kernel.id},
                           [is = signal.id, ik = kernel.id, stride](Tape& t, const Array& g) {
                             const Array& sv = t.value(is);
                             const Array& kv = t.value(ik);
                             const auto frames = static_cast<std::ptrdiff_t>(sv.dim(0));
                             const auto s = kv.dim(0), d = sv.dim(1);
                             const auto half = kernels::kernel_center(s);
                             Array& gs = t.grad_slot(is);
                             Array& gk = t.grad_slot(ik);
                             for (std::size_t o = 0; o < g.size(); ++o) {
                               const double go = g[o];
                               if (go == 0.0) continue;
                               const auto centre = static_cast<std::ptrdiff_t>(o * stride);
                               for (std::size_t j = 0; j < s; ++j) {
                                 const auto src = centre + static_cast<std::ptrdiff_t>(j) - half;
                                 if (src < 0 || src >= frames) continue;
                                 const auto srow = static_cast<std::size_t>(src) * d;
                                 for (std::size_t c = 0; c < d; ++c) {
                                   gs[srow + c] += go * kv[j * d + c];
                                   gk[j * d + c] += go * sv[srow + c];
                                 }
                               }
                             }
                           });
}

inline Var interp_linear(Var kernel, std::size_t target_len) {
  const auto& kv = kernel.value();
  require_rank(kv, 2, "interp_linear");
  auto plan = kernels::interp_plan(kv.dim(0), target_len);
  Array out = kernels::interp_linear(kv, target_len);
  const auto d = kv.dim(1);
  return kernel.tape->push(std::move(out), {kernel.id}, [ik = kernel.id, plan = std::move(plan), d](Tape& t, const Array& g) {
    Array& gk = t.grad_slot(ik);
    for (std::size_t i = 0; i < plan.lo.size(); ++i) {
      const double f = plan.frac[i];
      for (std::size_t c = 0; c < d; ++c) {
        gk[plan.lo[i] * d + c] += (1.0 - f) * g[i * d + c];
        gk[(plan.lo[i] + 1) * d + c] += f * g[i * d + c];
      }
    }
  });
}

}  // namespace ops
}  // namespace fcarac
