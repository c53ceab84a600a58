#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <functional>
#include <limits>
#include <tuple>
#include <utility>
#include <vector>

#include "mpgraf/tensor.hpp"

namespace mpgraf {

/// Named weight with an optional gradient buffer. Frozen parameters
/// (trainable == false) never receive gradients and are never moved by the
/// optimizer.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
  Tensor<T> grad;  // empty until backward touches it

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), trainable(train) {}

  bool has_grad() const { return !grad.data.empty(); }
  void zero_grad() { grad = Tensor<T>(); }
};

/// Handle to a node on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Operations append nodes in execution order; backward
/// walks them once in reverse. Single-threaded by design; independent tapes
/// may live on different threads.
template <class T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, Var self)>;

  struct Node {
    Tensor<T> value;
    bool needs_grad = false;
    BackFn back;  // empty for leaves
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }

  const Tensor<T>& val(Var v) const { return nodes_[check(v)].value; }
  bool needs_grad(Var v) const { return nodes_[check(v)].needs_grad; }

  /// Gradient buffer of a node, allocated (zero) on first touch.
  Tensor<T>& grad_acc(Var v) {
    std::size_t i = check(v);
    if (grads_[i].data.empty()) grads_[i] = Tensor<T>(nodes_[i].value.shape);
    return grads_[i];
  }
  /// Gradient of a node after backward; empty tensor when nothing flowed.
  const Tensor<T>& grad(Var v) const { return grads_[check(v)]; }

  /// Appends a node. Module code may use this directly to define custom ops.
  Var push_node(Tensor<T> value, bool needs_grad, BackFn back = {}) {
    assert(value.all_finite() && "non-finite tensor produced");
    nodes_.push_back(Node{std::move(value), needs_grad, std::move(back)});
    grads_.emplace_back();
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  // ---- leaves ----

  Var input(Tensor<T> v) { return push_node(std::move(v), false); }

  Var param(Parameter<T>& p) {
    Var v = push_node(p.value, p.trainable);
    params_.emplace_back(v.id, &p);
    return v;
  }

  // ---- elementwise binary; rhs may broadcast over leading dims ----

  Var add(Var a, Var b) { return ew_binary(a, b, BinOp::Add); }
  Var sub(Var a, Var b) { return ew_binary(a, b, BinOp::Sub); }
  Var mul(Var a, Var b) { return ew_binary(a, b, BinOp::Mul); }
  Var div(Var a, Var b) { return ew_binary(a, b, BinOp::Div); }

  // ---- elementwise with constants ----

  Var scale(Var a, T c) {
    const Tensor<T>& x = val(a);
    Tensor<T> y = x;
    for (T& v : y.data) v *= c;
    bool rg = needs_grad(a);
    return push_node(std::move(y), rg, [a, c, rg](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += c * g.data[i];
    });
  }

  Var add_scalar(Var a, T c) {
    Tensor<T> y = val(a);
    for (T& v : y.data) v += c;
    bool rg = needs_grad(a);
    return push_node(std::move(y), rg, [a, rg](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
  }

  Var neg(Var a) { return scale(a, T(-1)); }

  // ---- matrix ops (rank 2) ----

  Var matmul(Var a, Var b) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
      throw Error("matmul: incompatible shapes " + shape_str(A.shape) + " x " +
                  shape_str(B.shape));
    Tensor<T> Y({A.rows(), B.cols()});
    mm_nn(A, B, Y);
    bool ra = needs_grad(a), rb = needs_grad(b);
    return push_node(std::move(Y), ra || rb,
                     [a, b, ra, rb](Tape& tp, Var self) {
      const Tensor<T>& g = tp.grad(self);
      if (ra) mm_nt_acc(g, tp.val(b), tp.grad_acc(a));  // gA += g * B^T
      if (rb) mm_tn_acc(tp.val(a), g, tp.grad_acc(b));  // gB += A^T * g
    });
  }

  Var transpose(Var a) {
    const Tensor<T>& A = val(a);
    if (A.rank() != 2) throw Error("transpose: rank-2 tensor required");
    Tensor<T> Y({A.cols(), A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i)
      for (std::size_t j = 0; j < A.cols(); ++j) Y.at(j, i) = A.at(i, j);
    bool rg = needs_grad(a);
    return push_node(std::move(Y), rg, [a, rg](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
    });
  }

  // ---- shape ops ----

  Var reshape(Var a, Shape s) {
    const Tensor<T>& A = val(a);
    if (shape_numel(s) != A.numel())
      throw Error("reshape: element count mismatch " + shape_str(A.shape) +
                  " -> " + shape_str(s));
    Tensor<T> Y(std::move(s), A.data);
    bool rg = needs_grad(a);
    return push_node(std::move(Y), rg, [a, rg](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
  }

  Var concat(std::size_t axis, const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat: no inputs");
    const Tensor<T>& first = val(parts[0]);
    if (axis >= first.rank()) throw Error("concat: axis out of range");
    Shape out_shape = first.shape;
    for (std::size_t p = 1; p < parts.size(); ++p) {
      const Tensor<T>& t = val(parts[p]);
      if (t.rank() != first.rank()) throw Error("concat: rank mismatch");
      for (std::size_t d = 0; d < t.rank(); ++d)
        if (d != axis && t.shape[d] != first.shape[d])
          throw Error("concat: shape mismatch " + shape_str(t.shape) + " vs " +
                      shape_str(first.shape));
      out_shape[axis] += t.shape[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d)
      inner *= out_shape[d];
    const std::size_t total_axis = out_shape[axis];
    Tensor<T> Y(out_shape);
    std::size_t off = 0;
    bool rg = false;
    for (Var p : parts) rg = rg || needs_grad(p);
    for (Var p : parts) {
      const Tensor<T>& t = val(p);
      std::size_t an = t.shape[axis];
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < an; ++k)
          for (std::size_t i = 0; i < inner; ++i)
            Y.data[(o * total_axis + off + k) * inner + i] =
                t.data[(o * an + k) * inner + i];
      off += an;
    }
    std::vector<Var> ps = parts;
    return push_node(std::move(Y), rg,
                     [ps, axis, outer, inner, total_axis](Tape& tp, Var self) {
      const Tensor<T>& g = tp.grad(self);
      std::size_t off2 = 0;
      for (Var p : ps) {
        const std::size_t an = tp.val(p).shape[axis];
        if (tp.needs_grad(p)) {
          Tensor<T>& gp = tp.grad_acc(p);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < an; ++k)
              for (std::size_t i = 0; i < inner; ++i)
                gp.data[(o * an + k) * inner + i] +=
                    g.data[(o * total_axis + off2 + k) * inner + i];
        }
        off2 += an;
      }
    });
  }

  Var slice(Var a, std::size_t axis, std::size_t start, std::size_t len) {
    const Tensor<T>& A = val(a);
    if (axis >= A.rank()) throw Error("slice: axis out of range");
    if (start + len > A.shape[axis])
      throw Error("slice: range [" + std::to_string(start) + "," +
                  std::to_string(start + len) + ") exceeds dim " +
                  std::to_string(A.shape[axis]));
    Shape out_shape = A.shape;
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= A.shape[d];
    for (std::size_t d = axis + 1; d < A.rank(); ++d) inner *= A.shape[d];
    const std::size_t an = A.shape[axis];
    Tensor<T> Y(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        for (std::size_t i = 0; i < inner; ++i)
          Y.data[(o * len + k) * inner + i] =
              A.data[(o * an + start + k) * inner + i];
    bool rg = needs_grad(a);
    return push_node(std::move(Y), rg,
                     [a, rg, outer, inner, an, start, len](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
          for (std::size_t i = 0; i < inner; ++i)
            ga.data[(o * an + start + k) * inner + i] +=
                g.data[(o * len + k) * inner + i];
    });
  }

  /// Selects rows (axis-0 slots) of `a` by index; repeated indices allowed.
  Var gather_rows(Var a, std::vector<std::size_t> idx) {
    const Tensor<T>& A = val(a);
    if (A.rank() < 1 || A.shape[0] == 0)
      throw Error("gather_rows: nonempty rank >= 1 tensor required");
    const std::size_t n = A.shape[0];
    const std::size_t rowsz = A.numel() / n;
    for (std::size_t i : idx)
      if (i >= n) throw Error("gather_rows: index out of range");
    Shape out_shape = A.shape;
    out_shape[0] = idx.size();
    Tensor<T> Y(out_shape);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(A.data.begin() + idx[r] * rowsz, rowsz,
                  Y.data.begin() + r * rowsz);
    bool rg = needs_grad(a);
    return push_node(std::move(Y), rg,
                     [a, rg, idx = std::move(idx), rowsz](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < rowsz; ++c)
          ga.data[idx[r] * rowsz + c] += g.data[r * rowsz + c];
    });
  }

  // ---- elementwise unary ----

  Var relu(Var a) {
    return unary(a, [](T x) { return x > T(0) ? x : T(0); },
                 [](T x, T) { return x > T(0) ? T(1) : T(0); });
  }

  /// tanh-approximation gelu: 0.5 x (1 + tanh(c1 (x + c2 x^3))),
  /// c1 = sqrt(2/pi), c2 = 0.044715.
  Var gelu(Var a) {
    constexpr double c1 = 0.7978845608028654;
    constexpr double c2 = 0.044715;
    return unary(a,
                 [](T x) {
                   double xd = static_cast<double>(x);
                   double u = c1 * (xd + c2 * xd * xd * xd);
                   return static_cast<T>(0.5 * xd * (1.0 + std::tanh(u)));
                 },
                 [](T x, T) {
                   double xd = static_cast<double>(x);
                   double u = c1 * (xd + c2 * xd * xd * xd);
                   double t = std::tanh(u);
                   double du = c1 * (1.0 + 3.0 * c2 * xd * xd);
                   return static_cast<T>(0.5 * (1.0 + t) +
                                         0.5 * xd * (1.0 - t * t) * du);
                 });
  }

  Var exp(Var a) {
    return unary(a, [](T x) { return static_cast<T>(std::exp(x)); },
                 [](T, T y) { return y; });
  }

  Var log(Var a) {
    return unary(a, [](T x) { return static_cast<T>(std::log(x)); },
                 [](T x, T) { return T(1) / x; });
  }

  Var sqrt(Var a) {
    return unary(a, [](T x) { return static_cast<T>(std::sqrt(x)); },
                 [](T x, T) {
                   double xd = std::max(static_cast<double>(x), 1e-24);
                   return static_cast<T>(0.5 / std::sqrt(xd));
                 });
  }

  Var abs(Var a) {
    return unary(a, [](T x) { return x < T(0) ? -x : x; },
                 [](T x, T) {
                   return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
                 });
  }

  /// log(1 + exp(x)) evaluated stably.
  Var softplus(Var a) {
    return unary(a,
                 [](T x) {
                   double xd = static_cast<double>(x);
                   return static_cast<T>(std::max(xd, 0.0) +
                                         std::log1p(std::exp(-std::abs(xd))));
                 },
                 [](T x, T) {
                   double xd = static_cast<double>(x);
                   return static_cast<T>(1.0 / (1.0 + std::exp(-xd)));
                 });
  }

  // ---- normalization ----

  Var softmax(Var a, std::size_t axis) {
    const Tensor<T>& A = val(a);
    if (axis >= A.rank()) throw Error("softmax: axis out of range");
    auto [outer, an, inner] = lane_dims(A.shape, axis);
    Tensor<T> Y(A.shape);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < an; ++k)
          mx = std::max(mx,
                        static_cast<double>(lane_at(A, o, k, i, an, inner)));
        double sum = 0;
        for (std::size_t k = 0; k < an; ++k) {
          double e = std::exp(
              static_cast<double>(lane_at(A, o, k, i, an, inner)) - mx);
          lane_at(Y, o, k, i, an, inner) = static_cast<T>(e);
          sum += e;
        }
        for (std::size_t k = 0; k < an; ++k)
          lane_at(Y, o, k, i, an, inner) = static_cast<T>(
              static_cast<double>(lane_at(Y, o, k, i, an, inner)) / sum);
      }
    bool rg = needs_grad(a);
    return push_node(std::move(Y), rg,
                     [a, rg, outer, an, inner](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      const Tensor<T>& y = tp.val(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          double dot = 0;
          for (std::size_t k = 0; k < an; ++k)
            dot += static_cast<double>(lane_at(g, o, k, i, an, inner)) *
                   static_cast<double>(lane_at(y, o, k, i, an, inner));
          for (std::size_t k = 0; k < an; ++k) {
            double yv = lane_at(y, o, k, i, an, inner);
            double gv = lane_at(g, o, k, i, an, inner);
            lane_at(ga, o, k, i, an, inner) += static_cast<T>(yv * (gv - dot));
          }
        }
    });
  }

  /// Zero-mean unit-variance normalization along `axis` (no affine part;
  /// apply gain/bias with mul/add).
  Var layer_norm(Var a, std::size_t axis, T eps = T(1e-5)) {
    const Tensor<T>& A = val(a);
    if (axis >= A.rank()) throw Error("layer_norm: axis out of range");
    auto [outer, an, inner] = lane_dims(A.shape, axis);
    Tensor<T> Y(A.shape);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        auto [mu, inv] = lane_moments(A, o, i, an, inner, eps);
        for (std::size_t k = 0; k < an; ++k)
          lane_at(Y, o, k, i, an, inner) = static_cast<T>(
              (static_cast<double>(lane_at(A, o, k, i, an, inner)) - mu) * inv);
      }
    bool rg = needs_grad(a);
    return push_node(std::move(Y), rg,
                     [a, rg, outer, an, inner, eps](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      const Tensor<T>& x = tp.val(a);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          auto [mu, inv] = lane_moments(x, o, i, an, inner, eps);
          double gmean = 0, gxhat = 0;
          for (std::size_t k = 0; k < an; ++k) {
            double xh =
                (static_cast<double>(lane_at(x, o, k, i, an, inner)) - mu) *
                inv;
            double gv = static_cast<double>(lane_at(g, o, k, i, an, inner));
            gmean += gv;
            gxhat += gv * xh;
          }
          gmean /= an;
          gxhat /= an;
          for (std::size_t k = 0; k < an; ++k) {
            double xh =
                (static_cast<double>(lane_at(x, o, k, i, an, inner)) - mu) *
                inv;
            double gv = static_cast<double>(lane_at(g, o, k, i, an, inner));
            lane_at(ga, o, k, i, an, inner) +=
                static_cast<T>(inv * (gv - gmean - xh * gxhat));
          }
        }
    });
  }

  // ---- reductions ----

  Var sum(Var a) {
    const Tensor<T>& A = val(a);
    double s = 0;
    for (T v : A.data) s += static_cast<double>(v);
    bool rg = needs_grad(a);
    return push_node(Tensor<T>::scalar(static_cast<T>(s)), rg,
                     [a, rg](Tape& tp, Var self) {
      if (!rg) return;
      const T g = tp.grad(self).data[0];
      Tensor<T>& ga = tp.grad_acc(a);
      for (T& v : ga.data) v += g;
    });
  }

  Var mean(Var a) {
    std::size_t n = val(a).numel();
    return scale(sum(a), T(1) / static_cast<T>(n));
  }

  Var sum_axis(Var a, std::size_t axis) {
    const Tensor<T>& A = val(a);
    if (axis >= A.rank()) throw Error("sum_axis: axis out of range");
    auto [outer, an, inner] = lane_dims(A.shape, axis);
    Shape out_shape;
    for (std::size_t d = 0; d < A.rank(); ++d)
      if (d != axis) out_shape.push_back(A.shape[d]);
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor<T> Y(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < an; ++k)
          s += static_cast<double>(lane_at(A, o, k, i, an, inner));
        Y.data[o * inner + i] = static_cast<T>(s);
      }
    bool rg = needs_grad(a);
    return push_node(std::move(Y), rg,
                     [a, rg, outer, an, inner](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i)
          for (std::size_t k = 0; k < an; ++k)
            lane_at(ga, o, k, i, an, inner) += g.data[o * inner + i];
    });
  }

  Var mean_axis(Var a, std::size_t axis) {
    std::size_t an = val(a).shape[axis];
    return scale(sum_axis(a, axis), T(1) / static_cast<T>(an));
  }

  // ---- backward ----

  /// Backpropagates from a scalar loss and accumulates gradients into all
  /// trainable Parameters seen by param().
  void backward(Var loss) {
    if (val(loss).numel() != 1)
      throw Error("backward: loss must be scalar, got " +
                  shape_str(val(loss).shape));
    if (!needs_grad(loss)) return;  // everything frozen: nothing to do
    grad_acc(loss).data[0] = T(1);
    for (std::int32_t id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.back || !n.needs_grad || grads_[id].data.empty()) continue;
      n.back(*this, Var{id});
    }
    for (auto& [id, p] : params_) {
      if (!p->trainable) continue;
      const Tensor<T>& g = grads_[id];
      if (g.data.empty()) continue;
      if (!p->has_grad()) p->grad = Tensor<T>(p->value.shape);
      for (std::size_t i = 0; i < g.numel(); ++i) p->grad.data[i] += g.data[i];
    }
  }

 private:
  enum class BinOp { Add, Sub, Mul, Div };

  std::size_t check(Var v) const {
    assert(v.valid() && static_cast<std::size_t>(v.id) < nodes_.size());
    return static_cast<std::size_t>(v.id);
  }

  static std::tuple<std::size_t, std::size_t, std::size_t> lane_dims(
      const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    return {outer, s[axis], inner};
  }

  template <class Tn>
  static auto& lane_at(Tn& t, std::size_t o, std::size_t k, std::size_t i,
                       std::size_t an, std::size_t inner) {
    return t.data[(o * an + k) * inner + i];
  }

  static std::pair<double, double> lane_moments(const Tensor<T>& x,
                                                std::size_t o, std::size_t i,
                                                std::size_t an,
                                                std::size_t inner, T eps) {
    double mu = 0;
    for (std::size_t k = 0; k < an; ++k)
      mu += static_cast<double>(lane_at(x, o, k, i, an, inner));
    mu /= an;
    double var = 0;
    for (std::size_t k = 0; k < an; ++k) {
      double d = static_cast<double>(lane_at(x, o, k, i, an, inner)) - mu;
      var += d * d;
    }
    var /= an;
    return {mu, 1.0 / std::sqrt(var + static_cast<double>(eps))};
  }

  // rhs may equal lhs shape, be a scalar, or be a suffix of lhs shape.
  static void broadcast_check(const Tensor<T>& a, const Tensor<T>& b,
                              const char* opname) {
    if (a.same_shape(b) || b.numel() == 1) return;
    if (b.rank() <= a.rank()) {
      bool suffix = true;
      for (std::size_t d = 0; d < b.rank(); ++d)
        if (b.shape[b.rank() - 1 - d] != a.shape[a.rank() - 1 - d])
          suffix = false;
      if (suffix) return;
    }
    throw Error(std::string(opname) + ": incompatible shapes " +
                shape_str(a.shape) + " vs " + shape_str(b.shape));
  }

  Var ew_binary(Var a, Var b, BinOp op) {
    const Tensor<T>& A = val(a);
    const Tensor<T>& B = val(b);
    const char* name = op == BinOp::Add   ? "add"
                       : op == BinOp::Sub ? "sub"
                       : op == BinOp::Mul ? "mul"
                                          : "div";
    broadcast_check(A, B, name);
    const std::size_t n = A.numel(), m = B.numel();
    Tensor<T> Y(A.shape);
    for (std::size_t i = 0; i < n; ++i) {
      T x = A.data[i], y = B.data[i % m];
      switch (op) {
        case BinOp::Add: Y.data[i] = x + y; break;
        case BinOp::Sub: Y.data[i] = x - y; break;
        case BinOp::Mul: Y.data[i] = x * y; break;
        case BinOp::Div: Y.data[i] = x / y; break;
      }
    }
    bool ra = needs_grad(a), rb = needs_grad(b);
    return push_node(std::move(Y), ra || rb,
                     [a, b, ra, rb, op, n, m](Tape& tp, Var self) {
      const Tensor<T>& g = tp.grad(self);
      const Tensor<T>& A2 = tp.val(a);
      const Tensor<T>& B2 = tp.val(b);
      if (ra) {
        Tensor<T>& ga = tp.grad_acc(a);
        for (std::size_t i = 0; i < n; ++i) {
          T bi = B2.data[i % m];
          switch (op) {
            case BinOp::Add: ga.data[i] += g.data[i]; break;
            case BinOp::Sub: ga.data[i] += g.data[i]; break;
            case BinOp::Mul: ga.data[i] += g.data[i] * bi; break;
            case BinOp::Div: ga.data[i] += g.data[i] / bi; break;
          }
        }
      }
      if (rb) {
        Tensor<T>& gb = tp.grad_acc(b);
        for (std::size_t i = 0; i < n; ++i) {
          T bi = B2.data[i % m];
          switch (op) {
            case BinOp::Add: gb.data[i % m] += g.data[i]; break;
            case BinOp::Sub: gb.data[i % m] -= g.data[i]; break;
            case BinOp::Mul: gb.data[i % m] += g.data[i] * A2.data[i]; break;
            case BinOp::Div:
              gb.data[i % m] -= g.data[i] * A2.data[i] / (bi * bi);
              break;
          }
        }
      }
    });
  }

  template <class FwdFn, class BwdFn>
  Var unary(Var a, FwdFn f, BwdFn df) {
    const Tensor<T>& A = val(a);
    Tensor<T> Y(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) Y.data[i] = f(A.data[i]);
    bool rg = needs_grad(a);
    return push_node(std::move(Y), rg, [a, rg, df](Tape& tp, Var self) {
      if (!rg) return;
      const Tensor<T>& g = tp.grad(self);
      const Tensor<T>& x = tp.val(a);
      const Tensor<T>& y = tp.val(self);
      Tensor<T>& ga = tp.grad_acc(a);
      for (std::size_t i = 0; i < g.numel(); ++i)
        ga.data[i] += g.data[i] * df(x.data[i], y.data[i]);
    });
  }

  // dense matmul kernels
  static void mm_nn(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& Y) {
    const std::size_t n = A.rows(), kk = A.cols(), m = B.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < kk; ++k) {
        const T aik = A.data[i * kk + k];
        if (aik == T(0)) continue;
        const T* brow = &B.data[k * m];
        T* yrow = &Y.data[i * m];
        for (std::size_t j = 0; j < m; ++j) yrow[j] += aik * brow[j];
      }
  }
  // Y += A * B^T  where A:[n,m], B:[k,m] -> Y:[n,k]
  static void mm_nt_acc(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& Y) {
    const std::size_t n = A.rows(), m = A.cols(), k = B.rows();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        T s = 0;
        const T* arow = &A.data[i * m];
        const T* brow = &B.data[j * m];
        for (std::size_t t = 0; t < m; ++t) s += arow[t] * brow[t];
        Y.data[i * k + j] += s;
      }
  }
  // Y += A^T * B  where A:[n,m], B:[n,k] -> Y:[m,k]
  static void mm_tn_acc(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& Y) {
    const std::size_t n = A.rows(), m = A.cols(), k = B.cols();
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t i = 0; i < m; ++i) {
        const T a = A.data[t * m + i];
        if (a == T(0)) continue;
        const T* brow = &B.data[t * k];
        T* yrow = &Y.data[i * k];
        for (std::size_t j = 0; j < k; ++j) yrow[j] += a * brow[j];
      }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<std::pair<std::int32_t, Parameter<T>*>> params_;
};

}  // namespace mpgraf
