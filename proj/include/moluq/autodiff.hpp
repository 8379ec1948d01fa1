#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "moluq/error.hpp"
#include "moluq/params.hpp"
#include "moluq/tensor.hpp"

namespace moluq::ad {

struct Value {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. Nodes are recorded in topological order by
// construction; backward() walks them once in reverse and accumulates
// gradients additively at fan-out. A tape is single-threaded.
class Tape {
  enum class Op {
    Constant,
    Input,  // grad-tracked leaf not bound to a store
    Param,
    MatMul,
    MatMulNT,
    Add,
    Sub,
    Mul,
    Scale,
    ConcatRows,
    ConcatCols,
    GatherRows,
    ScatterAddRows,
    Sum,
    Mean,
    ColSum,
    Sigmoid,
    Relu,
    Exp,
    Log,
    Square,
    Clamp,
    Softmax,
    LogSoftmax,
    TakeCol,
  };

  struct Node {
    Op op;
    int a = -1, b = -1;
    std::vector<int> many;         // ConcatRows inputs
    std::vector<std::size_t> idx;  // Gather/Scatter row indices
    double k = 0.0, lo = 0.0, hi = 0.0;
    int axis = 1;
    std::size_t col = 0;
    int slot = -1;
    bool needs_grad = false;
    Tensor val;
    Tensor grad;
  };

 public:
  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  std::size_t size() const { return nodes_.size(); }

  const Tensor& val(Value v) const { return nodes_[static_cast<std::size_t>(v.id)].val; }

  double scalar(Value v) const {
    const Tensor& t = val(v);
    if (t.size() != 1) fail(Err::ShapeMismatch, "scalar() on tensor " + t.shape_str());
    return t.data[0];
  }

  // Gradient w.r.t. any grad-tracked node, available after backward().
  const Tensor& grad_of(Value v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  Value constant(Tensor t) {
    Node n;
    n.op = Op::Constant;
    n.val = std::move(t);
    return push(std::move(n));
  }

  Value input(Tensor t) {
    Node n;
    n.op = Op::Input;
    n.val = std::move(t);
    n.needs_grad = true;
    return push(std::move(n));
  }

  // Parameter leaf. Frozen slots enter the tape as constants.
  Value param(const std::string& name) {
    if (!store_) fail(Err::BadConfig, "tape has no bound ParamStore");
    auto it = param_cache_.find(name);
    if (it != param_cache_.end()) return Value{it->second};
    const int slot = store_->index_of(name);
    Node n;
    n.op = Op::Param;
    n.val = store_->slot(slot).value;
    n.slot = slot;
    n.needs_grad = store_->slot(slot).trainable;
    Value v = push(std::move(n));
    param_cache_.emplace(name, v.id);
    return v;
  }

  Value matmul(Value a, Value b) {
    Node n = binary(Op::MatMul, a, b);
    n.val = moluq::matmul(val(a), val(b));
    return push(std::move(n));
  }

  // a * b^T
  Value matmul_nt(Value a, Value b) {
    Node n = binary(Op::MatMulNT, a, b);
    n.val = moluq::matmul_nt(val(a), val(b));
    return push(std::move(n));
  }

  // elementwise; b may be a (1,c) row broadcast over a's rows
  Value add(Value a, Value b) { return add_like(Op::Add, a, b); }
  Value sub(Value a, Value b) { return add_like(Op::Sub, a, b); }

  Value mul(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require_same_shape(ta, tb, "mul");
    Node n = binary(Op::Mul, a, b);
    n.val = ta;
    for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] *= tb.data[i];
    return push(std::move(n));
  }

  Value scale(Value a, double k) {
    Node n = unary(Op::Scale, a);
    n.k = k;
    n.val = val(a);
    for (double& v : n.val.data) v *= k;
    return push(std::move(n));
  }

  Value concat_rows(std::span<const Value> parts) {
    if (parts.empty()) fail(Err::ShapeMismatch, "concat_rows of nothing");
    const std::size_t cols = val(parts[0]).cols;
    std::size_t rows = 0;
    for (Value p : parts) {
      if (val(p).cols != cols) fail(Err::ShapeMismatch, "concat_rows column mismatch");
      rows += val(p).rows;
    }
    Node n;
    n.op = Op::ConcatRows;
    n.val = Tensor(rows, cols);
    std::size_t r = 0;
    for (Value p : parts) {
      const Tensor& t = val(p);
      std::copy(t.data.begin(), t.data.end(), n.val.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
      r += t.rows;
      n.many.push_back(p.id);
      n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(p.id)].needs_grad;
    }
    return push(std::move(n));
  }

  Value concat_cols(Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rows != tb.rows) fail(Err::ShapeMismatch, "concat_cols row mismatch");
    Node n = binary(Op::ConcatCols, a, b);
    n.val = Tensor(ta.rows, ta.cols + tb.cols);
    for (std::size_t i = 0; i < ta.rows; ++i) {
      std::copy(ta.row_ptr(i), ta.row_ptr(i) + ta.cols, n.val.row_ptr(i));
      std::copy(tb.row_ptr(i), tb.row_ptr(i) + tb.cols, n.val.row_ptr(i) + ta.cols);
    }
    return push(std::move(n));
  }

  Value gather_rows(Value a, std::vector<std::size_t> idx) {
    const Tensor& ta = val(a);
    for (std::size_t i : idx)
      if (i >= ta.rows) fail(Err::ShapeMismatch, "gather_rows index out of range");
    Node n = unary(Op::GatherRows, a);
    n.val = Tensor(idx.size(), ta.cols);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy(ta.row_ptr(idx[r]), ta.row_ptr(idx[r]) + ta.cols, n.val.row_ptr(r));
    n.idx = std::move(idx);
    return push(std::move(n));
  }

  Value scatter_add_rows(Value a, std::vector<std::size_t> idx, std::size_t n_rows) {
    const Tensor& ta = val(a);
    if (idx.size() != ta.rows) fail(Err::ShapeMismatch, "scatter_add_rows needs one index per row");
    for (std::size_t i : idx)
      if (i >= n_rows) fail(Err::ShapeMismatch, "scatter_add_rows index out of range");
    Node n = unary(Op::ScatterAddRows, a);
    n.val = Tensor(n_rows, ta.cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = n.val.row_ptr(idx[r]);
      const double* src = ta.row_ptr(r);
      for (std::size_t c = 0; c < ta.cols; ++c) dst[c] += src[c];
    }
    n.idx = std::move(idx);
    return push(std::move(n));
  }

  Value sum(Value a) {
    Node n = unary(Op::Sum, a);
    double acc = 0.0;
    for (double v : val(a).data) acc += v;
    n.val = Tensor::scalar(acc);
    return push(std::move(n));
  }

  Value mean(Value a) {
    Node n = unary(Op::Mean, a);
    double acc = 0.0;
    for (double v : val(a).data) acc += v;
    n.val = Tensor::scalar(acc / static_cast<double>(val(a).size()));
    return push(std::move(n));
  }

  Value colsum(Value a) {
    Node n = unary(Op::ColSum, a);
    const Tensor& ta = val(a);
    n.val = Tensor(1, ta.cols);
    for (std::size_t i = 0; i < ta.rows; ++i) {
      const double* src = ta.row_ptr(i);
      for (std::size_t c = 0; c < ta.cols; ++c) n.val.data[c] += src[c];
    }
    return push(std::move(n));
  }

  Value sigmoid(Value a) {
    Node n = unary(Op::Sigmoid, a);
    n.val = val(a);
    for (double& v : n.val.data) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(n));
  }

  Value relu(Value a) {
    Node n = unary(Op::Relu, a);
    n.val = val(a);
    for (double& v : n.val.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
  }

  Value exp(Value a) {
    Node n = unary(Op::Exp, a);
    n.val = val(a);
    for (double& v : n.val.data) v = std::exp(v);
    return push(std::move(n));
  }

  Value log(Value a) {
    Node n = unary(Op::Log, a);
    n.val = val(a);
    for (double& v : n.val.data) v = std::log(v);
    return push(std::move(n));
  }

  Value square(Value a) {
    Node n = unary(Op::Square, a);
    n.val = val(a);
    for (double& v : n.val.data) v *= v;
    return push(std::move(n));
  }

  Value clamp(Value a, double lo, double hi) {
    Node n = unary(Op::Clamp, a);
    n.lo = lo;
    n.hi = hi;
    n.val = val(a);
    for (double& v : n.val.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(n));
  }

  // axis=1: each row sums to 1; axis=0: each column sums to 1
  Value softmax(Value a, int axis = 1) {
    Node n = unary(Op::Softmax, a);
    n.axis = axis;
    n.val = softmax_forward(val(a), axis, false);
    return push(std::move(n));
  }

  Value log_softmax(Value a, int axis = 1) {
    Node n = unary(Op::LogSoftmax, a);
    n.axis = axis;
    n.val = softmax_forward(val(a), axis, true);
    return push(std::move(n));
  }

  Value take_col(Value a, std::size_t j) {
    const Tensor& ta = val(a);
    if (j >= ta.cols) fail(Err::ShapeMismatch, "take_col out of range");
    Node n = unary(Op::TakeCol, a);
    n.col = j;
    n.val = Tensor(ta.rows, 1);
    for (std::size_t i = 0; i < ta.rows; ++i) n.val.data[i] = ta.at(i, j);
    return push(std::move(n));
  }

  // Gradient of a scalar loss w.r.t. every grad-tracked node; parameter
  // gradients are flushed into the bound store (additively).
  void backward(Value loss) {
    auto& ln = nodes_[static_cast<std::size_t>(loss.id)];
    if (ln.val.size() != 1) fail(Err::ShapeMismatch, "backward needs a scalar loss");
    if (!std::isfinite(ln.val.data[0])) fail(Err::NonFiniteLoss, "loss is not finite");
    if (!ln.needs_grad) return;  // loss built from constants only
    for (auto& n : nodes_)
      if (n.needs_grad) n.grad = Tensor(n.val.rows, n.val.cols);
    ln.grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) step_backward(static_cast<std::size_t>(i));
    if (store_) {
      for (const auto& [name, id] : param_cache_) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) continue;
        Tensor& g = store_->slot(n.slot).grad;
        for (std::size_t j = 0; j < g.size(); ++j) g.data[j] += n.grad.data[j];
      }
      store_->check_grads_finite();
    }
  }

 private:
  std::deque<Node> nodes_;  // deque keeps val()/grad_of() references stable across pushes
  ParamStore* store_;
  std::unordered_map<std::string, int> param_cache_;

  Value push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
  }

  Node unary(Op op, Value a) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(a.id)].needs_grad;
    return n;
  }

  Node binary(Op op, Value a, Value b) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.needs_grad = nodes_[static_cast<std::size_t>(a.id)].needs_grad ||
                   nodes_[static_cast<std::size_t>(b.id)].needs_grad;
    return n;
  }

  Value add_like(Op op, Value a, Value b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    const double sign = op == Op::Sub ? -1.0 : 1.0;
    Node n = binary(op, a, b);
    if (ta.same_shape(tb)) {
      n.val = ta;
      for (std::size_t i = 0; i < n.val.size(); ++i) n.val.data[i] += sign * tb.data[i];
    } else if (tb.rows == 1 && tb.cols == ta.cols) {
      n.val = ta;
      for (std::size_t i = 0; i < ta.rows; ++i) {
        double* dst = n.val.row_ptr(i);
        for (std::size_t c = 0; c < ta.cols; ++c) dst[c] += sign * tb.data[c];
      }
    } else {
      fail(Err::ShapeMismatch, std::string(op == Op::Sub ? "sub " : "add ") + ta.shape_str() +
                                   " vs " + tb.shape_str());
    }
    return push(std::move(n));
  }

  static Tensor softmax_forward(const Tensor& x, int axis, bool log_form) {
    Tensor out = x;
    if (axis == 1) {
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double* src = x.row_ptr(i);
        double* dst = out.row_ptr(i);
        double mx = src[0];
        for (std::size_t c = 1; c < x.cols; ++c) mx = std::max(mx, src[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < x.cols; ++c) z += std::exp(src[c] - mx);
        if (log_form) {
          const double lz = std::log(z) + mx;
          for (std::size_t c = 0; c < x.cols; ++c) dst[c] = src[c] - lz;
        } else {
          for (std::size_t c = 0; c < x.cols; ++c) dst[c] = std::exp(src[c] - mx) / z;
        }
      }
    } else if (axis == 0) {
      for (std::size_t c = 0; c < x.cols; ++c) {
        double mx = x.at(0, c);
        for (std::size_t i = 1; i < x.rows; ++i) mx = std::max(mx, x.at(i, c));
        double z = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) z += std::exp(x.at(i, c) - mx);
        if (log_form) {
          const double lz = std::log(z) + mx;
          for (std::size_t i = 0; i < x.rows; ++i) out.at(i, c) = x.at(i, c) - lz;
        } else {
          for (std::size_t i = 0; i < x.rows; ++i) out.at(i, c) = std::exp(x.at(i, c) - mx) / z;
        }
      }
    } else {
      fail(Err::ShapeMismatch, "softmax axis must be 0 or 1");
    }
    return out;
  }

  Tensor* gslot(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.needs_grad ? &n.grad : nullptr;
  }

  void step_backward(std::size_t i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) return;
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Constant:
      case Op::Input:
      case Op::Param:
        break;
      case Op::MatMul: {
        const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].val;
        const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].val;
        if (Tensor* ga = gslot(n.a)) matmul_nt_into(g, b, *ga, true);
        if (Tensor* gb = gslot(n.b)) matmul_tn_into(a, g, *gb, true);
        break;
      }
      case Op::MatMulNT: {
        const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].val;
        const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].val;
        if (Tensor* ga = gslot(n.a)) matmul_into(g, b, *ga, true);
        if (Tensor* gb = gslot(n.b)) matmul_tn_into(g, a, *gb, true);
        break;
      }
      case Op::Add:
      case Op::Sub: {
        const double sign = n.op == Op::Sub ? -1.0 : 1.0;
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j) ga->data[j] += g.data[j];
        if (Tensor* gb = gslot(n.b)) {
          if (gb->same_shape(g)) {
            for (std::size_t j = 0; j < g.size(); ++j) gb->data[j] += sign * g.data[j];
          } else {  // row-broadcast bias
            for (std::size_t r = 0; r < g.rows; ++r) {
              const double* src = g.row_ptr(r);
              for (std::size_t c = 0; c < g.cols; ++c) gb->data[c] += sign * src[c];
            }
          }
        }
        break;
      }
      case Op::Mul: {
        const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].val;
        const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].val;
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j) ga->data[j] += g.data[j] * b.data[j];
        if (Tensor* gb = gslot(n.b))
          for (std::size_t j = 0; j < g.size(); ++j) gb->data[j] += g.data[j] * a.data[j];
        break;
      }
      case Op::Scale: {
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j) ga->data[j] += n.k * g.data[j];
        break;
      }
      case Op::ConcatRows: {
        std::size_t r = 0;
        for (int pid : n.many) {
          Node& p = nodes_[static_cast<std::size_t>(pid)];
          if (p.needs_grad) {
            for (std::size_t pr = 0; pr < p.val.rows; ++pr) {
              const double* src = g.row_ptr(r + pr);
              double* dst = p.grad.row_ptr(pr);
              for (std::size_t c = 0; c < g.cols; ++c) dst[c] += src[c];
            }
          }
          r += p.val.rows;
        }
        break;
      }
      case Op::ConcatCols: {
        const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].val;
        if (Tensor* ga = gslot(n.a)) {
          for (std::size_t r = 0; r < g.rows; ++r) {
            const double* src = g.row_ptr(r);
            double* dst = ga->row_ptr(r);
            for (std::size_t c = 0; c < a.cols; ++c) dst[c] += src[c];
          }
        }
        if (Tensor* gb = gslot(n.b)) {
          for (std::size_t r = 0; r < g.rows; ++r) {
            const double* src = g.row_ptr(r) + a.cols;
            double* dst = gb->row_ptr(r);
            for (std::size_t c = 0; c < gb->cols; ++c) dst[c] += src[c];
          }
        }
        break;
      }
      case Op::GatherRows: {
        if (Tensor* ga = gslot(n.a)) {
          for (std::size_t r = 0; r < n.idx.size(); ++r) {
            const double* src = g.row_ptr(r);
            double* dst = ga->row_ptr(n.idx[r]);
            for (std::size_t c = 0; c < g.cols; ++c) dst[c] += src[c];
          }
        }
        break;
      }
      case Op::ScatterAddRows: {
        if (Tensor* ga = gslot(n.a)) {
          for (std::size_t r = 0; r < n.idx.size(); ++r) {
            const double* src = g.row_ptr(n.idx[r]);
            double* dst = ga->row_ptr(r);
            for (std::size_t c = 0; c < g.cols; ++c) dst[c] += src[c];
          }
        }
        break;
      }
      case Op::Sum: {
        if (Tensor* ga = gslot(n.a))
          for (double& v : ga->data) v += g.data[0];
        break;
      }
      case Op::Mean: {
        if (Tensor* ga = gslot(n.a)) {
          const double gv = g.data[0] / static_cast<double>(ga->size());
          for (double& v : ga->data) v += gv;
        }
        break;
      }
      case Op::ColSum: {
        if (Tensor* ga = gslot(n.a)) {
          for (std::size_t r = 0; r < ga->rows; ++r) {
            double* dst = ga->row_ptr(r);
            for (std::size_t c = 0; c < ga->cols; ++c) dst[c] += g.data[c];
          }
        }
        break;
      }
      case Op::Sigmoid: {
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j) {
            const double y = n.val.data[j];
            ga->data[j] += g.data[j] * y * (1.0 - y);
          }
        break;
      }
      case Op::Relu: {
        const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].val;
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j)
            if (a.data[j] > 0.0) ga->data[j] += g.data[j];
        break;
      }
      case Op::Exp: {
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j) ga->data[j] += g.data[j] * n.val.data[j];
        break;
      }
      case Op::Log: {
        const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].val;
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j) ga->data[j] += g.data[j] / a.data[j];
        break;
      }
      case Op::Square: {
        const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].val;
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j) ga->data[j] += 2.0 * a.data[j] * g.data[j];
        break;
      }
      case Op::Clamp: {
        const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].val;
        if (Tensor* ga = gslot(n.a))
          for (std::size_t j = 0; j < g.size(); ++j)
            if (a.data[j] >= n.lo && a.data[j] <= n.hi) ga->data[j] += g.data[j];
        break;
      }
      case Op::Softmax: {
        if (Tensor* ga = gslot(n.a)) {
          const Tensor& y = n.val;
          if (n.axis == 1) {
            for (std::size_t r = 0; r < y.rows; ++r) {
              const double* yr = y.row_ptr(r);
              const double* gr = g.row_ptr(r);
              double dot = 0.0;
              for (std::size_t c = 0; c < y.cols; ++c) dot += yr[c] * gr[c];
              double* dst = ga->row_ptr(r);
              for (std::size_t c = 0; c < y.cols; ++c) dst[c] += yr[c] * (gr[c] - dot);
            }
          } else {
            for (std::size_t c = 0; c < y.cols; ++c) {
              double dot = 0.0;
              for (std::size_t r = 0; r < y.rows; ++r) dot += y.at(r, c) * g.at(r, c);
              for (std::size_t r = 0; r < y.rows; ++r)
                ga->at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
            }
          }
        }
        break;
      }
      case Op::LogSoftmax: {
        if (Tensor* ga = gslot(n.a)) {
          const Tensor& ly = n.val;
          if (n.axis == 1) {
            for (std::size_t r = 0; r < ly.rows; ++r) {
              const double* lr = ly.row_ptr(r);
              const double* gr = g.row_ptr(r);
              double gsum = 0.0;
              for (std::size_t c = 0; c < ly.cols; ++c) gsum += gr[c];
              double* dst = ga->row_ptr(r);
              for (std::size_t c = 0; c < ly.cols; ++c) dst[c] += gr[c] - std::exp(lr[c]) * gsum;
            }
          } else {
            for (std::size_t c = 0; c < ly.cols; ++c) {
              double gsum = 0.0;
              for (std::size_t r = 0; r < ly.rows; ++r) gsum += g.at(r, c);
              for (std::size_t r = 0; r < ly.rows; ++r)
                ga->at(r, c) += g.at(r, c) - std::exp(ly.at(r, c)) * gsum;
            }
          }
        }
        break;
      }
      case Op::TakeCol: {
        if (Tensor* ga = gslot(n.a))
          for (std::size_t r = 0; r < g.rows; ++r) ga->at(r, n.col) += g.data[r];
        break;
      }
    }
  }
};

}  // namespace moluq::ad
