#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// Every operation appends a node holding its forward value and a hand-written
// backward rule. Nodes only refer to earlier nodes, so a single reverse sweep
// over the tape visits each node after all of its consumers.

#include <cmath>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fairflow/error.hpp"
#include "fairflow/tensor.hpp"

namespace fairflow {

/// A named trainable tensor owned by a model.
struct Parameter {
  std::string name;
  Tensor value;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor value;
    Tensor grad;  // empty until reached by the reverse sweep
    const char* kind = "leaf";
    const Parameter* param = nullptr;
    BackwardFn backward;
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-trainable input.
  Var constant(Tensor value) { return push(std::move(value), "const", {}); }

  /// Trainable leaf; repeated calls with the same parameter return the same node.
  Var param(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, "param", {});
    nodes_[static_cast<std::size_t>(v.id())].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var push(Tensor value, const char* kind, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.kind = kind;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of node `id`.
  void accumulate(int id, const Tensor& g) {
    Node& n = node(id);
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  const std::unordered_map<const Parameter*, int>& param_nodes() const { return param_nodes_; }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->node(id_).value; }

/// Gradients keyed by parameter. Parameters the loss never reached are
/// present with a zero tensor and `reached == false`.
class GradientSet {
 public:
  struct Entry {
    Tensor grad;
    bool reached = false;
  };

  void set(const Parameter* p, Entry e) { entries_[p] = std::move(e); }

  bool contains(const Parameter* p) const { return entries_.count(p) != 0; }
  const Entry& at(const Parameter* p) const {
    auto it = entries_.find(p);
    if (it == entries_.end()) throw ContractError("no gradient recorded for parameter " + p->name);
    return it->second;
  }
  const Tensor& grad(const Parameter* p) const { return at(p).grad; }
  bool reached(const Parameter* p) const { return at(p).reached; }
  std::size_t size() const { return entries_.size(); }

  bool all_finite() const {
    for (const auto& [p, e] : entries_)
      if (!e.grad.allFinite()) return false;
    return true;
  }

  double global_norm() const {
    double sq = 0.0;
    for (const auto& [p, e] : entries_) sq += e.grad.squaredNorm();
    return std::sqrt(sq);
  }

 private:
  std::unordered_map<const Parameter*, Entry> entries_;
};

/// Reverse sweep from a scalar node. Returns gradients for `params`; entries
/// for parameters off the path are zero-filled.
inline GradientSet backward(Tape& tape, Var loss, std::span<Parameter* const> params) {
  if (&loss.tape() != &tape) throw ContractError("backward: loss belongs to another tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.value()));
  }
  for (std::size_t i = 0; i < tape.size(); ++i) tape.node(static_cast<int>(i)).grad.resize(0, 0);
  tape.accumulate(loss.id(), scalar_tensor(1.0));
  for (int id = loss.id(); id >= 0; --id) {
    Tape::Node& n = tape.node(id);
    if (n.grad.size() == 0) continue;
    if (!n.grad.allFinite()) {
      std::ostringstream os;
      os << "non-finite gradient at node #" << id << " (" << n.kind << ")";
      if (n.param != nullptr) os << " parameter " << n.param->name;
      throw NumericError(os.str());
    }
    if (n.backward) n.backward(tape, id);
  }
  GradientSet out;
  for (Parameter* p : params) {
    GradientSet::Entry e;
    auto it = tape.param_nodes().find(p);
    if (it != tape.param_nodes().end() && tape.node(it->second).grad.size() != 0) {
      e.grad = tape.node(it->second).grad;
      e.reached = true;
    } else {
      e.grad = Tensor::Zero(p->value.rows(), p->value.cols());
    }
    out.set(p, std::move(e));
  }
  return out;
}

/// Gradient with respect to an arbitrary node after `backward` has run.
inline Tensor grad_of(const Var& v) {
  const Tensor& g = v.tape().node(v.id()).grad;
  if (g.size() == 0) return Tensor::Zero(v.rows(), v.cols());
  return g;
}

namespace ops {

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
  }
}
}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.value()) + " x " + shape_str(b.value()));
  }
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() * b.value(), "matmul", [ia, ib](Tape& t, int self) {
    const Tensor& g = t.node(self).grad;
    t.accumulate(ia, g * t.node(ib).value.transpose());
    t.accumulate(ib, t.node(ia).value.transpose() * g);
  });
}

/// x + b with b a 1xk row broadcast over the rows of x.
inline Var add_bias(const Var& x, const Var& b) {
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw ShapeError("add_bias: " + shape_str(x.value()) + " + " + shape_str(b.value()));
  }
  const int ix = x.id(), ib = b.id();
  Tensor y = x.value().rowwise() + b.value().row(0);
  return x.tape().push(std::move(y), "add_bias", [ix, ib](Tape& t, int self) {
    const Tensor& g = t.node(self).grad;
    t.accumulate(ix, g);
    t.accumulate(ib, g.colwise().sum());
  });
}

/// x * r with r a 1xk row broadcast over the rows of x.
inline Var mul_row(const Var& x, const Var& r) {
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("mul_row: " + shape_str(x.value()) + " * " + shape_str(r.value()));
  }
  const int ix = x.id(), ir = r.id();
  Tensor y = x.value().array().rowwise() * r.value().row(0).array();
  return x.tape().push(std::move(y), "mul_row", [ix, ir](Tape& t, int self) {
    const Tensor& g = t.node(self).grad;
    const Tensor& xv = t.node(ix).value;
    const Tensor& rv = t.node(ir).value;
    Tensor gx = g.array().rowwise() * rv.row(0).array();
    t.accumulate(ix, gx);
    t.accumulate(ir, (g.array() * xv.array()).colwise().sum().matrix());
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() + b.value(), "add", [ia, ib](Tape& t, int self) {
    const Tensor& g = t.node(self).grad;
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() - b.value(), "sub", [ia, ib](Tape& t, int self) {
    const Tensor& g = t.node(self).grad;
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  Tensor y = a.value().cwiseProduct(b.value());
  return a.tape().push(std::move(y), "mul", [ia, ib](Tape& t, int self) {
    const Tensor& g = t.node(self).grad;
    t.accumulate(ia, g.cwiseProduct(t.node(ib).value));
    t.accumulate(ib, g.cwiseProduct(t.node(ia).value));
  });
}

inline Var scale(const Var& x, double c) {
  const int ix = x.id();
  return x.tape().push(x.value() * c, "scale", [ix, c](Tape& t, int self) {
    t.accumulate(ix, t.node(self).grad * c);
  });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }

inline Var tanh(const Var& x) {
  const int ix = x.id();
  Tensor y = x.value().array().tanh().matrix();
  return x.tape().push(std::move(y), "tanh", [ix](Tape& t, int self) {
    const Tensor& y = t.node(self).value;
    Tensor gx = t.node(self).grad.array() * (1.0 - y.array().square());
    t.accumulate(ix, gx);
  });
}

inline Var exp(const Var& x) {
  const int ix = x.id();
  Tensor y = x.value().array().exp().matrix();
  return x.tape().push(std::move(y), "exp", [ix](Tape& t, int self) {
    t.accumulate(ix, t.node(self).grad.cwiseProduct(t.node(self).value));
  });
}

/// Numerically stable log(1 + exp(x)).
inline Var softplus(const Var& x) {
  const int ix = x.id();
  Tensor y = x.value().unaryExpr([](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); });
  return x.tape().push(std::move(y), "softplus", [ix](Tape& t, int self) {
    Tensor sig = t.node(ix).value.unaryExpr([](double v) {
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    t.accumulate(ix, t.node(self).grad.cwiseProduct(sig));
  });
}

inline Var square(const Var& x) {
  const int ix = x.id();
  return x.tape().push(x.value().array().square().matrix(), "square", [ix](Tape& t, int self) {
    t.accumulate(ix, 2.0 * t.node(self).grad.cwiseProduct(t.node(ix).value));
  });
}

/// Per-row sum: (n x k) -> (n x 1).
inline Var row_sum(const Var& x) {
  const int ix = x.id();
  const Index k = x.cols();
  Tensor y = x.value().rowwise().sum();
  return x.tape().push(std::move(y), "row_sum", [ix, k](Tape& t, int self) {
    Tensor g = t.node(self).grad.replicate(1, k);
    t.accumulate(ix, g);
  });
}

inline Var sum(const Var& x) {
  const int ix = x.id();
  const Index r = x.rows(), c = x.cols();
  return x.tape().push(scalar_tensor(x.value().sum()), "sum", [ix, r, c](Tape& t, int self) {
    t.accumulate(ix, Tensor::Constant(r, c, t.node(self).grad(0, 0)));
  });
}

inline Var mean(const Var& x) {
  if (x.value().size() == 0) throw ShapeError("mean: empty operand");
  const int ix = x.id();
  const Index r = x.rows(), c = x.cols();
  const double n = static_cast<double>(x.value().size());
  return x.tape().push(scalar_tensor(x.value().sum() / n), "mean", [ix, r, c, n](Tape& t, int self) {
    t.accumulate(ix, Tensor::Constant(r, c, t.node(self).grad(0, 0) / n));
  });
}

inline Var select_cols(const Var& x, std::vector<Index> cols) {
  const int ix = x.id();
  const Index k = x.cols();
  Tensor y = gather_cols(x.value(), cols);
  return x.tape().push(std::move(y), "select_cols", [ix, k, cols = std::move(cols)](Tape& t, int self) {
    const Tensor& g = t.node(self).grad;
    Tensor gx = Tensor::Zero(g.rows(), k);
    for (std::size_t c = 0; c < cols.size(); ++c) gx.col(cols[c]) += g.col(static_cast<Index>(c));
    t.accumulate(ix, gx);
  });
}

inline Var select_rows(const Var& x, std::vector<Index> rows) {
  const int ix = x.id();
  const Index n = x.rows();
  Tensor y = gather_rows(x.value(), rows);
  return x.tape().push(std::move(y), "select_rows", [ix, n, rows = std::move(rows)](Tape& t, int self) {
    const Tensor& g = t.node(self).grad;
    Tensor gx = Tensor::Zero(n, g.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) gx.row(rows[r]) += g.row(static_cast<Index>(r));
    t.accumulate(ix, gx);
  });
}

/// Interleaves the columns of `a` (placed at `cols_a`) and `b` (at `cols_b`)
/// into a matrix with `width` columns.
inline Var merge_cols(const Var& a, std::vector<Index> cols_a, const Var& b, std::vector<Index> cols_b,
                      Index width) {
  if (a.rows() != b.rows() || static_cast<Index>(cols_a.size()) != a.cols() ||
      static_cast<Index>(cols_b.size()) != b.cols() || a.cols() + b.cols() != width) {
    throw ShapeError("merge_cols: inconsistent operands " + shape_str(a.value()) + ", " + shape_str(b.value()));
  }
  Tensor y(a.rows(), width);
  for (std::size_t c = 0; c < cols_a.size(); ++c) y.col(cols_a[c]) = a.value().col(static_cast<Index>(c));
  for (std::size_t c = 0; c < cols_b.size(); ++c) y.col(cols_b[c]) = b.value().col(static_cast<Index>(c));
  const int ia = a.id(), ib = b.id();
  return a.tape().push(std::move(y), "merge_cols",
                       [ia, ib, ca = std::move(cols_a), cb = std::move(cols_b)](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         t.accumulate(ia, gather_cols(g, ca));
                         t.accumulate(ib, gather_cols(g, cb));
                       });
}

}  // namespace ops

inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }
inline Var operator*(double c, const Var& x) { return ops::scale(x, c); }
inline Var operator-(const Var& x) { return ops::neg(x); }

}  // namespace fairflow
