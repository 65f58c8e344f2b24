#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "nao/errors.hpp"
#include "nao/tensor.hpp"

namespace nao {

// Reverse-mode autodiff over a flat tape of matrix operations.
//
// Nodes are appended in topological order and evaluated eagerly at
// construction; forward_eval() re-runs the sweep after set_leaf().
// backward() accumulates exact adjoints of <seed, root> into every node on
// a trainable path, in fixed reverse-index order (serial summation, so runs
// are bitwise reproducible).
class Tape {
 public:
  enum class Op {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,        // elementwise
    Scale,      // by compile-time constant
    RowSum,     // n x m -> n x 1
    FullSum,    // -> 1 x 1
    LeakyRelu,
    RowSoftmax,
    Reshape,
    ConcatRows,
    ConcatCols,
    SliceRows,
    BroadcastRows,  // 1 x m -> n x m
  };

  struct Node {
    Op op = Op::Leaf;
    int a = -1, b = -1;
    double c = 0.0;            // scale factor / leaky slope
    std::size_t i0 = 0, i1 = 0;  // slice range / broadcast count
    std::vector<std::size_t> target_shape;  // reshape
    ValueGrid value;
    ValueGrid grad;
    bool trainable = false;
    bool needs_grad = false;
  };

  int leaf(ValueGrid v, bool trainable = false) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.trainable = trainable;
    n.needs_grad = trainable;
    check_finite(n.value, "leaf");
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  int constant(ValueGrid v) { return leaf(std::move(v), false); }

  int matmul(int a, int b) { return push(Op::MatMul, a, b); }
  int transpose(int a) { return push(Op::Transpose, a); }
  int add(int a, int b) { return push(Op::Add, a, b); }
  int sub(int a, int b) { return push(Op::Sub, a, b); }
  int mul(int a, int b) { return push(Op::Mul, a, b); }

  int scale(int a, double s) {
    Node n = make(Op::Scale, a, -1);
    n.c = s;
    return append(std::move(n));
  }

  int row_sum(int a) { return push(Op::RowSum, a); }
  int full_sum(int a) { return push(Op::FullSum, a); }

  int leaky_relu(int a, double slope = 0.01) {
    Node n = make(Op::LeakyRelu, a, -1);
    n.c = slope;
    return append(std::move(n));
  }

  int row_softmax(int a) { return push(Op::RowSoftmax, a); }

  int reshape(int a, std::vector<std::size_t> shape) {
    Node n = make(Op::Reshape, a, -1);
    n.target_shape = std::move(shape);
    return append(std::move(n));
  }

  int concat(int a, int b, int axis) {
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    return push(axis == 0 ? Op::ConcatRows : Op::ConcatCols, a, b);
  }

  int slice_rows(int a, std::size_t begin, std::size_t end) {
    Node n = make(Op::SliceRows, a, -1);
    n.i0 = begin;
    n.i1 = end;
    return append(std::move(n));
  }

  int broadcast_rows(int a, std::size_t n_rows) {
    Node n = make(Op::BroadcastRows, a, -1);
    n.i0 = n_rows;
    return append(std::move(n));
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[std::size_t(id)]; }
  const ValueGrid& value(int id) const { return nodes_[std::size_t(id)].value; }

  const ValueGrid& grad(int id) const {
    if (!backward_ran_) throw StateError("grad() before backward()");
    return nodes_[std::size_t(id)].grad;
  }

  void set_leaf(int id, ValueGrid v) {
    Node& n = nodes_[std::size_t(id)];
    if (n.op != Op::Leaf) throw StateError("set_leaf on non-leaf node");
    if (!n.value.same_shape(v))
      throw ShapeError("set_leaf: shape mismatch " + shape_str(n.value.shape) +
                       " vs " + shape_str(v.shape));
    n.value = std::move(v);
    fresh_ = false;
    backward_ran_ = false;
  }

  // Recomputes every cached value up to root and returns the root value.
  // Pure: repeated calls without set_leaf return identical values.
  const ValueGrid& forward_eval(int root) {
    for (int i = 0; i <= root; ++i)
      if (nodes_[std::size_t(i)].op != Op::Leaf) eval(nodes_[std::size_t(i)]);
    fresh_ = true;
    return nodes_[std::size_t(root)].value;
  }

  // Adjoint sweep for <seed, root>. Every trainable-path node receives its
  // exact gradient; fan-out accumulates by serial += in reverse index order.
  void backward(int root, const ValueGrid& seed) {
    if (!fresh_) throw StateError("backward before forward: call forward_eval first");
    Node& r = nodes_[std::size_t(root)];
    if (!seed.same_shape(r.value))
      throw ShapeError("backward: seed shape " + shape_str(seed.shape) +
                       " does not match root shape " + shape_str(r.value.shape));
    for (int i = 0; i <= root; ++i) {
      Node& n = nodes_[std::size_t(i)];
      if (n.needs_grad) {
        n.grad = ValueGrid(n.value.shape);
      } else {
        n.grad = ValueGrid();
      }
    }
    if (!r.needs_grad) {
      backward_ran_ = true;  // nothing trainable below the root
      return;
    }
    r.grad = seed;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[std::size_t(i)];
      if (n.needs_grad && n.op != Op::Leaf) propagate(n);
    }
    backward_ran_ = true;
  }

  void backward_scalar(int root, double seed = 1.0) {
    backward(root, ValueGrid::scalar(seed));
  }

 private:
  Node make(Op op, int a, int b) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.needs_grad = (a >= 0 && nodes_[std::size_t(a)].needs_grad) ||
                   (b >= 0 && nodes_[std::size_t(b)].needs_grad);
    return n;
  }

  int push(Op op, int a, int b = -1) { return append(make(op, a, b)); }

  int append(Node n) {
    eval(n);
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::Leaf: return "leaf";
      case Op::MatMul: return "matmul";
      case Op::Transpose: return "transpose";
      case Op::Add: return "add";
      case Op::Sub: return "sub";
      case Op::Mul: return "mul";
      case Op::Scale: return "scale";
      case Op::RowSum: return "row_sum";
      case Op::FullSum: return "full_sum";
      case Op::LeakyRelu: return "leaky_relu";
      case Op::RowSoftmax: return "row_softmax";
      case Op::Reshape: return "reshape";
      case Op::ConcatRows: return "concat_rows";
      case Op::ConcatCols: return "concat_cols";
      case Op::SliceRows: return "slice_rows";
      case Op::BroadcastRows: return "broadcast_rows";
    }
    return "?";
  }

  static void check_finite(const ValueGrid& v, const char* what) {
    if (!v.all_finite())
      throw NumericError(std::string("non-finite result in ") + what);
  }

  const ValueGrid& in(const Node& n, int which) const {
    return nodes_[std::size_t(which == 0 ? n.a : n.b)].value;
  }

  void eval(Node& n) {
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::MatMul: {
        const ValueGrid& A = in(n, 0);
        const ValueGrid& B = in(n, 1);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
          throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape) +
                           " vs " + shape_str(B.shape));
        n.value = mm_nn(A, B);
        break;
      }
      case Op::Transpose: {
        const ValueGrid& A = in(n, 0);
        if (A.rank() != 2) throw ShapeError("transpose: need matrix, got " + shape_str(A.shape));
        ValueGrid out = ValueGrid::matrix(A.cols(), A.rows());
        for (std::size_t i = 0; i < A.rows(); ++i)
          for (std::size_t j = 0; j < A.cols(); ++j) out.at(j, i) = A.at(i, j);
        n.value = std::move(out);
        break;
      }
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const ValueGrid& A = in(n, 0);
        const ValueGrid& B = in(n, 1);
        require_same_shape(A, B, op_name(n.op));
        ValueGrid out(A.shape);
        const std::size_t m = A.size();
        if (n.op == Op::Add)
          for (std::size_t i = 0; i < m; ++i) out[i] = A[i] + B[i];
        else if (n.op == Op::Sub)
          for (std::size_t i = 0; i < m; ++i) out[i] = A[i] - B[i];
        else
          for (std::size_t i = 0; i < m; ++i) out[i] = A[i] * B[i];
        n.value = std::move(out);
        break;
      }
      case Op::Scale: {
        const ValueGrid& A = in(n, 0);
        ValueGrid out(A.shape);
        for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * n.c;
        n.value = std::move(out);
        break;
      }
      case Op::RowSum: {
        const ValueGrid& A = in(n, 0);
        if (A.rank() != 2) throw ShapeError("row_sum: need matrix, got " + shape_str(A.shape));
        ValueGrid out = ValueGrid::matrix(A.rows(), 1);
        for (std::size_t i = 0; i < A.rows(); ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < A.cols(); ++j) s += A.at(i, j);
          out.at(i, 0) = s;
        }
        n.value = std::move(out);
        break;
      }
      case Op::FullSum: {
        const ValueGrid& A = in(n, 0);
        double s = 0.0;
        for (double v : A.values) s += v;
        n.value = ValueGrid::scalar(s);
        break;
      }
      case Op::LeakyRelu: {
        const ValueGrid& A = in(n, 0);
        ValueGrid out(A.shape);
        for (std::size_t i = 0; i < A.size(); ++i)
          out[i] = A[i] > 0.0 ? A[i] : n.c * A[i];
        n.value = std::move(out);
        break;
      }
      case Op::RowSoftmax: {
        const ValueGrid& A = in(n, 0);
        if (A.rank() != 2) throw ShapeError("row_softmax: need matrix, got " + shape_str(A.shape));
        ValueGrid out(A.shape);
        for (std::size_t i = 0; i < A.rows(); ++i) {
          double mx = -1e300;
          for (std::size_t j = 0; j < A.cols(); ++j) mx = std::max(mx, A.at(i, j));
          double z = 0.0;
          for (std::size_t j = 0; j < A.cols(); ++j) {
            double e = std::exp(A.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
          }
          for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) /= z;
        }
        n.value = std::move(out);
        break;
      }
      case Op::Reshape: {
        const ValueGrid& A = in(n, 0);
        if (ValueGrid::count(n.target_shape) != A.size())
          throw ShapeError("reshape: element count mismatch " + shape_str(A.shape) +
                           " vs " + shape_str(n.target_shape));
        ValueGrid out = A;
        out.shape = n.target_shape;
        n.value = std::move(out);
        break;
      }
      case Op::ConcatRows: {
        const ValueGrid& A = in(n, 0);
        const ValueGrid& B = in(n, 1);
        if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
          throw ShapeError("concat rows: incompatible shapes " + shape_str(A.shape) +
                           " vs " + shape_str(B.shape));
        ValueGrid out = ValueGrid::matrix(A.rows() + B.rows(), A.cols());
        std::copy(A.values.begin(), A.values.end(), out.values.begin());
        std::copy(B.values.begin(), B.values.end(), out.values.begin() + long(A.size()));
        n.value = std::move(out);
        break;
      }
      case Op::ConcatCols: {
        const ValueGrid& A = in(n, 0);
        const ValueGrid& B = in(n, 1);
        if (A.rank() != 2 || B.rank() != 2 || A.rows() != B.rows())
          throw ShapeError("concat cols: incompatible shapes " + shape_str(A.shape) +
                           " vs " + shape_str(B.shape));
        ValueGrid out = ValueGrid::matrix(A.rows(), A.cols() + B.cols());
        for (std::size_t i = 0; i < A.rows(); ++i) {
          for (std::size_t j = 0; j < A.cols(); ++j) out.at(i, j) = A.at(i, j);
          for (std::size_t j = 0; j < B.cols(); ++j) out.at(i, A.cols() + j) = B.at(i, j);
        }
        n.value = std::move(out);
        break;
      }
      case Op::SliceRows: {
        const ValueGrid& A = in(n, 0);
        if (A.rank() != 2 || n.i1 > A.rows() || n.i0 >= n.i1)
          throw ShapeError("slice_rows: range [" + std::to_string(n.i0) + "," +
                           std::to_string(n.i1) + ") invalid for " + shape_str(A.shape));
        ValueGrid out = ValueGrid::matrix(n.i1 - n.i0, A.cols());
        std::copy(A.values.begin() + long(n.i0 * A.cols()),
                  A.values.begin() + long(n.i1 * A.cols()), out.values.begin());
        n.value = std::move(out);
        break;
      }
      case Op::BroadcastRows: {
        const ValueGrid& A = in(n, 0);
        if (A.rank() != 2 || A.rows() != 1)
          throw ShapeError("broadcast_rows: need 1-row matrix, got " + shape_str(A.shape));
        ValueGrid out = ValueGrid::matrix(n.i0, A.cols());
        for (std::size_t i = 0; i < n.i0; ++i)
          std::copy(A.values.begin(), A.values.end(), out.values.begin() + long(i * A.cols()));
        n.value = std::move(out);
        break;
      }
    }
    check_finite(n.value, op_name(n.op));
  }

  ValueGrid& g(int id) { return nodes_[std::size_t(id)].grad; }
  bool wants(int id) const { return id >= 0 && nodes_[std::size_t(id)].needs_grad; }

  void propagate(Node& n) {
    const ValueGrid& gy = n.grad;
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::MatMul: {
        const ValueGrid& A = in(n, 0);
        const ValueGrid& B = in(n, 1);
        if (wants(n.a)) mm_nt_acc(gy, B, g(n.a));  // dA += gy * B^T
        if (wants(n.b)) mm_tn_acc(A, gy, g(n.b));  // dB += A^T * gy
        break;
      }
      case Op::Transpose: {
        if (!wants(n.a)) break;
        ValueGrid& ga = g(n.a);
        for (std::size_t i = 0; i < gy.rows(); ++i)
          for (std::size_t j = 0; j < gy.cols(); ++j) ga.at(j, i) += gy.at(i, j);
        break;
      }
      case Op::Add:
        if (wants(n.a)) acc(g(n.a), gy, +1.0);
        if (wants(n.b)) acc(g(n.b), gy, +1.0);
        break;
      case Op::Sub:
        if (wants(n.a)) acc(g(n.a), gy, +1.0);
        if (wants(n.b)) acc(g(n.b), gy, -1.0);
        break;
      case Op::Mul: {
        const ValueGrid& A = in(n, 0);
        const ValueGrid& B = in(n, 1);
        if (wants(n.a)) {
          ValueGrid& ga = g(n.a);
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * B[i];
        }
        if (wants(n.b)) {
          ValueGrid& gb = g(n.b);
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * A[i];
        }
        break;
      }
      case Op::Scale:
        if (wants(n.a)) acc(g(n.a), gy, n.c);
        break;
      case Op::RowSum: {
        if (!wants(n.a)) break;
        ValueGrid& ga = g(n.a);
        for (std::size_t i = 0; i < ga.rows(); ++i)
          for (std::size_t j = 0; j < ga.cols(); ++j) ga.at(i, j) += gy.at(i, 0);
        break;
      }
      case Op::FullSum: {
        if (!wants(n.a)) break;
        ValueGrid& ga = g(n.a);
        const double s = gy[0];
        for (double& v : ga.values) v += s;
        break;
      }
      case Op::LeakyRelu: {
        if (!wants(n.a)) break;
        const ValueGrid& A = in(n, 0);
        ValueGrid& ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i)
          ga[i] += gy[i] * (A[i] > 0.0 ? 1.0 : n.c);
        break;
      }
      case Op::RowSoftmax: {
        if (!wants(n.a)) break;
        const ValueGrid& Y = n.value;
        ValueGrid& ga = g(n.a);
        for (std::size_t i = 0; i < Y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < Y.cols(); ++j) dot += gy.at(i, j) * Y.at(i, j);
          for (std::size_t j = 0; j < Y.cols(); ++j)
            ga.at(i, j) += Y.at(i, j) * (gy.at(i, j) - dot);
        }
        break;
      }
      case Op::Reshape: {
        if (!wants(n.a)) break;
        ValueGrid& ga = g(n.a);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
        break;
      }
      case Op::ConcatRows: {
        const std::size_t na = in(n, 0).size();
        if (wants(n.a)) {
          ValueGrid& ga = g(n.a);
          for (std::size_t i = 0; i < na; ++i) ga[i] += gy[i];
        }
        if (wants(n.b)) {
          ValueGrid& gb = g(n.b);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[na + i];
        }
        break;
      }
      case Op::ConcatCols: {
        const ValueGrid& A = in(n, 0);
        if (wants(n.a)) {
          ValueGrid& ga = g(n.a);
          for (std::size_t i = 0; i < A.rows(); ++i)
            for (std::size_t j = 0; j < A.cols(); ++j) ga.at(i, j) += gy.at(i, j);
        }
        if (wants(n.b)) {
          ValueGrid& gb = g(n.b);
          for (std::size_t i = 0; i < gb.rows(); ++i)
            for (std::size_t j = 0; j < gb.cols(); ++j)
              gb.at(i, j) += gy.at(i, A.cols() + j);
        }
        break;
      }
      case Op::SliceRows: {
        if (!wants(n.a)) break;
        ValueGrid& ga = g(n.a);
        const std::size_t m = ga.cols();
        for (std::size_t i = 0; i < gy.rows(); ++i)
          for (std::size_t j = 0; j < m; ++j) ga.at(n.i0 + i, j) += gy.at(i, j);
        break;
      }
      case Op::BroadcastRows: {
        if (!wants(n.a)) break;
        ValueGrid& ga = g(n.a);
        for (std::size_t i = 0; i < gy.rows(); ++i)
          for (std::size_t j = 0; j < gy.cols(); ++j) ga.at(0, j) += gy.at(i, j);
        break;
      }
    }
  }

  static void acc(ValueGrid& dst, const ValueGrid& src, double k) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += k * src[i];
  }

  // C = A * B
  static ValueGrid mm_nn(const ValueGrid& A, const ValueGrid& B) {
    const std::size_t n = A.rows(), m = A.cols(), p = B.cols();
    ValueGrid C = ValueGrid::matrix(n, p);
    for (std::size_t i = 0; i < n; ++i) {
      double* ci = &C.values[i * p];
      const double* ai = &A.values[i * m];
      for (std::size_t k = 0; k < m; ++k) {
        const double a = ai[k];
        if (a == 0.0) continue;
        const double* bk = &B.values[k * p];
        for (std::size_t j = 0; j < p; ++j) ci[j] += a * bk[j];
      }
    }
    return C;
  }

  // C += A * B^T
  static void mm_nt_acc(const ValueGrid& A, const ValueGrid& B, ValueGrid& C) {
    const std::size_t n = A.rows(), m = A.cols(), p = B.rows();
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = &A.values[i * m];
      double* ci = &C.values[i * p];
      for (std::size_t j = 0; j < p; ++j) {
        const double* bj = &B.values[j * m];
        double s = 0.0;
        for (std::size_t k = 0; k < m; ++k) s += ai[k] * bj[k];
        ci[j] += s;
      }
    }
  }

  // C += A^T * B
  static void mm_tn_acc(const ValueGrid& A, const ValueGrid& B, ValueGrid& C) {
    const std::size_t n = A.rows(), m = A.cols(), p = B.cols();
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = &A.values[i * m];
      const double* bi = &B.values[i * p];
      for (std::size_t k = 0; k < m; ++k) {
        const double a = ai[k];
        if (a == 0.0) continue;
        double* ck = &C.values[k * p];
        for (std::size_t j = 0; j < p; ++j) ck[j] += a * bi[j];
      }
    }
  }

  std::vector<Node> nodes_;
  bool fresh_ = true;
  bool backward_ran_ = false;
};

}  // namespace nao
