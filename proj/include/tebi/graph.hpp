#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tebi/tensor.hpp"

namespace tebi {

// A trainable leaf. Lives outside any Graph; backward() accumulates into grad.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Tape-based reverse-mode autodiff over Tensor values.
// Nodes are recorded in construction order, which is a topological order by
// construction; backward walks the tape in reverse. One Graph per forward
// pass; a Graph is single-threaded, distinct Graphs are independent.
class Graph {
 public:
  using V = int;

  enum class Op {
    Leaf,
    Constant,
    Matmul,
    Transpose,
    Add,        // same shape, or rhs is a 1xC bias added to every row
    Mul,        // elementwise, same shape
    RowScale,   // A (m x n) scaled elementwise per row by s (1 x n)
    ScalarMul,  // s (1x1) times M
    ConcatCols,
    ConcatRows,
    SliceCols,
    Tanh,
    Sigmoid,
    Gelu,
    SoftmaxRows,
    RmsNorm,
    Embed,
    CrossEntropy,
    Mean,
    Scale,  // constant factor
  };

  V leaf(Parameter& p) {
    Node n;
    n.op = Op::Leaf;
    n.val = p.value;
    n.param = &p;
    return push(std::move(n));
  }

  V constant(Tensor t) {
    Node n;
    n.op = Op::Constant;
    n.val = std::move(t);
    return push(std::move(n));
  }

  V matmul(V a, V b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    if (A.cols != B.rows) {
      std::ostringstream os;
      os << "matmul: inner dimensions differ, " << A.shape_str() << " * " << B.shape_str();
      throw std::invalid_argument(os.str());
    }
    Node n;
    n.op = Op::Matmul;
    n.in = {a, b};
    n.val = matmul_values(A, B, false, false);
    return push(std::move(n));
  }

  V transpose(V a) {
    const Tensor& A = val(a);
    Tensor out(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < A.cols; ++j) out.at(j, i) = A.at(i, j);
    Node n;
    n.op = Op::Transpose;
    n.in = {a};
    n.val = std::move(out);
    return push(std::move(n));
  }

  V add(V a, V b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    if (A.same_shape(B)) {
      n.val = A;
      for (size_t i = 0; i < B.size(); ++i) n.val.data[i] += B.data[i];
    } else if (B.rows == 1 && B.cols == A.cols) {
      // bias vector over rows; the only broadcast add allows
      n.val = A;
      for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) n.val.at(i, j) += B.at(0, j);
    } else {
      std::ostringstream os;
      os << "add: shape mismatch " << A.shape_str() << " + " << B.shape_str();
      throw std::invalid_argument(os.str());
    }
    return push(std::move(n));
  }

  V mul(V a, V b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require_same_shape(A, B, "mul");
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.val = A;
    for (size_t i = 0; i < B.size(); ++i) n.val.data[i] *= B.data[i];
    return push(std::move(n));
  }

  V row_scale(V a, V s) {
    const Tensor& A = val(a);
    const Tensor& S = val(s);
    if (S.rows != 1 || S.cols != A.cols) {
      std::ostringstream os;
      os << "row_scale: scale must be 1x" << A.cols << ", got " << S.shape_str();
      throw std::invalid_argument(os.str());
    }
    Node n;
    n.op = Op::RowScale;
    n.in = {a, s};
    n.val = A;
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < A.cols; ++j) n.val.at(i, j) *= S.at(0, j);
    return push(std::move(n));
  }

  V scalar_mul(V s, V m) {
    const Tensor& S = val(s);
    const Tensor& M = val(m);
    if (S.rows != 1 || S.cols != 1)
      throw std::invalid_argument("scalar_mul: first argument must be 1x1, got " + S.shape_str());
    Node n;
    n.op = Op::ScalarMul;
    n.in = {s, m};
    n.val = M;
    for (auto& x : n.val.data) x *= S.data[0];
    return push(std::move(n));
  }

  V concat_cols(const std::vector<V>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input list");
    int rows = val(parts[0]).rows;
    int cols = 0;
    for (V p : parts) {
      if (val(p).rows != rows)
        throw std::invalid_argument("concat_cols: row counts differ, " +
                                    val(parts[0]).shape_str() + " vs " + val(p).shape_str());
      cols += val(p).cols;
    }
    Tensor out(rows, cols);
    int off = 0;
    for (V p : parts) {
      const Tensor& P = val(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < P.cols; ++j) out.at(i, off + j) = P.at(i, j);
      off += P.cols;
    }
    Node n;
    n.op = Op::ConcatCols;
    n.in = parts;
    n.val = std::move(out);
    return push(std::move(n));
  }

  V concat_rows(const std::vector<V>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input list");
    int cols = val(parts[0]).cols;
    int rows = 0;
    for (V p : parts) {
      if (val(p).cols != cols)
        throw std::invalid_argument("concat_rows: column counts differ, " +
                                    val(parts[0]).shape_str() + " vs " + val(p).shape_str());
      rows += val(p).rows;
    }
    Tensor out(rows, cols);
    int off = 0;
    for (V p : parts) {
      const Tensor& P = val(p);
      for (int i = 0; i < P.rows; ++i)
        for (int j = 0; j < cols; ++j) out.at(off + i, j) = P.at(i, j);
      off += P.rows;
    }
    Node n;
    n.op = Op::ConcatRows;
    n.in = parts;
    n.val = std::move(out);
    return push(std::move(n));
  }

  V slice_cols(V a, int c0, int c1) {
    const Tensor& A = val(a);
    if (c0 < 0 || c1 > A.cols || c0 >= c1) {
      std::ostringstream os;
      os << "slice_cols: range [" << c0 << "," << c1 << ") invalid for " << A.shape_str();
      throw std::invalid_argument(os.str());
    }
    Tensor out(A.rows, c1 - c0);
    for (int i = 0; i < A.rows; ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = A.at(i, j);
    Node n;
    n.op = Op::SliceCols;
    n.in = {a};
    n.a = c0;
    n.b = c1;
    n.val = std::move(out);
    return push(std::move(n));
  }

  V tanh(V a) { return unary(Op::Tanh, a, [](double x) { return std::tanh(x); }); }

  V sigmoid(V a) {
    return unary(Op::Sigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  }

  // tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
  V gelu(V a) {
    return unary(Op::Gelu, a, [](double x) {
      const double k = std::sqrt(2.0 / std::numbers::pi);
      return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
    });
  }

  V softmax_rows(V a) {
    const Tensor& A = val(a);
    Tensor out(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < A.cols; ++j) mx = std::max(mx, A.at(i, j));
      double sum = 0.0;
      for (int j = 0; j < A.cols; ++j) {
        double e = std::exp(A.at(i, j) - mx);
        out.at(i, j) = e;
        sum += e;
      }
      for (int j = 0; j < A.cols; ++j) out.at(i, j) /= sum;
    }
    Node n;
    n.op = Op::SoftmaxRows;
    n.in = {a};
    n.val = std::move(out);
    return push(std::move(n));
  }

  // Per-row x / sqrt(mean(x^2) + eps); the learned scale is applied
  // separately via row_scale.
  V rms_norm(V a) {
    const Tensor& A = val(a);
    Tensor out(A.rows, A.cols);
    Tensor rms(A.rows, 1);
    for (int i = 0; i < A.rows; ++i) {
      double ms = 0.0;
      for (int j = 0; j < A.cols; ++j) ms += A.at(i, j) * A.at(i, j);
      ms = ms / A.cols + kRmsEps;
      double r = std::sqrt(ms);
      rms.at(i, 0) = r;
      for (int j = 0; j < A.cols; ++j) out.at(i, j) = A.at(i, j) / r;
    }
    Node n;
    n.op = Op::RmsNorm;
    n.in = {a};
    n.val = std::move(out);
    n.aux = std::move(rms);
    return push(std::move(n));
  }

  V embed(V table, std::vector<int> ids) {
    const Tensor& T = val(table);
    for (int id : ids)
      if (id < 0 || id >= T.rows) {
        std::ostringstream os;
        os << "embed: index " << id << " out of range [0," << T.rows << ")";
        throw std::invalid_argument(os.str());
      }
    Tensor out(static_cast<int>(ids.size()), T.cols);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < T.cols; ++j) out.at(static_cast<int>(i), j) = T.at(ids[i], j);
    Node n;
    n.op = Op::Embed;
    n.in = {table};
    n.idx = std::move(ids);
    n.val = std::move(out);
    return push(std::move(n));
  }

  // Mean of -log softmax(logits_i)[target_i] over rows whose target >= 0
  // (target -1 marks an ignored row). Result is 1x1.
  V cross_entropy(V logits, std::vector<int> targets) {
    const Tensor& L = val(logits);
    if (static_cast<int>(targets.size()) != L.rows)
      throw std::invalid_argument("cross_entropy: need one target per logits row");
    int active = 0;
    for (int t : targets) {
      if (t == -1) continue;
      if (t < 0 || t >= L.cols) {
        std::ostringstream os;
        os << "cross_entropy: target " << t << " out of range [0," << L.cols << ")";
        throw std::invalid_argument(os.str());
      }
      ++active;
    }
    if (active == 0) throw std::invalid_argument("cross_entropy: no active targets");
    Tensor probs(L.rows, L.cols);
    double loss = 0.0;
    for (int i = 0; i < L.rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < L.cols; ++j) mx = std::max(mx, L.at(i, j));
      double sum = 0.0;
      for (int j = 0; j < L.cols; ++j) {
        double e = std::exp(L.at(i, j) - mx);
        probs.at(i, j) = e;
        sum += e;
      }
      for (int j = 0; j < L.cols; ++j) probs.at(i, j) /= sum;
      if (targets[i] >= 0) loss -= std::log(probs.at(i, targets[i]));
    }
    Node n;
    n.op = Op::CrossEntropy;
    n.in = {logits};
    n.idx = std::move(targets);
    n.a = active;
    n.val = Tensor::scalar(loss / active);
    n.aux = std::move(probs);
    return push(std::move(n));
  }

  V mean(V a) {
    const Tensor& A = val(a);
    double s = 0.0;
    for (double v : A.data) s += v;
    Node n;
    n.op = Op::Mean;
    n.in = {a};
    n.val = Tensor::scalar(s / static_cast<double>(A.size()));
    return push(std::move(n));
  }

  V scale(V a, double c) {
    Node n;
    n.op = Op::Scale;
    n.in = {a};
    n.c = c;
    n.val = val(a);
    for (auto& x : n.val.data) x *= c;
    return push(std::move(n));
  }

  const Tensor& value(V v) const { return nodes_[v].val; }

  const Tensor& grad_of(V v) const { return nodes_[v].grad; }

  // Reverse sweep from a scalar loss. Accumulates into Parameter::grad for
  // trainable leaves; forward values are left untouched.
  void backward(V loss) {
    const Tensor& L = val(loss);
    if (L.rows != 1 || L.cols != 1)
      throw std::invalid_argument("backward: loss must be a 1x1 scalar, got " + L.shape_str());
    for (auto& n : nodes_) n.grad = Tensor(n.val.rows, n.val.cols);
    nodes_[loss].grad.data[0] = 1.0;
    for (int i = loss; i >= 0; --i) backprop_node(i);
    for (auto& n : nodes_)
      if (n.op == Op::Leaf && n.param && n.param->trainable) {
        for (size_t k = 0; k < n.grad.size(); ++k) n.param->grad.data[k] += n.grad.data[k];
      }
  }

  size_t node_count() const { return nodes_.size(); }

  static constexpr double kRmsEps = 1e-12;

 private:
  struct Node {
    Op op = Op::Constant;
    std::vector<V> in;
    Tensor val;
    Tensor grad;
    Tensor aux;  // softmax probs, rms denominators
    Parameter* param = nullptr;
    std::vector<int> idx;
    double c = 0.0;
    int a = 0, b = 0;
  };

  std::vector<Node> nodes_;

  const Tensor& val(V v) const { return nodes_[v].val; }

  V push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<V>(nodes_.size() - 1);
  }

  V unary(Op op, V a, const std::function<double(double)>& f) {
    Node n;
    n.op = op;
    n.in = {a};
    n.val = val(a);
    for (auto& x : n.val.data) x = f(x);
    return push(std::move(n));
  }

  static Tensor matmul_values(const Tensor& A, const Tensor& B, bool ta, bool tb) {
    int m = ta ? A.cols : A.rows;
    int k = ta ? A.rows : A.cols;
    int n = tb ? B.rows : B.cols;
    Tensor out(m, n);
    // ikj order so the inner loop is contiguous
    for (int i = 0; i < m; ++i) {
      double* orow = &out.data[static_cast<size_t>(i) * n];
      for (int p = 0; p < k; ++p) {
        double a = ta ? A.at(p, i) : A.at(i, p);
        if (a == 0.0) continue;
        if (!tb) {
          const double* brow = &B.data[static_cast<size_t>(p) * n];
          for (int j = 0; j < n; ++j) orow[j] += a * brow[j];
        } else {
          for (int j = 0; j < n; ++j) orow[j] += a * B.at(j, p);
        }
      }
    }
    return out;
  }

  void backprop_node(int i) {
    Node& n = nodes_[i];
    const Tensor& g = n.grad;
    bool any = false;
    for (double v : g.data)
      if (v != 0.0) {
        any = true;
        break;
      }
    if (!any) return;
    switch (n.op) {
      case Op::Leaf:
      case Op::Constant:
        break;
      case Op::Matmul: {
        const Tensor& A = nodes_[n.in[0]].val;
        const Tensor& B = nodes_[n.in[1]].val;
        accumulate(n.in[0], matmul_values(g, B, false, true));
        accumulate(n.in[1], matmul_values(A, g, true, false));
        break;
      }
      case Op::Transpose: {
        Tensor gt(g.cols, g.rows);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) gt.at(c, r) = g.at(r, c);
        accumulate(n.in[0], std::move(gt));
        break;
      }
      case Op::Add: {
        accumulate(n.in[0], g);
        const Tensor& B = nodes_[n.in[1]].val;
        if (B.same_shape(n.val)) {
          accumulate(n.in[1], g);
        } else {
          Tensor gb(1, g.cols);
          for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < g.cols; ++c) gb.at(0, c) += g.at(r, c);
          accumulate(n.in[1], std::move(gb));
        }
        break;
      }
      case Op::Mul: {
        const Tensor& A = nodes_[n.in[0]].val;
        const Tensor& B = nodes_[n.in[1]].val;
        Tensor ga = g, gb = g;
        for (size_t k = 0; k < g.size(); ++k) {
          ga.data[k] *= B.data[k];
          gb.data[k] *= A.data[k];
        }
        accumulate(n.in[0], std::move(ga));
        accumulate(n.in[1], std::move(gb));
        break;
      }
      case Op::RowScale: {
        const Tensor& A = nodes_[n.in[0]].val;
        const Tensor& S = nodes_[n.in[1]].val;
        Tensor ga(g.rows, g.cols);
        Tensor gs(1, g.cols);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) {
            ga.at(r, c) = g.at(r, c) * S.at(0, c);
            gs.at(0, c) += g.at(r, c) * A.at(r, c);
          }
        accumulate(n.in[0], std::move(ga));
        accumulate(n.in[1], std::move(gs));
        break;
      }
      case Op::ScalarMul: {
        const Tensor& S = nodes_[n.in[0]].val;
        const Tensor& M = nodes_[n.in[1]].val;
        double gs = 0.0;
        Tensor gm = g;
        for (size_t k = 0; k < g.size(); ++k) {
          gs += g.data[k] * M.data[k];
          gm.data[k] *= S.data[0];
        }
        accumulate(n.in[0], Tensor::scalar(gs));
        accumulate(n.in[1], std::move(gm));
        break;
      }
      case Op::ConcatCols: {
        int off = 0;
        for (V p : n.in) {
          const Tensor& P = nodes_[p].val;
          Tensor gp(P.rows, P.cols);
          for (int r = 0; r < P.rows; ++r)
            for (int c = 0; c < P.cols; ++c) gp.at(r, c) = g.at(r, off + c);
          accumulate(p, std::move(gp));
          off += P.cols;
        }
        break;
      }
      case Op::ConcatRows: {
        int off = 0;
        for (V p : n.in) {
          const Tensor& P = nodes_[p].val;
          Tensor gp(P.rows, P.cols);
          for (int r = 0; r < P.rows; ++r)
            for (int c = 0; c < P.cols; ++c) gp.at(r, c) = g.at(off + r, c);
          accumulate(p, std::move(gp));
          off += P.rows;
        }
        break;
      }
      case Op::SliceCols: {
        const Tensor& A = nodes_[n.in[0]].val;
        Tensor ga(A.rows, A.cols);
        for (int r = 0; r < g.rows; ++r)
          for (int c = 0; c < g.cols; ++c) ga.at(r, n.a + c) = g.at(r, c);
        accumulate(n.in[0], std::move(ga));
        break;
      }
      case Op::Tanh: {
        Tensor ga = g;
        for (size_t k = 0; k < g.size(); ++k) {
          double y = n.val.data[k];
          ga.data[k] *= 1.0 - y * y;
        }
        accumulate(n.in[0], std::move(ga));
        break;
      }
      case Op::Sigmoid: {
        Tensor ga = g;
        for (size_t k = 0; k < g.size(); ++k) {
          double y = n.val.data[k];
          ga.data[k] *= y * (1.0 - y);
        }
        accumulate(n.in[0], std::move(ga));
        break;
      }
      case Op::Gelu: {
        const Tensor& X = nodes_[n.in[0]].val;
        const double kc = std::sqrt(2.0 / std::numbers::pi);
        Tensor ga = g;
        for (size_t k = 0; k < g.size(); ++k) {
          double x = X.data[k];
          double u = kc * (x + 0.044715 * x * x * x);
          double t = std::tanh(u);
          double du = kc * (1.0 + 3.0 * 0.044715 * x * x);
          ga.data[k] *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        }
        accumulate(n.in[0], std::move(ga));
        break;
      }
      case Op::SoftmaxRows: {
        const Tensor& Y = n.val;
        Tensor ga(g.rows, g.cols);
        for (int r = 0; r < g.rows; ++r) {
          double dot = 0.0;
          for (int c = 0; c < g.cols; ++c) dot += g.at(r, c) * Y.at(r, c);
          for (int c = 0; c < g.cols; ++c) ga.at(r, c) = Y.at(r, c) * (g.at(r, c) - dot);
        }
        accumulate(n.in[0], std::move(ga));
        break;
      }
      case Op::RmsNorm: {
        const Tensor& X = nodes_[n.in[0]].val;
        const Tensor& rms = n.aux;
        int cdim = g.cols;
        Tensor ga(g.rows, g.cols);
        for (int r = 0; r < g.rows; ++r) {
          double rr = rms.at(r, 0);
          double dot = 0.0;
          for (int c = 0; c < cdim; ++c) dot += g.at(r, c) * X.at(r, c);
          for (int c = 0; c < cdim; ++c)
            ga.at(r, c) = g.at(r, c) / rr - X.at(r, c) * dot / (cdim * rr * rr * rr);
        }
        accumulate(n.in[0], std::move(ga));
        break;
      }
      case Op::Embed: {
        const Tensor& T = nodes_[n.in[0]].val;
        Tensor gt(T.rows, T.cols);
        for (size_t r = 0; r < n.idx.size(); ++r)
          for (int c = 0; c < T.cols; ++c)
            gt.at(n.idx[r], c) += g.at(static_cast<int>(r), c);
        accumulate(n.in[0], std::move(gt));
        break;
      }
      case Op::CrossEntropy: {
        const Tensor& probs = n.aux;
        double gl = g.data[0] / n.a;
        Tensor ga(probs.rows, probs.cols);
        for (int r = 0; r < probs.rows; ++r) {
          if (n.idx[r] < 0) continue;
          for (int c = 0; c < probs.cols; ++c)
            ga.at(r, c) = gl * (probs.at(r, c) - (c == n.idx[r] ? 1.0 : 0.0));
        }
        accumulate(n.in[0], std::move(ga));
        break;
      }
      case Op::Mean: {
        const Tensor& A = nodes_[n.in[0]].val;
        double gv = g.data[0] / static_cast<double>(A.size());
        accumulate(n.in[0], Tensor::full(A.rows, A.cols, gv));
        break;
      }
      case Op::Scale: {
        Tensor ga = g;
        for (auto& x : ga.data) x *= n.c;
        accumulate(n.in[0], std::move(ga));
        break;
      }
    }
  }

  void accumulate(V v, Tensor g) {
    Tensor& dst = nodes_[v].grad;
    for (size_t k = 0; k < g.size(); ++k) dst.data[k] += g.data[k];
  }
};

}  // namespace tebi
