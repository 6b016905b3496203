#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vulnmatch/errors.hpp"
#include "vulnmatch/rng.hpp"

namespace vulnmatch {
namespace ad {

template <typename Scalar>
using MatT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tape;

// Lightweight handle into a tape. Values are matrices (rank <= 2); row
// vectors stand in for rank-1 tensors and 1x1 matrices for scalars.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

template <typename Scalar>
class Tape {
 public:
  using Mat = MatT<Scalar>;
  using V = Var<Scalar>;

  // When recording is off, ops compute values only; backward() is unavailable
  // and forward passes are cheaper. Used for evaluation-mode inference.
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  V input(Mat value) { return make(std::move(value), false); }

  V constant(Mat value) { return make(std::move(value), false); }

  // Differentiable leaf owning its value (gradient-check inputs).
  V leaf(Mat value) { return make(std::move(value), recording_); }

  // Differentiable leaf viewing external parameter storage (no copy).
  V param(const Mat& storage) {
    nodes_.push_back(Node{});
    Node& n = nodes_.back();
    n.external = &storage;
    n.requires_grad = recording_;
    return V{this, static_cast<int>(nodes_.size() - 1)};
  }

  const Mat& val(V v) const { return val(v.id); }
  const Mat& val(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.external ? *n.external : n.value;
  }

  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  bool needs_grad(V v) const { return needs_grad(v.id); }

  // Gradient of a node; zeros if backward never touched it.
  Mat grad(V v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.size() == 0) return Mat::Zero(val(v.id).rows(), val(v.id).cols());
    return n.grad;
  }

  const Mat& grad_ref(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(val(id).rows(), val(id).cols());
    return n.grad;
  }

  // In-place gradient accumulation for scatter-style backward passes.
  Mat& mutable_grad(int id) {
    grad_ref(id);
    return nodes_[static_cast<size_t>(id)].grad;
  }

  template <typename Derived>
  void accum_grad(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Adds an external upstream gradient before backward() runs, e.g. to couple
  // a loss computed on another tape into this node.
  void seed(V v, const Mat& g) {
    if (g.rows() != val(v.id).rows() || g.cols() != val(v.id).cols()) {
      raise(ErrorKind::Dimension, "seed gradient shape mismatch");
    }
    accum_grad(v.id, g);
  }

  // Reverse sweep from a scalar loss. Nodes created after seeding targets are
  // visited first, so every seeded node folds its external gradient in before
  // propagating. Visits each node exactly once.
  void backward(V loss) {
    if (!recording_) raise(ErrorKind::Usage, "backward() on a non-recording tape");
    const Mat& lv = val(loss.id);
    if (lv.rows() != 1 || lv.cols() != 1) {
      raise(ErrorKind::Usage, "backward() requires a scalar (1x1) loss");
    }
    accum_grad(loss.id, Mat::Ones(1, 1));
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  // Generic node constructor for ops defined outside this header.
  V make_node(Mat value, bool requires_grad,
              std::function<void(Tape&, int)> backward = nullptr) {
    V v = make(std::move(value), requires_grad && recording_);
    if (v.tape->recording() && requires_grad && backward) {
      nodes_[static_cast<size_t>(v.id)].backward = std::move(backward);
    }
    return v;
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward;
  };

  V make(Mat value, bool requires_grad) {
    nodes_.push_back(Node{});
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return V{this, static_cast<int>(nodes_.size() - 1)};
  }

  bool recording_ = true;
  std::vector<Node> nodes_;
};

namespace detail {

template <typename Scalar>
void check_finite(const MatT<Scalar>& m, const char* op) {
  if (!m.allFinite()) {
    raise(ErrorKind::Numeric, std::string("non-finite output in ") + op);
  }
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename Scalar>
[[noreturn]] void shape_error(const char* op, const MatT<Scalar>& a, const MatT<Scalar>& b) {
  raise(ErrorKind::Dimension, std::string(op) + ": incompatible shapes " +
                                  shape_str(a.rows(), a.cols()) + " and " +
                                  shape_str(b.rows(), b.cols()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive suite. Each op returns a new node; backward closures read parent
// values straight off the tape and save only what the forward destroys.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (A.cols() != B.rows()) detail::shape_error<S>("matmul", A, B);
  MatT<S> y = A * B;
  detail::check_finite(y, "matmul");
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.make_node(std::move(y), req, [a = a.id, b = b.id](Tape<S>& t, int id) {
    const auto& G = t.grad_ref(id);
    if (t.needs_grad(a)) t.accum_grad(a, G * t.val(b).transpose());
    if (t.needs_grad(b)) t.accum_grad(b, t.val(a).transpose() * G);
  });
}

// A * B^T without materializing the transpose.
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (A.cols() != B.cols()) detail::shape_error<S>("matmul_nt", A, B);
  MatT<S> y = A * B.transpose();
  detail::check_finite(y, "matmul_nt");
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.make_node(std::move(y), req, [a = a.id, b = b.id](Tape<S>& t, int id) {
    const auto& G = t.grad_ref(id);
    if (t.needs_grad(a)) t.accum_grad(a, G * t.val(b));
    if (t.needs_grad(b)) t.accum_grad(b, G.transpose() * t.val(a));
  });
}

namespace detail {

enum class Bcast { Same, Row, Col, Scalar };

template <typename Scalar>
Bcast broadcast_kind(const MatT<Scalar>& a, const MatT<Scalar>& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  shape_error<Scalar>(op, a, b);
}

template <typename Scalar>
MatT<Scalar> broadcast_to(const MatT<Scalar>& b, Eigen::Index rows, Eigen::Index cols, Bcast kind) {
  switch (kind) {
    case Bcast::Same: return b;
    case Bcast::Scalar: return MatT<Scalar>::Constant(rows, cols, b(0, 0));
    case Bcast::Row: return b.replicate(rows, 1);
    case Bcast::Col: return b.replicate(1, cols);
  }
  return b;
}

template <typename Scalar>
MatT<Scalar> reduce_like(const MatT<Scalar>& g, Eigen::Index rows, Eigen::Index cols, Bcast kind) {
  switch (kind) {
    case Bcast::Same: return g;
    case Bcast::Scalar: {
      MatT<Scalar> r(1, 1);
      r(0, 0) = g.sum();
      return r;
    }
    case Bcast::Row: return g.colwise().sum();
    case Bcast::Col: return g.rowwise().sum();
  }
  (void)rows;
  (void)cols;
  return g;
}

}  // namespace detail

// add/sub/mul accept an equal-shaped rhs or a broadcastable one: 1x1 scalar,
// 1xC row (bias) or Rx1 column (mask).
template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  auto kind = detail::broadcast_kind(A, B, "add");
  MatT<S> y;
  if (kind == detail::Bcast::Same) {
    y = A + B;
  } else {
    y = A + detail::broadcast_to(B, A.rows(), A.cols(), kind);
  }
  detail::check_finite(y, "add");
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.make_node(std::move(y), req, [a = a.id, b = b.id, kind](Tape<S>& t, int id) {
    const auto& G = t.grad_ref(id);
    if (t.needs_grad(a)) t.accum_grad(a, G);
    if (t.needs_grad(b)) {
      t.accum_grad(b, detail::reduce_like(G, t.val(b).rows(), t.val(b).cols(), kind));
    }
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  auto kind = detail::broadcast_kind(A, B, "sub");
  MatT<S> y = A - detail::broadcast_to(B, A.rows(), A.cols(), kind);
  detail::check_finite(y, "sub");
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.make_node(std::move(y), req, [a = a.id, b = b.id, kind](Tape<S>& t, int id) {
    const auto& G = t.grad_ref(id);
    if (t.needs_grad(a)) t.accum_grad(a, G);
    if (t.needs_grad(b)) {
      t.accum_grad(b, (-detail::reduce_like(G, t.val(b).rows(), t.val(b).cols(), kind)).eval());
    }
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  auto kind = detail::broadcast_kind(A, B, "mul");
  MatT<S> bb = detail::broadcast_to(B, A.rows(), A.cols(), kind);
  MatT<S> y = A.cwiseProduct(bb);
  detail::check_finite(y, "mul");
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.make_node(std::move(y), req, [a = a.id, b = b.id, kind](Tape<S>& t, int id) {
    const auto& G = t.grad_ref(id);
    const auto& A = t.val(a);
    const auto& B = t.val(b);
    if (t.needs_grad(a)) {
      t.accum_grad(a, G.cwiseProduct(detail::broadcast_to(B, A.rows(), A.cols(), kind)));
    }
    if (t.needs_grad(b)) {
      t.accum_grad(b, detail::reduce_like(MatT<S>(G.cwiseProduct(A)), B.rows(), B.cols(), kind));
    }
  });
}

template <typename S>
Var<S> scale(Var<S> a, S factor) {
  Tape<S>& t = *a.tape;
  MatT<S> y = t.val(a) * factor;
  detail::check_finite(y, "scale");
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id, factor](Tape<S>& t, int id) {
    t.accum_grad(a, (t.grad_ref(id) * factor).eval());
  });
}

template <typename S>
Var<S> add_scalar(Var<S> a, S c) {
  Tape<S>& t = *a.tape;
  MatT<S> y = t.val(a).array() + c;
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id](Tape<S>& t, int id) {
    t.accum_grad(a, t.grad_ref(id));
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatT<S> y = ((-t.val(a).array()).exp() + S(1)).inverse();
  detail::check_finite(y, "sigmoid");
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id](Tape<S>& t, int id) {
    const auto& y = t.val(id);
    t.accum_grad(a, MatT<S>(t.grad_ref(id).array() * y.array() * (S(1) - y.array())));
  });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatT<S> y = t.val(a).array().tanh();
  detail::check_finite(y, "tanh");
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id](Tape<S>& t, int id) {
    const auto& y = t.val(id);
    t.accum_grad(a, MatT<S>(t.grad_ref(id).array() * (S(1) - y.array().square())));
  });
}

template <typename S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatT<S> y = t.val(a).cwiseMax(S(0));
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id](Tape<S>& t, int id) {
    const auto& x = t.val(a);
    MatT<S> g = t.grad_ref(id);
    t.accum_grad(a, MatT<S>(g.array() * (x.array() > S(0)).template cast<S>()));
  });
}

// Natural log; domain is the caller's contract (pair with clamp for losses).
template <typename S>
Var<S> log(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatT<S> y = t.val(a).array().log();
  detail::check_finite(y, "log");
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id](Tape<S>& t, int id) {
    t.accum_grad(a, MatT<S>(t.grad_ref(id).array() / t.val(a).array()));
  });
}

// Saturating clamp: zero gradient outside (lo, hi).
template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  Tape<S>& t = *a.tape;
  MatT<S> y = t.val(a).cwiseMax(lo).cwiseMin(hi);
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id, lo, hi](Tape<S>& t, int id) {
    const auto& x = t.val(a);
    const auto& G = t.grad_ref(id);
    MatT<S> gate = ((x.array() > lo) && (x.array() < hi)).template cast<S>();
    t.accum_grad(a, MatT<S>(G.array() * gate.array()));
  });
}

// Elementwise max of two equal-shaped tensors; ties route gradient to a.
template <typename S>
Var<S> emax(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) detail::shape_error<S>("emax", A, B);
  MatT<S> y = A.cwiseMax(B);
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.make_node(std::move(y), req, [a = a.id, b = b.id](Tape<S>& t, int id) {
    const auto& A = t.val(a);
    const auto& B = t.val(b);
    const auto& G = t.grad_ref(id);
    MatT<S> take_a = (A.array() >= B.array()).template cast<S>();
    if (t.needs_grad(a)) t.accum_grad(a, MatT<S>(G.array() * take_a.array()));
    if (t.needs_grad(b)) t.accum_grad(b, MatT<S>(G.array() * (S(1) - take_a.array())));
  });
}

template <typename S>
Var<S> sum_all(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatT<S> y(1, 1);
  y(0, 0) = t.val(a).sum();
  detail::check_finite(y, "sum_all");
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id](Tape<S>& t, int id) {
    S g = t.grad_ref(id)(0, 0);
    t.accum_grad(a, MatT<S>(MatT<S>::Constant(t.val(a).rows(), t.val(a).cols(), g)));
  });
}

template <typename S>
Var<S> reduce_mean(Var<S> a) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  MatT<S> y(1, 1);
  y(0, 0) = A.mean();
  detail::check_finite(y, "reduce_mean");
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id](Tape<S>& t, int id) {
    const auto& A = t.val(a);
    S g = t.grad_ref(id)(0, 0) / static_cast<S>(A.size());
    t.accum_grad(a, MatT<S>(MatT<S>::Constant(A.rows(), A.cols(), g)));
  });
}

// Row-wise max reduction to a column vector; ties take the lowest column.
template <typename S>
Var<S> reduce_max(Var<S> a) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  MatT<S> y(A.rows(), 1);
  std::vector<int> arg(static_cast<size_t>(A.rows()), 0);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    Eigen::Index j = 0;
    y(i, 0) = A.row(i).maxCoeff(&j);
    arg[static_cast<size_t>(i)] = static_cast<int>(j);
  }
  return t.make_node(std::move(y), t.needs_grad(a),
                     [a = a.id, arg = std::move(arg)](Tape<S>& t, int id) {
                       const auto& G = t.grad_ref(id);
                       const auto& A = t.val(a);
                       MatT<S> g = MatT<S>::Zero(A.rows(), A.cols());
                       for (Eigen::Index i = 0; i < A.rows(); ++i) {
                         g(i, arg[static_cast<size_t>(i)]) = G(i, 0);
                       }
                       t.accum_grad(a, g);
                     });
}

template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (A.cols() != B.cols()) detail::shape_error<S>("concat_rows", A, B);
  MatT<S> y(A.rows() + B.rows(), A.cols());
  y.topRows(A.rows()) = A;
  y.bottomRows(B.rows()) = B;
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.make_node(std::move(y), req, [a = a.id, b = b.id](Tape<S>& t, int id) {
    const auto& G = t.grad_ref(id);
    Eigen::Index ra = t.val(a).rows();
    if (t.needs_grad(a)) t.accum_grad(a, G.topRows(ra));
    if (t.needs_grad(b)) t.accum_grad(b, G.bottomRows(G.rows() - ra));
  });
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  const auto& B = t.val(b);
  if (A.rows() != B.rows()) detail::shape_error<S>("concat_cols", A, B);
  MatT<S> y(A.rows(), A.cols() + B.cols());
  y.leftCols(A.cols()) = A;
  y.rightCols(B.cols()) = B;
  bool req = t.needs_grad(a) || t.needs_grad(b);
  return t.make_node(std::move(y), req, [a = a.id, b = b.id](Tape<S>& t, int id) {
    const auto& G = t.grad_ref(id);
    Eigen::Index ca = t.val(a).cols();
    if (t.needs_grad(a)) t.accum_grad(a, G.leftCols(ca));
    if (t.needs_grad(b)) t.accum_grad(b, G.rightCols(G.cols() - ca));
  });
}

// Rectangular slice; gradient scatters back into the source block.
template <typename S>
Var<S> slice(Var<S> a, Eigen::Index row0, Eigen::Index col0, Eigen::Index rows,
             Eigen::Index cols) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  if (row0 < 0 || col0 < 0 || row0 + rows > A.rows() || col0 + cols > A.cols()) {
    raise(ErrorKind::Dimension,
          "slice: block " + detail::shape_str(rows, cols) + " at (" + std::to_string(row0) +
              "," + std::to_string(col0) + ") exceeds " + detail::shape_str(A.rows(), A.cols()));
  }
  MatT<S> y = A.block(row0, col0, rows, cols);
  return t.make_node(std::move(y), t.needs_grad(a),
                     [a = a.id, row0, col0, rows, cols](Tape<S>& t, int id) {
                       const auto& A = t.val(a);
                       MatT<S> g = MatT<S>::Zero(A.rows(), A.cols());
                       g.block(row0, col0, rows, cols) = t.grad_ref(id);
                       t.accum_grad(a, g);
                     });
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index row0, Eigen::Index rows) {
  return slice(a, row0, 0, rows, a.tape->val(a).cols());
}

// Row-wise softmax with an optional key mask (1 = attendable). Masked
// columns get exactly zero probability; fully masked rows are an error.
template <typename S>
Var<S> row_softmax(Var<S> a, const std::vector<uint8_t>& mask = {}) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != A.cols()) {
    raise(ErrorKind::Dimension, "row_softmax: mask length " + std::to_string(mask.size()) +
                                    " vs " + std::to_string(A.cols()) + " columns");
  }
  MatT<S> y(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    S mx = -std::numeric_limits<S>::infinity();
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      if (!mask.empty() && !mask[static_cast<size_t>(j)]) continue;
      mx = std::max(mx, A(i, j));
    }
    if (mx == -std::numeric_limits<S>::infinity()) {
      raise(ErrorKind::Numeric, "row_softmax: fully masked row");
    }
    S sum = S(0);
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      bool on = mask.empty() || mask[static_cast<size_t>(j)];
      S e = on ? std::exp(A(i, j) - mx) : S(0);
      y(i, j) = e;
      sum += e;
    }
    y.row(i) /= sum;
  }
  detail::check_finite(y, "row_softmax");
  return t.make_node(std::move(y), t.needs_grad(a), [a = a.id](Tape<S>& t, int id) {
    const auto& Y = t.val(id);
    const auto& G = t.grad_ref(id);
    MatT<S> dot = (G.array() * Y.array()).rowwise().sum();
    MatT<S> g = Y.array() * (G.array().colwise() - dot.col(0).array());
    t.accum_grad(a, g);
  });
}

// Normalizes each row to zero mean / unit variance, then applies an optional
// learnable gain and bias (1xC each).
template <typename S>
Var<S> layer_norm(Var<S> a, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  bool affine = gain.valid();
  Eigen::Index d = A.cols();
  MatT<S> xhat(A.rows(), d);
  MatT<S> inv_std(A.rows(), 1);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    S mean = A.row(i).mean();
    S var = (A.row(i).array() - mean).square().mean();
    S is = S(1) / std::sqrt(var + eps);
    inv_std(i, 0) = is;
    xhat.row(i) = (A.row(i).array() - mean) * is;
  }
  MatT<S> y;
  if (affine) {
    const auto& g = t.val(gain);
    const auto& b = t.val(bias);
    if (g.cols() != d || b.cols() != d) detail::shape_error<S>("layer_norm", A, g);
    y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  } else {
    y = xhat;
  }
  detail::check_finite(y, "layer_norm");
  bool req = t.needs_grad(a) || (affine && (t.needs_grad(gain) || t.needs_grad(bias)));
  return t.make_node(
      std::move(y), req,
      [a = a.id, gi = gain.id, bi = bias.id, affine, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape<S>& t, int id) {
        const auto& G = t.grad_ref(id);
        Eigen::Index d = G.cols();
        if (affine && t.needs_grad(gi)) {
          t.accum_grad(gi, MatT<S>((G.array() * xhat.array()).colwise().sum()));
        }
        if (affine && t.needs_grad(bi)) {
          t.accum_grad(bi, MatT<S>(G.colwise().sum()));
        }
        if (t.needs_grad(a)) {
          MatT<S> gh = affine ? MatT<S>(G.array().rowwise() * t.val(gi).row(0).array()) : G;
          MatT<S> mean_gh = gh.rowwise().mean();
          MatT<S> mean_ghx = (gh.array() * xhat.array()).rowwise().mean();
          MatT<S> dx(G.rows(), d);
          for (Eigen::Index i = 0; i < G.rows(); ++i) {
            dx.row(i) = (gh.row(i).array() - mean_gh(i, 0) - xhat.row(i).array() * mean_ghx(i, 0)) *
                        inv_std(i, 0);
          }
          t.accum_grad(a, dx);
        }
      });
}

template <typename S>
Var<S> layer_norm(Var<S> a, S eps = S(1e-5)) {
  return layer_norm(a, Var<S>{}, Var<S>{}, eps);
}

// Inverted-scaling dropout: identity when not training. The caller owns the
// stream so draw order is independent of thread scheduling.
template <typename S>
Var<S> dropout(Var<S> a, double rate, RngStream* rng, bool training) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) raise(ErrorKind::Config, "dropout rate must be < 1");
  Tape<S>& t = *a.tape;
  const auto& A = t.val(a);
  S keep_inv = S(1.0 / (1.0 - rate));
  MatT<S> m(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      m(i, j) = rng->next_double() >= rate ? keep_inv : S(0);
    }
  }
  MatT<S> y = A.cwiseProduct(m);
  return t.make_node(std::move(y), t.needs_grad(a),
                     [a = a.id, m = std::move(m)](Tape<S>& t, int id) {
                       t.accum_grad(a, MatT<S>(t.grad_ref(id).cwiseProduct(m)));
                     });
}

// Gathers rows of the embedding table; out-of-range ids are a lookup error.
template <typename S>
Var<S> embedding_lookup(Var<S> table, const std::vector<int>& ids) {
  Tape<S>& t = *table.tape;
  const auto& E = t.val(table);
  MatT<S> y(static_cast<Eigen::Index>(ids.size()), E.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= E.rows()) {
      raise(ErrorKind::Data, "embedding_lookup: id " + std::to_string(ids[i]) +
                                 " outside table of " + std::to_string(E.rows()) + " rows");
    }
    y.row(static_cast<Eigen::Index>(i)) = E.row(ids[i]);
  }
  return t.make_node(std::move(y), t.needs_grad(table),
                     [e = table.id, ids](Tape<S>& t, int id) {
                       if (!t.needs_grad(e)) return;
                       const auto& G = t.grad_ref(id);
                       MatT<S>& eg = t.mutable_grad(e);
                       for (size_t i = 0; i < ids.size(); ++i) {
                         eg.row(ids[i]) += G.row(static_cast<Eigen::Index>(i));
                       }
                     });
}

// One GRU step, batched over rows: x is m x din, h is m x dh. Gate order is
// update (z), reset (r), candidate (c); the new state is (1-z) h + z c.
template <typename S>
struct GruStepParams {
  Var<S> wz, uz, bz;
  Var<S> wr, ur, br;
  Var<S> wh, uh, bh;
};

template <typename S>
Var<S> gru_step(Var<S> x, Var<S> h, const GruStepParams<S>& p) {
  Tape<S>& t = *x.tape;
  const auto& X = t.val(x);
  const auto& H = t.val(h);
  if (X.rows() != H.rows()) detail::shape_error<S>("gru_step", X, H);
  const auto& Wz = t.val(p.wz);
  const auto& Uz = t.val(p.uz);
  if (X.cols() != Wz.rows() || H.cols() != Uz.rows()) detail::shape_error<S>("gru_step", X, Wz);

  auto sig = [](const MatT<S>& m) -> MatT<S> { return ((-m.array()).exp() + S(1)).inverse(); };
  MatT<S> z = sig(MatT<S>(X * Wz + H * Uz + t.val(p.bz).replicate(X.rows(), 1)));
  MatT<S> r = sig(MatT<S>(X * t.val(p.wr) + H * t.val(p.ur) + t.val(p.br).replicate(X.rows(), 1)));
  MatT<S> rh = r.cwiseProduct(H);
  MatT<S> c =
      (X * t.val(p.wh) + rh * t.val(p.uh) + t.val(p.bh).replicate(X.rows(), 1)).array().tanh();
  MatT<S> y = (S(1) - z.array()) * H.array() + z.array() * c.array();
  detail::check_finite(y, "gru_step");

  bool req = t.needs_grad(x) || t.needs_grad(h) || t.needs_grad(p.wz);
  return t.make_node(
      std::move(y), req,
      [x = x.id, h = h.id, wz = p.wz.id, uz = p.uz.id, bz = p.bz.id, wr = p.wr.id, ur = p.ur.id,
       br = p.br.id, wh = p.wh.id, uh = p.uh.id, bh = p.bh.id, z = std::move(z), r = std::move(r),
       c = std::move(c)](Tape<S>& t, int id) {
        const auto& G = t.grad_ref(id);
        const auto& X = t.val(x);
        const auto& H = t.val(h);
        // Pre-activation gradients.
        MatT<S> dc = (G.array() * z.array() * (S(1) - c.array().square())).matrix();
        MatT<S> dz = (G.array() * (c.array() - H.array()) * z.array() * (S(1) - z.array())).matrix();
        MatT<S> drh = dc * t.val(uh).transpose();
        MatT<S> dr = (drh.array() * H.array() * r.array() * (S(1) - r.array())).matrix();

        if (t.needs_grad(x)) {
          t.accum_grad(x, MatT<S>(dz * t.val(wz).transpose() + dr * t.val(wr).transpose() +
                                  dc * t.val(wh).transpose()));
        }
        if (t.needs_grad(h)) {
          MatT<S> dh = (G.array() * (S(1) - z.array())).matrix();
          dh += dz * t.val(uz).transpose() + dr * t.val(ur).transpose();
          dh.array() += drh.array() * r.array();
          t.accum_grad(h, dh);
        }
        if (t.needs_grad(wz)) {
          MatT<S> rh = r.cwiseProduct(H);
          t.accum_grad(wz, MatT<S>(X.transpose() * dz));
          t.accum_grad(uz, MatT<S>(H.transpose() * dz));
          t.accum_grad(bz, MatT<S>(dz.colwise().sum()));
          t.accum_grad(wr, MatT<S>(X.transpose() * dr));
          t.accum_grad(ur, MatT<S>(H.transpose() * dr));
          t.accum_grad(br, MatT<S>(dr.colwise().sum()));
          t.accum_grad(wh, MatT<S>(X.transpose() * dc));
          t.accum_grad(uh, MatT<S>(rh.transpose() * dc));
          t.accum_grad(bh, MatT<S>(dc.colwise().sum()));
        }
      });
}

// Forward value is `target`; the incoming gradient is copied to `v`
// unchanged. No gradient reaches whatever produced `target`.
template <typename S>
Var<S> straight_through(Var<S> v, const MatT<S>& target) {
  Tape<S>& t = *v.tape;
  const auto& V = t.val(v);
  if (V.rows() != target.rows() || V.cols() != target.cols()) {
    detail::shape_error<S>("straight_through", V, target);
  }
  MatT<S> y = target;
  return t.make_node(std::move(y), t.needs_grad(v), [v = v.id](Tape<S>& t, int id) {
    t.accum_grad(v, t.grad_ref(id));
  });
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) {
  return add(a, b);
}
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) {
  return sub(a, b);
}
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) {
  return mul(a, b);
}

}  // namespace ad
}  // namespace vulnmatch
