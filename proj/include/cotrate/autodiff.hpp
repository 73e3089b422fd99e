#pragma once

// Reverse-mode differentiation over a small, fixed set of dense matrix ops.
//
// A Tape owns every intermediate value. Ops are free functions taking and
// returning Var handles; Tape::backward seeds a 1x1 root and walks the tape in
// reverse. Non-smooth ops (relu, clamp, sqrt at 0) fold their branch decisions
// into Tape::branch_signature(), which lets finite-difference checks detect
// when a perturbation crosses a kink.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/SparseCore>

#include "cotrate/common.hpp"

namespace cotrate::ad {

class Tape;

class Var {
 public:
  Var() = default;

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that accumulates a gradient.
  Var parameter(Matrix value);
  /// Leaf without gradient.
  Var constant(Matrix value);
  Var constant(double value);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  /// Gradient of the last backward root; zeros when the node was never reached.
  const Matrix& grad(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  void backward(const Var& root);

  std::uint64_t branch_signature() const { return branch_hash_; }
  template <typename Mask>
  void record_branch(const Mask& mask) {
    std::uint64_t h = 1469598103934665603ULL;
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      h ^= static_cast<std::uint64_t>(mask.data()[i]) + 1;
      h *= 1099511628211ULL;
    }
    branch_hash_ = (branch_hash_ ^ h) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL;
  }

  // Used by op implementations.
  Var push(Matrix value, std::initializer_list<int> parents, Backward backward);
  void accumulate(int id, const Matrix& delta);
  const Matrix& node_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::uint64_t branch_hash_ = 0;
  mutable Matrix empty_grad_;
};

// Elementwise and structural ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& x, const Var& row);
Var sub_row(const Var& x, const Var& row);
Var mul_row(const Var& x, const Var& row);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var vconcat(const Var& top, const Var& bottom);
Var select_rows(const Var& a, std::span<const int> rows);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
/// Column means, 1 x cols.
Var mean_rows(const Var& a);
/// Splits rows into `groups` equal consecutive blocks and averages each: groups x cols.
Var segment_mean(const Var& a, int groups);
/// Per-row dot product, n x 1. `b` may be n x c or a broadcast 1 x c row.
Var rows_dot(const Var& a, const Var& b);
/// Divides each row by its L2 norm; rows with norm below eps become zero.
Var normalize_rows(const Var& a, double eps = 1e-12);

/// Valid 1-D convolution over `batch` stacked sequences.
/// x: (batch*len) x c_in, weight: (kernel*c_in) x c_out, bias: 1 x c_out.
/// Output: (batch*(len-kernel+1)) x c_out.
Var conv1d(const Var& x, int batch, const Var& weight, const Var& bias, int kernel);

/// Left-multiplication by a fixed sparse matrix.
Var sparse_matmul(const Eigen::SparseMatrix<double>& m, const Var& x);

struct BatchNormOutput {
  Var out;
  RowVector batch_mean;
  RowVector batch_var;  // biased
};
/// Training-mode batch normalization over rows.
BatchNormOutput batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

/// Mean squared error over all entries.
Var mse(const Var& a, const Var& b);

// Finite-difference checking.

struct GradCheckResult {
  double max_rel_error = 0.0;
  int compared = 0;
  int skipped_kinks = 0;
};

/// Compares reverse-mode gradients with central differences for every entry of
/// every parameter. `loss` builds the scalar loss on the given tape from the
/// parameter handles. Entries whose +/- perturbation changes the tape's branch
/// signature are skipped. Relative error is |a-b| / max(|a|, |b|, floor).
GradCheckResult grad_check(std::span<Matrix* const> params,
                           const std::function<Var(Tape&, std::span<const Var>)>& loss,
                           double eps, double floor = 1e-6);

}  // namespace cotrate::ad
