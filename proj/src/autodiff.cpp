#include "cotrate/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace cotrate::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

Var Tape::parameter(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

const Matrix& Tape::grad(int id) const {
  const auto& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.size() == 0) {
    empty_grad_ = Matrix::Zero(node.value.rows(), node.value.cols());
    return empty_grad_;
  }
  return node.grad;
}

Var Tape::push(Matrix value, std::initializer_list<int> parents, Backward backward) {
  Node node;
  node.value = std::move(value);
  for (int p : parents) node.needs_grad = node.needs_grad || nodes_[static_cast<std::size_t>(p)].needs_grad;
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& delta) {
  auto& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.needs_grad) return;
  if (node.grad.size() == 0) {
    node.grad = delta;
  } else {
    node.grad += delta;
  }
}

void Tape::backward(const Var& root) {
  require(root.tape() == this, ErrorKind::InvalidInput, "backward root belongs to another tape");
  require(root.rows() == 1 && root.cols() == 1, ErrorKind::InvalidInput, "backward root must be 1x1");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(root.id())].grad = Matrix::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, id);
  }
}

namespace {

Tape& tape_of(const Var& a) {
  require(a.valid(), ErrorKind::InvalidInput, "uninitialized Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), ErrorKind::InvalidInput,
          "operands live on different tapes");
  return *a.tape();
}

void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::InvalidInput,
          std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(const Var& a, const Var& b) {
  auto& t = tape_of(a, b);
  same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.node_grad(self));
    tp.accumulate(ib, tp.node_grad(self));
  });
}

Var sub(const Var& a, const Var& b) {
  auto& t = tape_of(a, b);
  same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.node_grad(self));
    tp.accumulate(ib, -tp.node_grad(self));
  });
}

Var mul(const Var& a, const Var& b) {
  auto& t = tape_of(a, b);
  same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.needs_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.needs_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var scale(const Var& a, double s) {
  auto& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value() * s, {ia}, [ia, s](Tape& tp, int self) { tp.accumulate(ia, tp.node_grad(self) * s); });
}

Var add_scalar(const Var& a, double s) {
  auto& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().array() + s, {ia}, [ia](Tape& tp, int self) { tp.accumulate(ia, tp.node_grad(self)); });
}

Var add_row(const Var& x, const Var& row) {
  auto& t = tape_of(x, row);
  require(row.rows() == 1 && row.cols() == x.cols(), ErrorKind::InvalidInput, "add_row: shape mismatch");
  const int ix = x.id(), ir = row.id();
  Matrix out = x.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), {ix, ir}, [ix, ir](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(ix, g);
    if (tp.needs_grad(ir)) tp.accumulate(ir, g.colwise().sum());
  });
}

Var sub_row(const Var& x, const Var& row) {
  auto& t = tape_of(x, row);
  require(row.rows() == 1 && row.cols() == x.cols(), ErrorKind::InvalidInput, "sub_row: shape mismatch");
  const int ix = x.id(), ir = row.id();
  Matrix out = x.value().rowwise() - row.value().row(0);
  return t.push(std::move(out), {ix, ir}, [ix, ir](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(ix, g);
    if (tp.needs_grad(ir)) tp.accumulate(ir, -g.colwise().sum());
  });
}

Var mul_row(const Var& x, const Var& row) {
  auto& t = tape_of(x, row);
  require(row.rows() == 1 && row.cols() == x.cols(), ErrorKind::InvalidInput, "mul_row: shape mismatch");
  const int ix = x.id(), ir = row.id();
  Matrix out = x.value().array().rowwise() * row.value().row(0).array();
  return t.push(std::move(out), {ix, ir}, [ix, ir](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.needs_grad(ix)) tp.accumulate(ix, g.array().rowwise() * tp.value(ir).row(0).array());
    if (tp.needs_grad(ir)) tp.accumulate(ir, g.cwiseProduct(tp.value(ix)).colwise().sum());
  });
}

Var matmul(const Var& a, const Var& b) {
  auto& t = tape_of(a, b);
  require(a.cols() == b.rows(), ErrorKind::InvalidInput, "matmul: inner dimension mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.needs_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.needs_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var transpose(const Var& a) {
  auto& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().transpose(), {ia},
                [ia](Tape& tp, int self) { tp.accumulate(ia, tp.node_grad(self).transpose()); });
}

Var relu(const Var& a) {
  auto& t = tape_of(a);
  const int ia = a.id();
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> active = a.value().array() > 0.0;
  t.record_branch(active);
  Matrix out = a.value().cwiseMax(0.0);
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, (x.array() > 0.0).select(tp.node_grad(self), 0.0));
  });
}

Var exp(const Var& a) {
  auto& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value().array().exp();
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.node_grad(self).cwiseProduct(tp.value(self)));
  });
}

Var log(const Var& a) {
  auto& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value().array().log();
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.node_grad(self).cwiseQuotient(tp.value(ia)));
  });
}

Var square(const Var& a) {
  auto& t = tape_of(a);
  const int ia = a.id();
  Matrix out = a.value().array().square();
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, 2.0 * tp.node_grad(self).cwiseProduct(tp.value(ia)));
  });
}

Var sqrt(const Var& a) {
  auto& t = tape_of(a);
  const int ia = a.id();
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> positive = a.value().array() > 0.0;
  t.record_branch(positive);
  Matrix out = a.value().cwiseMax(0.0).array().sqrt();
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    Matrix d = (y.array() > 0.0).select(0.5 * tp.node_grad(self).array() / y.array(), 0.0);
    tp.accumulate(ia, d);
  });
}

Var clamp(const Var& a, double lo, double hi) {
  auto& t = tape_of(a);
  const int ia = a.id();
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> inside =
      (a.value().array() >= lo) && (a.value().array() <= hi);
  t.record_branch(inside);
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.push(std::move(out), {ia}, [ia, lo, hi](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, ((x.array() >= lo) && (x.array() <= hi)).select(tp.node_grad(self), 0.0));
  });
}

Var vconcat(const Var& top, const Var& bottom) {
  auto& t = tape_of(top, bottom);
  require(top.cols() == bottom.cols(), ErrorKind::InvalidInput, "vconcat: column mismatch");
  const int it = top.id(), ib = bottom.id();
  const Eigen::Index rt = top.rows(), rb = bottom.rows();
  Matrix out(rt + rb, top.cols());
  out << top.value(), bottom.value();
  return t.push(std::move(out), {it, ib}, [it, ib, rt, rb](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    if (tp.needs_grad(it)) tp.accumulate(it, g.topRows(rt));
    if (tp.needs_grad(ib)) tp.accumulate(ib, g.bottomRows(rb));
  });
}

Var select_rows(const Var& a, std::span<const int> rows) {
  auto& t = tape_of(a);
  const int ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < a.rows(), ErrorKind::InvalidInput, "select_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  const Eigen::Index src_rows = a.rows();
  return t.push(std::move(out), {ia}, [ia, idx = std::move(idx), src_rows](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    Matrix d = Matrix::Zero(src_rows, g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(ia, d);
  });
}

Var sum(const Var& a) {
  auto& t = tape_of(a);
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return t.push(Matrix::Constant(1, 1, a.value().sum()), {ia}, [ia, r, c](Tape& tp, int self) {
    tp.accumulate(ia, Matrix::Constant(r, c, tp.node_grad(self)(0, 0)));
  });
}

Var mean(const Var& a) {
  require(a.value().size() > 0, ErrorKind::InvalidInput, "mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(const Var& a) {
  auto& t = tape_of(a);
  require(a.rows() > 0, ErrorKind::InvalidInput, "mean_rows of empty matrix");
  const int ia = a.id();
  const Eigen::Index r = a.rows();
  Matrix out = a.value().colwise().mean();
  return t.push(std::move(out), {ia}, [ia, r](Tape& tp, int self) {
    Matrix d = tp.node_grad(self).replicate(r, 1) / static_cast<double>(r);
    tp.accumulate(ia, d);
  });
}

Var segment_mean(const Var& a, int groups) {
  auto& t = tape_of(a);
  require(groups > 0 && a.rows() % groups == 0, ErrorKind::InvalidInput,
          "segment_mean: rows not divisible by groups");
  const int ia = a.id();
  const Eigen::Index len = a.rows() / groups;
  Matrix out(groups, a.cols());
  for (int g = 0; g < groups; ++g) out.row(g) = a.value().middleRows(g * len, len).colwise().mean();
  return t.push(std::move(out), {ia}, [ia, groups, len](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    Matrix d(groups * len, g.cols());
    for (int k = 0; k < groups; ++k) d.middleRows(k * len, len) = g.row(k).replicate(len, 1) / static_cast<double>(len);
    tp.accumulate(ia, d);
  });
}

Var rows_dot(const Var& a, const Var& b) {
  auto& t = tape_of(a, b);
  const bool broadcast = b.rows() == 1 && a.rows() != 1;
  require(a.cols() == b.cols() && (broadcast || a.rows() == b.rows()), ErrorKind::InvalidInput,
          "rows_dot: shape mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix out = broadcast ? Matrix(a.value() * b.value().transpose())
                         : Matrix(a.value().cwiseProduct(b.value()).rowwise().sum());
  return t.push(std::move(out), {ia, ib}, [ia, ib, broadcast](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);  // n x 1
    const Matrix& va = tp.value(ia);
    const Matrix& vb = tp.value(ib);
    if (tp.needs_grad(ia)) {
      if (broadcast) {
        tp.accumulate(ia, g * vb);
      } else {
        tp.accumulate(ia, vb.array().colwise() * g.col(0).array());
      }
    }
    if (tp.needs_grad(ib)) {
      if (broadcast) {
        tp.accumulate(ib, g.transpose() * va);
      } else {
        tp.accumulate(ib, va.array().colwise() * g.col(0).array());
      }
    }
  });
}

Var normalize_rows(const Var& a, double eps) {
  auto& t = tape_of(a);
  const int ia = a.id();
  Vector norms = a.value().rowwise().norm();
  Eigen::Array<bool, Eigen::Dynamic, 1> live = norms.array() >= eps;
  t.record_branch(live);
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (live(i)) {
      out.row(i) /= norms(i);
    } else {
      out.row(i).setZero();
    }
  }
  return t.push(std::move(out), {ia}, [ia, norms, live](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    const Matrix& y = tp.value(self);
    Matrix d = Matrix::Zero(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      if (!live(i)) continue;
      const double proj = g.row(i).dot(y.row(i));
      d.row(i) = (g.row(i) - proj * y.row(i)) / norms(i);
    }
    tp.accumulate(ia, d);
  });
}

Var conv1d(const Var& x, int batch, const Var& weight, const Var& bias, int kernel) {
  auto& t = tape_of(x, weight);
  require(batch > 0 && x.rows() % batch == 0, ErrorKind::InvalidInput, "conv1d: rows not divisible by batch");
  const Eigen::Index len = x.rows() / batch;
  const Eigen::Index cin = x.cols();
  require(kernel >= 1 && kernel <= len, ErrorKind::InvalidInput, "conv1d: kernel longer than sequence");
  require(weight.rows() == kernel * cin, ErrorKind::InvalidInput, "conv1d: weight rows != kernel*c_in");
  require(bias.rows() == 1 && bias.cols() == weight.cols(), ErrorKind::InvalidInput, "conv1d: bias shape");
  const Eigen::Index out_len = len - kernel + 1;
  // im2col: each output row sees `kernel` consecutive input rows laid side by side
  Matrix cols(batch * out_len, kernel * cin);
  const Matrix& xv = x.value();
  for (int b = 0; b < batch; ++b) {
    for (Eigen::Index o = 0; o < out_len; ++o) {
      for (int k = 0; k < kernel; ++k) {
        cols.block(b * out_len + o, k * cin, 1, cin) = xv.row(b * len + o + k);
      }
    }
  }
  Matrix out = cols * weight.value();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id(), iw = weight.id(), ib = bias.id();
  return t.push(std::move(out), {ix, iw, ib},
                [ix, iw, ib, cols = std::move(cols), batch, len, cin, kernel, out_len](Tape& tp, int self) {
                  const Matrix& g = tp.node_grad(self);
                  if (tp.needs_grad(iw)) tp.accumulate(iw, cols.transpose() * g);
                  if (tp.needs_grad(ib)) tp.accumulate(ib, g.colwise().sum());
                  if (tp.needs_grad(ix)) {
                    Matrix dcols = g * tp.value(iw).transpose();
                    Matrix dx = Matrix::Zero(batch * len, cin);
                    for (int b = 0; b < batch; ++b) {
                      for (Eigen::Index o = 0; o < out_len; ++o) {
                        for (int k = 0; k < kernel; ++k) {
                          dx.row(b * len + o + k) += dcols.block(b * out_len + o, k * cin, 1, cin);
                        }
                      }
                    }
                    tp.accumulate(ix, dx);
                  }
                });
}

Var sparse_matmul(const Eigen::SparseMatrix<double>& m, const Var& x) {
  auto& t = tape_of(x);
  require(m.cols() == x.rows(), ErrorKind::InvalidInput, "sparse_matmul: shape mismatch");
  const int ix = x.id();
  Matrix out = m * x.value();
  return t.push(std::move(out), {ix}, [ix, m](Tape& tp, int self) {
    tp.accumulate(ix, m.transpose() * tp.node_grad(self));
  });
}

BatchNormOutput batch_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  auto& t = tape_of(x, gamma);
  require(x.rows() >= 1, ErrorKind::InvalidInput, "batch_norm: empty batch");
  const Eigen::Index n = x.rows();
  RowVector mu = x.value().colwise().mean();
  Matrix centered = x.value().rowwise() - mu;
  RowVector var = centered.array().square().colwise().sum() / static_cast<double>(n);
  RowVector inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  const int ix = x.id();
  Var normalized = t.push(xhat, {ix}, [ix, inv_std, n](Tape& tp, int self) {
    const Matrix& g = tp.node_grad(self);
    const Matrix& xh = tp.value(self);
    RowVector g_mean = g.colwise().mean();
    RowVector gx_mean = g.cwiseProduct(xh).colwise().mean();
    Matrix d = (g.rowwise() - g_mean) - (xh.array().rowwise() * gx_mean.array()).matrix();
    d = d.array().rowwise() * inv_std.array();
    tp.accumulate(ix, d);
    (void)n;
  });
  Var out = add_row(mul_row(normalized, gamma), beta);
  return {out, mu, var};
}

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

GradCheckResult grad_check(std::span<Matrix* const> params,
                           const std::function<Var(Tape&, std::span<const Var>)>& loss, double eps,
                           double floor) {
  require(eps > 0.0, ErrorKind::InvalidInput, "grad_check: eps must be positive");
  auto evaluate = [&](bool with_grad, std::vector<Matrix>* grads, std::uint64_t* signature) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (Matrix* p : params) vars.push_back(with_grad ? tape.parameter(*p) : tape.constant(*p));
    Var l = loss(tape, vars);
    if (signature) *signature = tape.branch_signature();
    if (with_grad) {
      tape.backward(l);
      grads->clear();
      for (const Var& v : vars) grads->push_back(v.grad());
    }
    return l.scalar();
  };

  std::vector<Matrix> analytic;
  std::uint64_t base_sig = 0;
  evaluate(true, &analytic, &base_sig);

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& m = *params[p];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      std::uint64_t sig_plus = 0, sig_minus = 0;
      m.data()[i] = orig + eps;
      const double f_plus = evaluate(false, nullptr, &sig_plus);
      m.data()[i] = orig - eps;
      const double f_minus = evaluate(false, nullptr, &sig_minus);
      m.data()[i] = orig;
      if (sig_plus != base_sig || sig_minus != base_sig) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[p].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.compared;
    }
  }
  return result;
}

}  // namespace cotrate::ad
