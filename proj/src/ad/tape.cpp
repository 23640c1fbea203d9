#include "nsdf/ad/tape.hpp"

#include <algorithm>
#include <cmath>

namespace nsdf::ad {

namespace {

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow.
double log_sigmoid(double z) {
  if (z >= 0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

void same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

// ---- tape ------------------------------------------------------------------

Var Tape::constant(MatX value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const VecX& params, VecX* grad, const ParamBlock& block) {
  Node n;
  n.value = Eigen::Map<const MatX>(params.data() + block.offset, block.rows, block.cols);
  n.requires_grad = record_ && grad != nullptr;
  n.param_grad = grad;
  n.block = block;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(MatX value, std::initializer_list<Var> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (const Var& p : parents) {
      if (nodes_[p.id].requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const MatX& g) { accumulate_expr(id, g); }

void Tape::backward(const std::vector<std::pair<Var, MatX>>& seeds) {
  for (const auto& [v, g] : seeds) {
    if (v.tape != this) throw ValidationError("backward: seed from a different tape");
    if (g.rows() != v.rows() || g.cols() != v.cols()) {
      throw ValidationError("backward: seed gradient shape mismatch");
    }
    accumulate(v.id, g);
  }
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, id);
    } else if (n.param_grad != nullptr) {
      Eigen::Map<MatX>(n.param_grad->data() + n.block.offset, n.block.rows, n.block.cols) += n.grad;
    }
  }
}

void Tape::backward(Var scalar) {
  if (scalar.rows() != 1 || scalar.cols() != 1) throw ValidationError("backward: loss must be 1x1");
  backward({{scalar, MatX::Ones(1, 1)}});
}

// ---- linear ops ------------------------------------------------------------

Var matmul_wt(Var x, Var w) {
  if (x.cols() != w.cols()) throw ValidationError("matmul_wt: inner dimension mismatch");
  Tape& t = *x.tape;
  MatX y = x.value() * w.value().transpose();
  return t.push(std::move(y), {x, w}, [x, w](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    if (tp.requires_grad(x.id)) tp.accumulate_expr(x.id, g * w.value());
    if (tp.requires_grad(w.id)) tp.accumulate_expr(w.id, g.transpose() * x.value());
  });
}

Var add_row(Var x, Var b) {
  if (b.rows() != 1 || b.cols() != x.cols()) throw ValidationError("add_row: bias shape mismatch");
  MatX y = x.value().rowwise() + b.value().row(0);
  return x.tape->push(std::move(y), {x, b}, [x, b](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    tp.accumulate(x.id, g);
    if (tp.requires_grad(b.id)) tp.accumulate_expr(b.id, g.colwise().sum());
  });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return a.tape->push(a.value() + b.value(), {a, b}, [a, b](Tape& tp, int self) {
    tp.accumulate(a.id, tp.grad(self));
    tp.accumulate(b.id, tp.grad(self));
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return a.tape->push(a.value() - b.value(), {a, b}, [a, b](Tape& tp, int self) {
    tp.accumulate(a.id, tp.grad(self));
    if (tp.requires_grad(b.id)) tp.accumulate_expr(b.id, -tp.grad(self));
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  return a.tape->push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    if (tp.requires_grad(a.id)) tp.accumulate_expr(a.id, g.cwiseProduct(b.value()));
    if (tp.requires_grad(b.id)) tp.accumulate_expr(b.id, g.cwiseProduct(a.value()));
  });
}

Var mul_col(Var x, Var w) {
  if (w.cols() != 1 || w.rows() != x.rows()) throw ValidationError("mul_col: weight must be N x 1");
  MatX y = x.value().array().colwise() * w.value().col(0).array();
  return x.tape->push(std::move(y), {x, w}, [x, w](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    if (tp.requires_grad(x.id)) {
      tp.accumulate_expr(x.id, (g.array().colwise() * w.value().col(0).array()).matrix());
    }
    if (tp.requires_grad(w.id)) {
      tp.accumulate_expr(w.id, g.cwiseProduct(x.value()).rowwise().sum());
    }
  });
}

Var mul_tiled(Var s, Var y) {
  const Eigen::Index n = s.rows();
  if (n == 0 || y.rows() % n != 0 || y.cols() != s.cols()) {
    throw ValidationError("mul_tiled: shape mismatch");
  }
  const Eigen::Index k = y.rows() / n;
  // Column-major: each (column, block) pair is a contiguous segment.
  MatX out(y.rows(), y.cols());
  for (Eigen::Index c = 0; c < y.cols(); ++c)
    for (Eigen::Index b = 0; b < k; ++b)
      out.col(c).segment(b * n, n) = y.value().col(c).segment(b * n, n).cwiseProduct(s.value().col(c));
  return s.tape->push(std::move(out), {s, y}, [s, y, n, k](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    if (tp.requires_grad(s.id)) {
      MatX gs = MatX::Zero(n, s.cols());
      for (Eigen::Index c = 0; c < g.cols(); ++c)
        for (Eigen::Index b = 0; b < k; ++b)
          gs.col(c) += g.col(c).segment(b * n, n).cwiseProduct(y.value().col(c).segment(b * n, n));
      tp.accumulate(s.id, gs);
    }
    if (tp.requires_grad(y.id)) {
      MatX gy(g.rows(), g.cols());
      for (Eigen::Index c = 0; c < g.cols(); ++c)
        for (Eigen::Index b = 0; b < k; ++b)
          gy.col(c).segment(b * n, n) = g.col(c).segment(b * n, n).cwiseProduct(s.value().col(c));
      tp.accumulate(y.id, gy);
    }
  });
}


Var scale(Var x, double c) {
  return x.tape->push(x.value() * c, {x}, [x, c](Tape& tp, int self) {
    tp.accumulate_expr(x.id, tp.grad(self) * c);
  });
}

Var add_scalar(Var x, double c) {
  MatX y = x.value().array() + c;
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) { tp.accumulate(x.id, tp.grad(self)); });
}

Var mul_scalar(Var x, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw ValidationError("mul_scalar: s must be 1x1");
  const double sv = s.value()(0, 0);
  return x.tape->push(x.value() * sv, {x, s}, [x, s, sv](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    if (tp.requires_grad(x.id)) tp.accumulate_expr(x.id, g * sv);
    if (tp.requires_grad(s.id)) {
      tp.accumulate(s.id, MatX::Constant(1, 1, g.cwiseProduct(x.value()).sum()));
    }
  });
}

// ---- pointwise nonlinearities ---------------------------------------------

Var exp(Var x) {
  MatX y = x.value().array().exp();
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) {
    tp.accumulate_expr(x.id, tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

Var relu(Var x) {
  MatX y = x.value().cwiseMax(0.0);
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) {
    tp.accumulate_expr(x.id, (x.value().array() > 0.0).select(tp.grad(self), 0.0).matrix());
  });
}

Var abs(Var x) {
  MatX y = x.value().cwiseAbs();
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) {
    const auto sign = (x.value().array() > 0.0).cast<double>() - (x.value().array() < 0.0).cast<double>();
    tp.accumulate_expr(x.id, (tp.grad(self).array() * sign).matrix());
  });
}

Var square(Var x) {
  MatX y = x.value().array().square();
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) {
    tp.accumulate_expr(x.id, (2.0 * tp.grad(self).array() * x.value().array()).matrix());
  });
}

Var sigmoid(Var x) {
  MatX y = x.value().unaryExpr([](double z) { return stable_sigmoid(z); });
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) {
    const auto& s = tp.value(self).array();
    tp.accumulate_expr(x.id, (tp.grad(self).array() * s * (1.0 - s)).matrix());
  });
}

Var softplus(Var x, double beta) {
  MatX y = x.value().unaryExpr([beta](double z) {
    const double bz = beta * z;
    return (std::max(bz, 0.0) + std::log1p(std::exp(-std::abs(bz)))) / beta;
  });
  return x.tape->push(std::move(y), {x}, [x, beta](Tape& tp, int self) {
    MatX slope = x.value().unaryExpr([beta](double z) { return stable_sigmoid(beta * z); });
    tp.accumulate_expr(x.id, tp.grad(self).cwiseProduct(slope));
  });
}

Var softplus_slope(Var x, double beta) {
  MatX y = x.value().unaryExpr([beta](double z) { return stable_sigmoid(beta * z); });
  return x.tape->push(std::move(y), {x}, [x, beta](Tape& tp, int self) {
    const auto& s = tp.value(self).array();
    tp.accumulate_expr(x.id, (tp.grad(self).array() * beta * s * (1.0 - s)).matrix());
  });
}

// ---- shape ops -------------------------------------------------------------

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const Eigen::Index n = parts.front().rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != n) throw ValidationError("concat_cols: row count mismatch");
    total += p.cols();
  }
  MatX y(n, total);
  Eigen::Index c = 0;
  bool any_grad = false;
  for (const Var& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    any_grad = any_grad || t.requires_grad(p.id);
  }
  // push() only inspects an initializer_list; route grad tracking through the first grad-carrying part.
  Var tracker = parts.front();
  for (const Var& p : parts) {
    if (t.requires_grad(p.id)) {
      tracker = p;
      break;
    }
  }
  return t.push(std::move(y), {tracker}, [parts](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      if (tp.requires_grad(p.id)) tp.accumulate_expr(p.id, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) throw ValidationError("slice_cols: out of range");
  MatX y = x.value().middleCols(start, count);
  return x.tape->push(std::move(y), {x}, [x, start, count](Tape& tp, int self) {
    MatX g = MatX::Zero(x.rows(), x.cols());
    g.middleCols(start, count) = tp.grad(self);
    tp.accumulate(x.id, g);
  });
}

Var slice_rows(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw ValidationError("slice_rows: out of range");
  MatX y = x.value().middleRows(start, count);
  return x.tape->push(std::move(y), {x}, [x, start, count](Tape& tp, int self) {
    MatX g = MatX::Zero(x.rows(), x.cols());
    g.middleRows(start, count) = tp.grad(self);
    tp.accumulate(x.id, g);
  });
}

// ---- reductions ------------------------------------------------------------

Var row_dot(Var a, Var b) {
  same_shape(a, b, "row_dot");
  MatX y = a.value().cwiseProduct(b.value()).rowwise().sum();
  return a.tape->push(std::move(y), {a, b}, [a, b](Tape& tp, int self) {
    const auto g = tp.grad(self).col(0).array();
    if (tp.requires_grad(a.id)) tp.accumulate_expr(a.id, (b.value().array().colwise() * g).matrix());
    if (tp.requires_grad(b.id)) tp.accumulate_expr(b.id, (a.value().array().colwise() * g).matrix());
  });
}

Var row_norm(Var x) {
  MatX y = x.value().rowwise().norm();
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) {
    const MatX& n = tp.value(self);
    MatX g = x.value();
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double denom = n(i, 0);
      g.row(i) *= denom > 0.0 ? tp.grad(self)(i, 0) / denom : 0.0;
    }
    tp.accumulate(x.id, g);
  });
}

Var sum(Var x) {
  MatX y = MatX::Constant(1, 1, x.value().sum());
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) {
    tp.accumulate_expr(x.id, MatX::Constant(x.rows(), x.cols(), tp.grad(self)(0, 0)));
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  if (n == 0) throw ValidationError("mean: empty input");
  return scale(sum(x), 1.0 / n);
}

Var segment_sum(Var x, Eigen::Index group) {
  if (group <= 0 || x.rows() % group != 0) throw ValidationError("segment_sum: rows not divisible by group");
  const Eigen::Index r = x.rows() / group;
  MatX y = MatX::Zero(r, x.cols());
  for (Eigen::Index i = 0; i < r; ++i) y.row(i) = x.value().middleRows(i * group, group).colwise().sum();
  return x.tape->push(std::move(y), {x}, [x, group, r](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    MatX gx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < r; ++i) gx.middleRows(i * group, group).rowwise() = g.row(i);
    tp.accumulate(x.id, gx);
  });
}

Var repeat_rows(Var x, Eigen::Index group) {
  if (group <= 0) throw ValidationError("repeat_rows: group must be positive");
  const Eigen::Index r = x.rows();
  MatX y(r * group, x.cols());
  for (Eigen::Index i = 0; i < r; ++i) y.middleRows(i * group, group).rowwise() = x.value().row(i);
  return x.tape->push(std::move(y), {x}, [x, group, r](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    MatX gx(r, x.cols());
    for (Eigen::Index i = 0; i < r; ++i) gx.row(i) = g.middleRows(i * group, group).colwise().sum();
    tp.accumulate(x.id, gx);
  });
}

Var blocks_to_cols(Var x, Eigen::Index k) {
  if (x.cols() != 1 || k <= 0 || x.rows() % k != 0) throw ValidationError("blocks_to_cols: bad shape");
  const Eigen::Index n = x.rows() / k;
  MatX y = Eigen::Map<const MatX>(x.value().data(), n, k);
  return x.tape->push(std::move(y), {x}, [x](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    tp.accumulate(x.id, Eigen::Map<const MatX>(g.data(), g.size(), 1));
  });
}

// ---- rendering-specific fused ops -----------------------------------------

Var neus_alpha(Var sdf_prev, Var sdf_next, Var s) {
  same_shape(sdf_prev, sdf_next, "neus_alpha");
  if (sdf_prev.cols() != 1) throw ValidationError("neus_alpha: expects N x 1 inputs");
  if (s.rows() != 1 || s.cols() != 1) throw ValidationError("neus_alpha: s must be 1x1");
  const double sv = s.value()(0, 0);
  const MatX& fp = sdf_prev.value();
  const MatX& fn = sdf_next.value();
  MatX alpha(fp.rows(), 1);
  for (Eigen::Index i = 0; i < fp.rows(); ++i) {
    const double d = log_sigmoid(sv * fn(i, 0)) - log_sigmoid(sv * fp(i, 0));
    alpha(i, 0) = std::max(-std::expm1(d), 0.0);
  }
  return sdf_prev.tape->push(std::move(alpha), {sdf_prev, sdf_next, s},
                             [sdf_prev, sdf_next, s, sv](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    const MatX& fp = sdf_prev.value();
    const MatX& fn = sdf_next.value();
    const MatX& a = tp.value(self);
    MatX gp = MatX::Zero(fp.rows(), 1);
    MatX gn = MatX::Zero(fp.rows(), 1);
    double gs = 0.0;
    for (Eigen::Index i = 0; i < fp.rows(); ++i) {
      if (a(i, 0) <= 0.0) continue;
      // alpha = 1 - exp(d), d = logsig(s fn) - logsig(s fp); dlogsig(z)/dz = sigmoid(-z).
      const double dalpha_dd = -(1.0 - a(i, 0));
      const double sn = stable_sigmoid(-sv * fn(i, 0));
      const double sp = stable_sigmoid(-sv * fp(i, 0));
      const double gi = g(i, 0) * dalpha_dd;
      gn(i, 0) = gi * sv * sn;
      gp(i, 0) = -gi * sv * sp;
      gs += gi * (fn(i, 0) * sn - fp(i, 0) * sp);
    }
    if (tp.requires_grad(sdf_prev.id)) tp.accumulate(sdf_prev.id, gp);
    if (tp.requires_grad(sdf_next.id)) tp.accumulate(sdf_next.id, gn);
    if (tp.requires_grad(s.id)) tp.accumulate(s.id, MatX::Constant(1, 1, gs));
  });
}

Var composite_weights(Var alpha, Eigen::Index group) {
  if (alpha.cols() != 1 || group <= 0 || alpha.rows() % group != 0) {
    throw ValidationError("composite_weights: alpha must be (R*group) x 1");
  }
  const Eigen::Index rays = alpha.rows() / group;
  const MatX& a = alpha.value();
  MatX w(a.rows(), 1);
  for (Eigen::Index r = 0; r < rays; ++r) {
    double trans = 1.0;
    for (Eigen::Index k = 0; k < group; ++k) {
      const Eigen::Index i = r * group + k;
      w(i, 0) = a(i, 0) * trans;
      trans *= 1.0 - a(i, 0);
    }
  }
  return alpha.tape->push(std::move(w), {alpha}, [alpha, group, rays](Tape& tp, int self) {
    const MatX& g = tp.grad(self);
    const MatX& a = alpha.value();
    MatX ga(a.rows(), 1);
    std::vector<double> trans(static_cast<std::size_t>(group));
    for (Eigen::Index r = 0; r < rays; ++r) {
      const Eigen::Index base = r * group;
      double t = 1.0;
      for (Eigen::Index k = 0; k < group; ++k) {
        trans[static_cast<std::size_t>(k)] = t;
        t *= 1.0 - a(base + k, 0);
      }
      // acc_k = sum_{i>k} g_i alpha_i prod_{k<j<i} (1 - alpha_j)
      double acc = 0.0;
      for (Eigen::Index k = group - 1; k >= 0; --k) {
        ga(base + k, 0) = trans[static_cast<std::size_t>(k)] * (g(base + k, 0) - acc);
        acc = g(base + k, 0) * a(base + k, 0) + (1.0 - a(base + k, 0)) * acc;
      }
    }
    tp.accumulate(alpha.id, ga);
  });
}

Var bce_mean(Var p, const MatX& target, double eps) {
  if (target.rows() != p.rows() || target.cols() != p.cols()) throw ValidationError("bce_mean: shape mismatch");
  if (p.value().size() == 0) throw ValidationError("bce_mean: empty input");
  const auto n = static_cast<double>(p.value().size());
  double loss = 0.0;
  const MatX& pv = p.value();
  for (Eigen::Index i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(pv.data()[i], eps, 1.0 - eps);
    const double y = target.data()[i];
    loss -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  return p.tape->push(MatX::Constant(1, 1, loss / n), {p}, [p, target, eps, n](Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    const MatX& pv = p.value();
    MatX gp(pv.rows(), pv.cols());
    for (Eigen::Index i = 0; i < pv.size(); ++i) {
      const double raw = pv.data()[i];
      const double y = target.data()[i];
      if (raw < eps || raw > 1.0 - eps) {
        gp.data()[i] = 0.0;
      } else {
        gp.data()[i] = -g * (y / raw - (1.0 - y) / (1.0 - raw)) / n;
      }
    }
    tp.accumulate(p.id, gp);
  });
}

}  // namespace nsdf::ad
