#pragma once

// Reverse-mode tape over dense row-batched matrices.
//
// Every node holds an N x C matrix (rows are batch entries). Backward closures
// are first order only; second-order quantities (the Eikonal term needs
// d|grad_p f|/d theta) are obtained by propagating forward-mode tangents as
// ordinary recorded operations, so a single reverse sweep covers them.

#include <functional>
#include <vector>

#include "nsdf/common.hpp"

namespace nsdf::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] const MatX& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] bool valid() const { return tape != nullptr && id >= 0; }
};

/// Contiguous block of a flat parameter vector viewed as a rows x cols matrix (column-major).
struct ParamBlock {
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  [[nodiscard]] Eigen::Index size() const { return rows * cols; }
};

class Tape {
 public:
  /// With `record = false` nothing requires grad and no closures are kept.
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(MatX value);
  /// Leaf bound to `params[block]`. Its gradient is added into `(*grad)[block]` by backward().
  Var param(const VecX& params, VecX* grad, const ParamBlock& block);

  /// Seeds the given nodes with upstream gradients and sweeps the tape once.
  void backward(const std::vector<std::pair<Var, MatX>>& seeds);
  /// Convenience: seed a 1x1 scalar node with 1.
  void backward(Var scalar);

  [[nodiscard]] const MatX& value(int id) const { return nodes_[id].value; }
  [[nodiscard]] const MatX& grad(int id) const { return nodes_[id].grad; }
  [[nodiscard]] bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  [[nodiscard]] bool recording() const { return record_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  using Backward = std::function<void(Tape&, int self)>;
  Var push(MatX value, std::initializer_list<Var> parents, Backward backward);
  void accumulate(int id, const MatX& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    MatX value;
    MatX grad;
    bool requires_grad = false;
    Backward backward;
    VecX* param_grad = nullptr;
    ParamBlock block;
  };
  std::vector<Node> nodes_;
  bool record_;
};

inline const MatX& Var::value() const { return tape->value(id); }

// ---- ops -------------------------------------------------------------------

/// X * W^T with X: N x in, W: out x in.
Var matmul_wt(Var x, Var w);
/// X + broadcast row b (1 x C).
Var add_row(Var x, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Scales every column of x (N x C) by the per-row weight w (N x 1).
Var mul_col(Var x, Var w);
/// y (kN x C) with each k-block multiplied by s (N x C).
Var mul_tiled(Var s, Var y);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
/// Multiplies x by the 1x1 node s.
Var mul_scalar(Var x, Var s);
Var exp(Var x);
Var relu(Var x);
Var abs(Var x);
Var square(Var x);
Var sigmoid(Var x);
/// log(1 + exp(beta x)) / beta.
Var softplus(Var x, double beta);
/// d softplus / dx = sigmoid(beta x).
Var softplus_slope(Var x, double beta);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var x, Eigen::Index start, Eigen::Index count);
/// Row-wise dot product of two N x C nodes -> N x 1.
Var row_dot(Var a, Var b);
/// Row-wise Euclidean norm -> N x 1.
Var row_norm(Var x);
/// Sum of all entries -> 1 x 1.
Var sum(Var x);
Var mean(Var x);
/// Sums consecutive groups of `group` rows: (R*group) x C -> R x C.
Var segment_sum(Var x, Eigen::Index group);
/// Repeats each row `group` times: R x C -> (R*group) x C.
Var repeat_rows(Var x, Eigen::Index group);
/// Stacked column blocks (k*N x 1) -> N x k; block j becomes column j.
Var blocks_to_cols(Var x, Eigen::Index k);

/// Unbiased SDF-to-opacity alpha for a section with endpoint SDF estimates (prev, next):
/// alpha = max((Phi_s(prev) - Phi_s(next)) / Phi_s(prev), 0), Phi_s(x) = sigmoid(s x). s is 1x1.
Var neus_alpha(Var sdf_prev, Var sdf_next, Var s);
/// Front-to-back compositing weights W_i = alpha_i prod_{j<i} (1 - alpha_j) for rays of `group` samples.
Var composite_weights(Var alpha, Eigen::Index group);
/// Mean binary cross-entropy between probabilities p (clamped to [eps, 1-eps]) and targets.
Var bce_mean(Var p, const MatX& target, double eps);

}  // namespace nsdf::ad
