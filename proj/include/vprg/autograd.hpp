#ifndef VPRG_AUTOGRAD_HPP_
#define VPRG_AUTOGRAD_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vprg/tensor.hpp"

namespace vprg::ad {

// Reverse-mode automatic differentiation over Tensor values. Each op records
// its inputs and a pull-back closure; backward() walks the tape in reverse
// creation order, which is always a valid topological order.
struct Node {
  Tensor value;
  Tensor grad;               // allocated lazily on first accumulation
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> pullback;

  void accumulate(const Tensor& g);
  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor v);
  static Var param(Tensor v);     // leaf with requires_grad

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  Tensor& grad() { return node_->ensure_grad(); }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();

  double scalar() const;          // value of a single-element tensor

  std::shared_ptr<Node> node() const { return node_; }
  static Var wrap(std::shared_ptr<Node> n) { Var v; v.node_ = std::move(n); return v; }

 private:
  std::shared_ptr<Node> node_;
};

// Seeds d(root)/d(root) = 1 (root must hold exactly one element) and
// accumulates gradients into every reachable node that requires them.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);          // Hadamard
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var one_minus(const Var& a);                  // 1 - a
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var relu(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var sqrt_op(const Var& a);
Var square(const Var& a);
Var clamp(const Var& a, double lo, double hi);   // pass-through gradient inside [lo,hi]
Var detach(const Var& a);

// ---- linear algebra (rank-2 operands) ----
Var matmul(const Var& a, const Var& b);        // (n,k) x (k,m)
Var matmul_nt(const Var& a, const Var& b);     // a * b^T
Var transpose(const Var& a);
Var linear(const Var& x, const Var& w, const Var& b);   // x*w + b, b broadcast over rows
Var mul_rowvec(const Var& x, const Var& v);    // (n,d) ⊙ broadcast (1,d)
Var mul_colvec(const Var& x, const Var& s);    // (n,d) ⊙ broadcast (n,1)
Var add_rowvec(const Var& x, const Var& v);
Var rows_l2_normalize(const Var& x);           // each row divided by its L2 norm

// ---- shape / selection ----
Var concat_rows(const std::vector<Var>& xs);
Var concat_cols(const std::vector<Var>& xs);
Var slice_rows(const Var& x, std::size_t r0, std::size_t r1);   // [r0, r1)
Var slice_cols(const Var& x, std::size_t c0, std::size_t c1);
Var select_rows(const Var& x, const std::vector<std::size_t>& idx);  // gather, repeats allowed
Var row(const Var& x, std::size_t r);
Var cell(const Var& x, std::size_t r, std::size_t c);           // 1x1
Var diag(const Var& x);                                         // (n,n) -> (n,1)
Var reshape(const Var& x, std::vector<std::size_t> shape);

// ---- reductions / normalizations ----
Var sum_all(const Var& x);                    // -> 1x1
Var mean_all(const Var& x);
Var mean_rows(const Var& x);                  // (n,d) -> (1,d)
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);
Var logsumexp_rows(const Var& x);             // (n,d) -> (n,1)
Var pick_per_row(const Var& x, const std::vector<std::size_t>& cols);  // (n,1)
Var mul_scalar(const Var& x, const Var& s);   // s is 1x1
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// Row i of the output is the elementwise max of x rows [spans[i].first,
// spans[i].second]; gradient routes to the argmax row per coordinate.
Var span_max_rows(const Var& x, const std::vector<std::pair<std::size_t, std::size_t>>& spans);

// Scatter n cell-rows into a {K,K,d} grid at the given (i,j) slots, zeros
// elsewhere; grid_to_cells is the inverse gather.
Var cells_to_grid(const Var& cells, std::size_t K,
                  const std::vector<std::pair<std::size_t, std::size_t>>& slots);
Var grid_to_cells(const Var& grid,
                  const std::vector<std::pair<std::size_t, std::size_t>>& slots);

// 3x3 same-padding convolution over a {K,K,din} grid. Weights are
// {dout, din*9} (kernel taps fastest, row-major dy,dx), bias {1, dout}.
Var conv3x3(const Var& grid, const Var& w, const Var& b);

}  // namespace vprg::ad

#endif  // VPRG_AUTOGRAD_HPP_
