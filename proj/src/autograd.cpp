#include "vprg/autograd.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace vprg::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MMap = Eigen::Map<RowMat>;
using CMap = Eigen::Map<const RowMat>;

std::atomic<std::uint64_t> g_next_id{1};

CMap cmap(const Tensor& t) {
  return CMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MMap mmap(Tensor& t) {
  return MMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> pullback) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  n->requires_grad = needs;
  if (needs) {
    n->parents = std::move(parents);
    n->pullback = std::move(pullback);
  }
  return n;
}

void check_rank2(const Var& v, const char* op) {
  if (v.value().rank() != 2) throw std::invalid_argument(std::string(op) + ": rank-2 operand required");
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Shared pattern for unary elementwise ops: f computes output from input,
// dfdx computes local derivative from (input, output).
template <typename F, typename D>
Var unary_ew(const Var& a, F f, D dfdx, const char* /*name*/) {
  Tensor out = a.value();
  for (double& v : out.vec()) v = f(v);
  auto node = make_node(std::move(out), {a.node()}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& pg = p.ensure_grad();
    const std::size_t n = self.value.numel();
    for (std::size_t i = 0; i < n; ++i)
      pg[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
  });
  return Var::wrap(node);
}

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    grad = g;
  } else {
    grad.add_scaled(g, 1.0);
  }
}

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var Var::constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->requires_grad = false;
  Var out;
  out.node_ = std::move(n);
  return out;
}

Var Var::param(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->requires_grad = true;
  Var out;
  out.node_ = std::move(n);
  return out;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

double Var::scalar() const {
  if (node_->value.numel() != 1) throw std::invalid_argument("Var::scalar: not a scalar");
  return node_->value[0];
}

void backward(const Var& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  if (root.value().numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root.requires_grad()) return;

  // Reachable subgraph, processed in decreasing creation id (reverse topo).
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{root.node()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  root.node()->ensure_grad().fill(1.0);
  for (const auto& n : order) {
    if (n->pullback && !n->grad.empty()) n->pullback(*n);
  }
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.value();
  out.add_scaled(b.value(), 1.0);
  return Var::wrap(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) p.accumulate(self.grad);
    }
  }));
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.add_scaled(b.value(), -1.0);
  return Var::wrap(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->ensure_grad().add_scaled(self.grad, -1.0);
  }));
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return Var::wrap(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.value.numel();
    if (pa.requires_grad) {
      Tensor& g = pa.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pa.value[i];
    }
  }));
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.vec()) v *= s;
  return Var::wrap(make_node(std::move(out), {a.node()}, [s](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->ensure_grad().add_scaled(self.grad, s);
  }));
}

Var add_const(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.vec()) v += c;
  return Var::wrap(make_node(std::move(out), {a.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
  }));
}

Var one_minus(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.vec()) v = 1.0 - v;
  return Var::wrap(make_node(std::move(out), {a.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->ensure_grad().add_scaled(self.grad, -1.0);
  }));
}

Var sigmoid(const Var& a) {
  return unary_ew(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Var tanh_op(const Var& a) {
  return unary_ew(a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Var relu(const Var& a) {
  return unary_ew(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Var exp_op(const Var& a) {
  return unary_ew(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; }, "exp");
}

Var log_op(const Var& a) {
  return unary_ew(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; }, "log");
}

Var sqrt_op(const Var& a) {
  return unary_ew(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; }, "sqrt");
}

Var square(const Var& a) {
  return unary_ew(a, [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; }, "square");
}

Var clamp(const Var& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary_ew(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                  [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; }, "clamp");
}

Var detach(const Var& a) { return Var::constant(a.value()); }

// ---------------- linear algebra ----------------

Var matmul(const Var& a, const Var& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  if (a.value().cols() != b.value().rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  Tensor out({a.value().rows(), b.value().cols()});
  mmap(out).noalias() = cmap(a.value()) * cmap(b.value());
  return Var::wrap(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    CMap g(self.grad.data(), static_cast<Eigen::Index>(self.value.rows()),
           static_cast<Eigen::Index>(self.value.cols()));
    if (pa.requires_grad) mmap(pa.ensure_grad()).noalias() += g * cmap(pb.value).transpose();
    if (pb.requires_grad) mmap(pb.ensure_grad()).noalias() += cmap(pa.value).transpose() * g;
  }));
}

Var matmul_nt(const Var& a, const Var& b) {
  check_rank2(a, "matmul_nt");
  check_rank2(b, "matmul_nt");
  if (a.value().cols() != b.value().cols()) throw std::invalid_argument("matmul_nt: dim mismatch");
  Tensor out({a.value().rows(), b.value().rows()});
  mmap(out).noalias() = cmap(a.value()) * cmap(b.value()).transpose();
  return Var::wrap(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    CMap g(self.grad.data(), static_cast<Eigen::Index>(self.value.rows()),
           static_cast<Eigen::Index>(self.value.cols()));
    if (pa.requires_grad) mmap(pa.ensure_grad()).noalias() += g * cmap(pb.value);
    if (pb.requires_grad) mmap(pb.ensure_grad()).noalias() += g.transpose() * cmap(pa.value);
  }));
}

Var transpose(const Var& a) {
  check_rank2(a, "transpose");
  Tensor out({a.value().cols(), a.value().rows()});
  mmap(out) = cmap(a.value()).transpose();
  return Var::wrap(make_node(std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    MMap pg = mmap(p.ensure_grad());
    CMap g(self.grad.data(), static_cast<Eigen::Index>(self.value.rows()),
           static_cast<Eigen::Index>(self.value.cols()));
    pg.noalias() += g.transpose();
  }));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check_rank2(x, "linear");
  check_rank2(w, "linear");
  check_rank2(b, "linear");
  if (x.value().cols() != w.value().rows() || b.value().rows() != 1 ||
      b.value().cols() != w.value().cols())
    throw std::invalid_argument("linear: dimension mismatch");
  Tensor out({x.value().rows(), w.value().cols()});
  mmap(out).noalias() = cmap(x.value()) * cmap(w.value());
  mmap(out).rowwise() += cmap(b.value()).row(0);
  return Var::wrap(make_node(std::move(out), {x.node(), w.node(), b.node()}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    CMap g(self.grad.data(), static_cast<Eigen::Index>(self.value.rows()),
           static_cast<Eigen::Index>(self.value.cols()));
    if (px.requires_grad) mmap(px.ensure_grad()).noalias() += g * cmap(pw.value).transpose();
    if (pw.requires_grad) mmap(pw.ensure_grad()).noalias() += cmap(px.value).transpose() * g;
    if (pb.requires_grad) mmap(pb.ensure_grad()).row(0) += g.colwise().sum();
  }));
}

Var mul_rowvec(const Var& x, const Var& v) {
  check_rank2(x, "mul_rowvec");
  check_rank2(v, "mul_rowvec");
  if (v.value().rows() != 1 || v.value().cols() != x.value().cols())
    throw std::invalid_argument("mul_rowvec: shape mismatch");
  Tensor out = x.value();
  const std::size_t n = out.rows(), d = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) *= v.value()[j];
  return Var::wrap(make_node(std::move(out), {x.node(), v.node()}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& pv = *self.parents[1];
    const std::size_t n = self.value.rows(), d = self.value.cols();
    if (px.requires_grad) {
      Tensor& g = px.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g.at(i, j) += self.grad.at(i, j) * pv.value[j];
    }
    if (pv.requires_grad) {
      Tensor& g = pv.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad.at(i, j) * px.value.at(i, j);
    }
  }));
}

Var mul_colvec(const Var& x, const Var& s) {
  check_rank2(x, "mul_colvec");
  check_rank2(s, "mul_colvec");
  if (s.value().cols() != 1 || s.value().rows() != x.value().rows())
    throw std::invalid_argument("mul_colvec: shape mismatch");
  Tensor out = x.value();
  const std::size_t n = out.rows(), d = out.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) *= s.value()[i];
  return Var::wrap(make_node(std::move(out), {x.node(), s.node()}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    const std::size_t n = self.value.rows(), d = self.value.cols();
    if (px.requires_grad) {
      Tensor& g = px.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g.at(i, j) += self.grad.at(i, j) * ps.value[i];
    }
    if (ps.requires_grad) {
      Tensor& g = ps.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[i] += self.grad.at(i, j) * px.value.at(i, j);
    }
  }));
}

Var add_rowvec(const Var& x, const Var& v) {
  check_rank2(x, "add_rowvec");
  check_rank2(v, "add_rowvec");
  if (v.value().rows() != 1 || v.value().cols() != x.value().cols())
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Tensor out = x.value();
  mmap(out).rowwise() += cmap(v.value()).row(0);
  return Var::wrap(make_node(std::move(out), {x.node(), v.node()}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& pv = *self.parents[1];
    if (px.requires_grad) px.accumulate(self.grad);
    if (pv.requires_grad) {
      CMap g(self.grad.data(), static_cast<Eigen::Index>(self.value.rows()),
             static_cast<Eigen::Index>(self.value.cols()));
      mmap(pv.ensure_grad()).row(0) += g.colwise().sum();
    }
  }));
}

Var rows_l2_normalize(const Var& x) {
  check_rank2(x, "rows_l2_normalize");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += out.at(i, j) * out.at(i, j);
    if (sq == 0.0) throw std::runtime_error("rows_l2_normalize: zero-norm row");
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) *= inv;
  }
  return Var::wrap(make_node(std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& pg = p.ensure_grad();
    const std::size_t n = self.value.rows(), d = self.value.cols();
    for (std::size_t i = 0; i < n; ++i) {
      double norm_sq = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        norm_sq += p.value.at(i, j) * p.value.at(i, j);
        gy += self.grad.at(i, j) * self.value.at(i, j);
      }
      const double inv = 1.0 / std::sqrt(norm_sq);
      for (std::size_t j = 0; j < d; ++j)
        pg.at(i, j) += inv * (self.grad.at(i, j) - gy * self.value.at(i, j));
    }
  }));
}

// ---------------- shape / selection ----------------

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
  const std::size_t d = xs[0].value().cols();
  std::size_t n = 0;
  for (const auto& x : xs) {
    check_rank2(x, "concat_rows");
    if (x.value().cols() != d) throw std::invalid_argument("concat_rows: width mismatch");
    n += x.value().rows();
  }
  Tensor out({n, d});
  std::vector<std::shared_ptr<Node>> parents;
  std::size_t r = 0;
  for (const auto& x : xs) {
    const Tensor& v = x.value();
    std::copy(v.data(), v.data() + v.numel(), out.data() + r * d);
    r += v.rows();
    parents.push_back(x.node());
  }
  return Var::wrap(make_node(std::move(out), std::move(parents), [](Node& self) {
    const std::size_t d = self.value.cols();
    std::size_t r = 0;
    for (auto& pp : self.parents) {
      Node& p = *pp;
      const std::size_t pr = p.value.rows();
      if (p.requires_grad) {
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < pr * d; ++i) g[i] += self.grad[r * d + i];
      }
      r += pr;
    }
  }));
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
  const std::size_t n = xs[0].value().rows();
  std::size_t d = 0;
  for (const auto& x : xs) {
    check_rank2(x, "concat_cols");
    if (x.value().rows() != n) throw std::invalid_argument("concat_cols: height mismatch");
    d += x.value().cols();
  }
  Tensor out({n, d});
  std::vector<std::shared_ptr<Node>> parents;
  std::size_t c0 = 0;
  for (const auto& x : xs) {
    const Tensor& v = x.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, c0 + j) = v.at(i, j);
    c0 += v.cols();
    parents.push_back(x.node());
  }
  return Var::wrap(make_node(std::move(out), std::move(parents), [](Node& self) {
    const std::size_t n = self.value.rows();
    std::size_t c0 = 0;
    for (auto& pp : self.parents) {
      Node& p = *pp;
      const std::size_t pc = p.value.cols();
      if (p.requires_grad) {
        Tensor& g = p.ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < pc; ++j) g.at(i, j) += self.grad.at(i, c0 + j);
      }
      c0 += pc;
    }
  }));
}

Var slice_rows(const Var& x, std::size_t r0, std::size_t r1) {
  check_rank2(x, "slice_rows");
  if (r0 > r1 || r1 > x.value().rows()) throw std::invalid_argument("slice_rows: bad range");
  const std::size_t d = x.value().cols();
  Tensor out({r1 - r0, d});
  std::copy(x.value().data() + r0 * d, x.value().data() + r1 * d, out.data());
  return Var::wrap(make_node(std::move(out), {x.node()}, [r0](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t d = self.value.cols();
    for (std::size_t i = 0; i < self.value.numel(); ++i) g[r0 * d + i] += self.grad[i];
  }));
}

Var slice_cols(const Var& x, std::size_t c0, std::size_t c1) {
  check_rank2(x, "slice_cols");
  if (c0 > c1 || c1 > x.value().cols()) throw std::invalid_argument("slice_cols: bad range");
  const std::size_t n = x.value().rows();
  Tensor out({n, c1 - c0});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = x.value().at(i, j);
  return Var::wrap(make_node(std::move(out), {x.node()}, [c0](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t n = self.value.rows(), w = self.value.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) g.at(i, c0 + j) += self.grad.at(i, j);
  }));
}

Var select_rows(const Var& x, const std::vector<std::size_t>& idx) {
  check_rank2(x, "select_rows");
  const std::size_t d = x.value().cols();
  for (std::size_t r : idx)
    if (r >= x.value().rows()) throw std::invalid_argument("select_rows: index out of range");
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(x.value().data() + idx[i] * d, x.value().data() + (idx[i] + 1) * d,
              out.data() + i * d);
  return Var::wrap(make_node(std::move(out), {x.node()}, [idx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t d = self.value.cols();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad.at(i, j);
  }));
}

Var row(const Var& x, std::size_t r) { return select_rows(x, {r}); }

Var cell(const Var& x, std::size_t r, std::size_t c) {
  check_rank2(x, "cell");
  if (r >= x.value().rows() || c >= x.value().cols())
    throw std::invalid_argument("cell: index out of range");
  Tensor out({1, 1});
  out[0] = x.value().at(r, c);
  return Var::wrap(make_node(std::move(out), {x.node()}, [r, c](Node& self) {
    Node& p = *self.parents[0];
    if (p.requires_grad) p.ensure_grad().at(r, c) += self.grad[0];
  }));
}

Var diag(const Var& x) {
  check_rank2(x, "diag");
  if (x.value().rows() != x.value().cols()) throw std::invalid_argument("diag: square matrix required");
  const std::size_t n = x.value().rows();
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) out[i] = x.value().at(i, i);
  return Var::wrap(make_node(std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t n = self.value.rows();
    for (std::size_t i = 0; i < n; ++i) g.at(i, i) += self.grad[i];
  }));
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
  Tensor out(shape);
  if (out.numel() != x.value().numel()) throw std::invalid_argument("reshape: element count mismatch");
  out.vec() = x.value().vec();
  return Var::wrap(make_node(std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < self.value.numel(); ++i) g[i] += self.grad[i];
  }));
}

// ---------------- reductions / normalizations ----------------

Var sum_all(const Var& x) {
  Tensor out({1, 1});
  double s = 0.0;
  for (double v : x.value().vec()) s += v;
  out[0] = s;
  return Var::wrap(make_node(std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (double& v : g.vec()) v += self.grad[0];
  }));
}

Var mean_all(const Var& x) {
  const double n = static_cast<double>(x.value().numel());
  return scale(sum_all(x), 1.0 / n);
}

Var mean_rows(const Var& x) {
  check_rank2(x, "mean_rows");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  Tensor out({1, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += x.value().at(i, j);
  for (std::size_t j = 0; j < d; ++j) out[j] /= static_cast<double>(n);
  return Var::wrap(make_node(std::move(out), {x.node()}, [n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t d = self.value.cols();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g.at(i, j) += self.grad[j] * inv;
  }));
}

Var softmax_rows(const Var& x) {
  check_rank2(x, "softmax_rows");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double m = out.at(i, 0);
    for (std::size_t j = 1; j < d; ++j) m = std::max(m, out.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out.at(i, j) = std::exp(out.at(i, j) - m);
      s += out.at(i, j);
    }
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) /= s;
  }
  return Var::wrap(make_node(std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t n = self.value.rows(), d = self.value.cols();
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
      for (std::size_t j = 0; j < d; ++j)
        g.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
    }
  }));
}

Var log_softmax_rows(const Var& x) {
  check_rank2(x, "log_softmax_rows");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  Tensor out = x.value();
  for (std::size_t i = 0; i < n; ++i) {
    double m = out.at(i, 0);
    for (std::size_t j = 1; j < d; ++j) m = std::max(m, out.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(out.at(i, j) - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) -= lse;
  }
  return Var::wrap(make_node(std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t n = self.value.rows(), d = self.value.cols();
    for (std::size_t i = 0; i < n; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < d; ++j) gsum += self.grad.at(i, j);
      for (std::size_t j = 0; j < d; ++j)
        g.at(i, j) += self.grad.at(i, j) - std::exp(self.value.at(i, j)) * gsum;
    }
  }));
}

Var logsumexp_rows(const Var& x) {
  check_rank2(x, "logsumexp_rows");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    double m = x.value().at(i, 0);
    for (std::size_t j = 1; j < d; ++j) m = std::max(m, x.value().at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += std::exp(x.value().at(i, j) - m);
    out[i] = m + std::log(s);
  }
  return Var::wrap(make_node(std::move(out), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t n = p.value.rows(), d = p.value.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j)
        g.at(i, j) += self.grad[i] * std::exp(p.value.at(i, j) - self.value[i]);
  }));
}

Var pick_per_row(const Var& x, const std::vector<std::size_t>& cols) {
  check_rank2(x, "pick_per_row");
  if (cols.size() != x.value().rows()) throw std::invalid_argument("pick_per_row: one index per row");
  const std::size_t n = x.value().rows();
  Tensor out({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    if (cols[i] >= x.value().cols()) throw std::invalid_argument("pick_per_row: index out of range");
    out[i] = x.value().at(i, cols[i]);
  }
  return Var::wrap(make_node(std::move(out), {x.node()}, [cols](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < cols.size(); ++i) g.at(i, cols[i]) += self.grad[i];
  }));
}

Var mul_scalar(const Var& x, const Var& s) {
  if (s.value().numel() != 1) throw std::invalid_argument("mul_scalar: scalar operand required");
  Tensor out = x.value();
  const double sv = s.value()[0];
  for (double& v : out.vec()) v *= sv;
  return Var::wrap(make_node(std::move(out), {x.node(), s.node()}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& ps = *self.parents[1];
    const double sv = ps.value[0];
    if (px.requires_grad) px.ensure_grad().add_scaled(self.grad, sv);
    if (ps.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * px.value[i];
      ps.ensure_grad()[0] += acc;
    }
  }));
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  check_rank2(x, "layer_norm_rows");
  const std::size_t n = x.value().rows(), d = x.value().cols();
  if (gain.value().cols() != d || bias.value().cols() != d)
    throw std::invalid_argument("layer_norm_rows: parameter width mismatch");
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x.value().at(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x.value().at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j)
      out.at(i, j) = (x.value().at(i, j) - mu) * inv * gain.value()[j] + bias.value()[j];
  }
  return Var::wrap(make_node(std::move(out), {x.node(), gain.node(), bias.node()},
                             [eps](Node& self) {
    Node& px = *self.parents[0];
    Node& pgain = *self.parents[1];
    Node& pbias = *self.parents[2];
    const std::size_t n = px.value.rows(), d = px.value.cols();
    for (std::size_t i = 0; i < n; ++i) {
      double mu = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += px.value.at(i, j);
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = px.value.at(i, j) - mu;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);

      double sum_gh = 0.0, sum_ghx = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double xhat = (px.value.at(i, j) - mu) * inv;
        const double gh = self.grad.at(i, j) * pgain.value[j];
        sum_gh += gh;
        sum_ghx += gh * xhat;
        if (pgain.requires_grad) pgain.ensure_grad()[j] += self.grad.at(i, j) * xhat;
        if (pbias.requires_grad) pbias.ensure_grad()[j] += self.grad.at(i, j);
      }
      if (px.requires_grad) {
        Tensor& g = px.ensure_grad();
        const double invd = 1.0 / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          const double xhat = (px.value.at(i, j) - mu) * inv;
          const double gh = self.grad.at(i, j) * pgain.value[j];
          g.at(i, j) += inv * (gh - invd * sum_gh - xhat * invd * sum_ghx);
        }
      }
    }
  }));
}

Var span_max_rows(const Var& x,
                  const std::vector<std::pair<std::size_t, std::size_t>>& spans) {
  check_rank2(x, "span_max_rows");
  if (x.value().rows() == 0) throw std::invalid_argument("span_max_rows: empty matrix");
  const std::size_t d = x.value().cols();
  Tensor out({spans.size(), d});
  std::vector<std::size_t> argmax(spans.size() * d);
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto [a, b] = spans[i];
    if (a > b || b >= x.value().rows()) throw std::invalid_argument("span_max_rows: bad span");
    for (std::size_t j = 0; j < d; ++j) {
      double best = x.value().at(a, j);
      std::size_t best_r = a;
      for (std::size_t r = a + 1; r <= b; ++r) {
        if (x.value().at(r, j) > best) {
          best = x.value().at(r, j);
          best_r = r;
        }
      }
      out.at(i, j) = best;
      argmax[i * d + j] = best_r;
    }
  }
  return Var::wrap(make_node(std::move(out), {x.node()}, [argmax](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t n = self.value.rows(), d = self.value.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g.at(argmax[i * d + j], j) += self.grad.at(i, j);
  }));
}

Var cells_to_grid(const Var& cells, std::size_t K,
                  const std::vector<std::pair<std::size_t, std::size_t>>& slots) {
  check_rank2(cells, "cells_to_grid");
  if (cells.value().rows() != slots.size())
    throw std::invalid_argument("cells_to_grid: one slot per row");
  const std::size_t d = cells.value().cols();
  Tensor out({K, K, d});
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto [i, j] = slots[s];
    if (i >= K || j >= K) throw std::invalid_argument("cells_to_grid: slot out of range");
    for (std::size_t c = 0; c < d; ++c) out.at3(i, j, c) = cells.value().at(s, c);
  }
  return Var::wrap(make_node(std::move(out), {cells.node()}, [slots](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t d = p.value.cols();
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const auto [i, j] = slots[s];
      for (std::size_t c = 0; c < d; ++c) g.at(s, c) += self.grad.at3(i, j, c);
    }
  }));
}

Var grid_to_cells(const Var& grid,
                  const std::vector<std::pair<std::size_t, std::size_t>>& slots) {
  if (grid.value().rank() != 3) throw std::invalid_argument("grid_to_cells: rank-3 operand required");
  const std::size_t K = grid.value().dim(0), d = grid.value().dim(2);
  Tensor out({slots.size(), d});
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto [i, j] = slots[s];
    if (i >= K || j >= K) throw std::invalid_argument("grid_to_cells: slot out of range");
    for (std::size_t c = 0; c < d; ++c) out.at(s, c) = grid.value().at3(i, j, c);
  }
  return Var::wrap(make_node(std::move(out), {grid.node()}, [slots](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.ensure_grad();
    const std::size_t d = self.value.cols();
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const auto [i, j] = slots[s];
      for (std::size_t c = 0; c < d; ++c) g.at3(i, j, c) += self.grad.at(s, c);
    }
  }));
}

namespace {

// im2col for a {K,K,din} grid with 3x3 taps and zero padding: row p = (y*K+x),
// column block t*din..t*din+din for tap t = (dy+1)*3 + (dx+1).
Tensor im2col3x3(const Tensor& grid) {
  const std::size_t K = grid.dim(0), din = grid.dim(2);
  Tensor col({K * K, 9 * din});
  for (std::size_t y = 0; y < K; ++y) {
    for (std::size_t x = 0; x < K; ++x) {
      double* dst = col.data() + (y * K + x) * 9 * din;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(x) + dx;
          const std::size_t t = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
          if (sy >= 0 && sy < static_cast<long>(K) && sx >= 0 && sx < static_cast<long>(K)) {
            const double* src = grid.data() + (static_cast<std::size_t>(sy) * K +
                                               static_cast<std::size_t>(sx)) * din;
            std::copy(src, src + din, dst + t * din);
          }
        }
      }
    }
  }
  return col;
}

}  // namespace

Var conv3x3(const Var& grid, const Var& w, const Var& b) {
  if (grid.value().rank() != 3) throw std::invalid_argument("conv3x3: rank-3 input required");
  const std::size_t K = grid.value().dim(0), din = grid.value().dim(2);
  if (grid.value().dim(1) != K) throw std::invalid_argument("conv3x3: square grid required");
  const std::size_t dout = w.value().rows();
  if (w.value().cols() != 9 * din || b.value().cols() != dout)
    throw std::invalid_argument("conv3x3: weight shape mismatch");

  Tensor col = im2col3x3(grid.value());
  Tensor out({K, K, dout});
  {
    MMap o(out.data(), static_cast<Eigen::Index>(K * K), static_cast<Eigen::Index>(dout));
    o.noalias() = cmap(col) * cmap(w.value()).transpose();
    o.rowwise() += cmap(b.value()).row(0);
  }
  return Var::wrap(make_node(std::move(out), {grid.node(), w.node(), b.node()}, [](Node& self) {
    Node& pg = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    const std::size_t K = pg.value.dim(0), din = pg.value.dim(2);
    const std::size_t dout = pw.value.rows();
    CMap g(self.grad.data(), static_cast<Eigen::Index>(K * K), static_cast<Eigen::Index>(dout));

    if (pw.requires_grad || pg.requires_grad) {
      Tensor col = im2col3x3(pg.value);
      if (pw.requires_grad)
        mmap(pw.ensure_grad()).noalias() += g.transpose() * cmap(col);
      if (pg.requires_grad) {
        Tensor dcol({K * K, 9 * din});
        mmap(dcol).noalias() = g * cmap(pw.value);
        Tensor& gin = pg.ensure_grad();
        for (std::size_t y = 0; y < K; ++y) {
          for (std::size_t x = 0; x < K; ++x) {
            const double* src = dcol.data() + (y * K + x) * 9 * din;
            for (int dy = -1; dy <= 1; ++dy) {
              for (int dx = -1; dx <= 1; ++dx) {
                const long sy = static_cast<long>(y) + dy, sx = static_cast<long>(x) + dx;
                if (sy < 0 || sy >= static_cast<long>(K) || sx < 0 || sx >= static_cast<long>(K))
                  continue;
                const std::size_t t = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
                double* dst = gin.data() + (static_cast<std::size_t>(sy) * K +
                                            static_cast<std::size_t>(sx)) * din;
                for (std::size_t c = 0; c < din; ++c) dst[c] += src[t * din + c];
              }
            }
          }
        }
      }
    }
    if (pb.requires_grad) mmap(pb.ensure_grad()).row(0) += g.colwise().sum();
  }));
}

}  // namespace vprg::ad
