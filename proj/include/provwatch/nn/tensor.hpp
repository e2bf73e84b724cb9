#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tensor is a shared handle to a graph node holding a value, an optional gradient
// and a closure that pushes the node's gradient into its parents. Nodes are only
// recorded while gradient mode is on and at least one input requires a gradient.

#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace provwatch::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

inline thread_local bool grad_mode_enabled = true;

inline bool grad_mode() { return grad_mode_enabled; }

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled) { grad_mode_enabled = false; }
  ~NoGradGuard() { grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix<T>& grad_buffer() {
    if (grad.size() == 0) grad = Matrix<T>::Zero(value.rows(), value.cols());
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(Matrix<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    return Tensor(std::move(n));
  }

  static Tensor parameter(Matrix<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Tensor(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const NodePtr& node() const noexcept { return node_; }

  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated by the last backward pass (zero-sized if none reached it).
  const Matrix<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

  Tensor detach() const { return constant(node_->value); }

  /// Reverse pass from a 1x1 tensor. Interior nodes drop their graph links afterwards.
  void backward() const {
    assert(rows() == 1 && cols() == 1);
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer().setOnes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
    for (Node<T>* n : order) {
      if (!n->is_leaf) {
        n->parents.clear();
        n->backward = nullptr;
        n->grad.resize(0, 0);
      }
    }
  }

 private:
  NodePtr node_;
};

/// Builds a result node. The graph link is kept only when some parent needs a gradient.
template <class T>
Tensor<T> make_result(Matrix<T> value, std::vector<Tensor<T>> parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->is_leaf = false;
  if (grad_mode()) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(n));
}

namespace detail {
template <class T>
inline void accumulate(const std::shared_ptr<Node<T>>& p, const auto& g) {
  if (p->requires_grad) p->grad_buffer() += g;
}
}  // namespace detail

/// A · B
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  assert(a.cols() == b.rows());
  Matrix<T> out = Matrix<T>::Zero(a.rows(), b.cols());
  out.noalias() += a.value() * b.value();
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) pa->grad_buffer().noalias() += n.grad * pb->value.transpose();
    if (pb->requires_grad) pb->grad_buffer().noalias() += pa->value.transpose() * n.grad;
  });
}

/// X · W + b, with b a 1 x cols row broadcast over the rows of the product.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  assert(x.cols() == w.rows() && b.rows() == 1 && b.cols() == w.cols());
  Matrix<T> out(x.rows(), w.cols());
  out.rowwise() = b.value().row(0);
  out.noalias() += x.value() * w.value();
  return make_result<T>(std::move(out), {x, w, b}, [](Node<T>& n) {
    auto& px = n.parents[0];
    auto& pw = n.parents[1];
    auto& pb = n.parents[2];
    if (px->requires_grad) px->grad_buffer().noalias() += n.grad * pw->value.transpose();
    if (pw->requires_grad) pw->grad_buffer().noalias() += px->value.transpose() * n.grad;
    if (pb->requires_grad) pb->grad_buffer() += n.grad.colwise().sum();
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  return make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& n) {
    detail::accumulate(n.parents[0], n.grad);
    detail::accumulate(n.parents[1], n.grad);
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  return make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& n) {
    detail::accumulate(n.parents[0], n.grad);
    detail::accumulate(n.parents[1], -n.grad);
  });
}

/// Elementwise product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  assert(a.rows() == b.rows() && a.cols() == b.cols());
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) pa->grad_buffer() += n.grad.cwiseProduct(pb->value);
    if (pb->requires_grad) pb->grad_buffer() += n.grad.cwiseProduct(pa->value);
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Matrix<T> out = x.value().unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  return make_result<T>(out, {x}, [out](Node<T>& n) {
    detail::accumulate(n.parents[0], n.grad.cwiseProduct(out.unaryExpr([](T s) { return s * (T(1) - s); })));
  });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  Matrix<T> out = x.value().array().tanh().matrix();
  return make_result<T>(out, {x}, [out](Node<T>& n) {
    detail::accumulate(n.parents[0], n.grad.cwiseProduct(out.unaryExpr([](T t) { return T(1) - t * t; })));
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Matrix<T> out = x.value().cwiseMax(T(0));
  return make_result<T>(out, {x}, [](Node<T>& n) {
    auto& px = n.parents[0];
    if (px->requires_grad)
      px->grad_buffer() += n.grad.cwiseProduct(px->value.unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); }));
  });
}

/// 1 - x
template <class T>
Tensor<T> one_minus(const Tensor<T>& x) {
  Matrix<T> out = (T(1) - x.value().array()).matrix();
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) { detail::accumulate(n.parents[0], -n.grad); });
}

/// Horizontal concatenation; all parts share the row count.
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  assert(!parts.empty());
  Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    assert(p.rows() == rows);
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result<T>(std::move(out), parts, [](Node<T>& n) {
    Index at = 0;
    for (auto& p : n.parents) {
      Index c = p->value.cols();
      if (p->requires_grad) p->grad_buffer() += n.grad.middleCols(at, c);
      at += c;
    }
  });
}

/// Columns [start, start + count).
template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, Index start, Index count) {
  assert(start + count <= x.cols());
  Matrix<T> out = x.value().middleCols(start, count);
  return make_result<T>(std::move(out), {x}, [start, count](Node<T>& n) {
    auto& px = n.parents[0];
    if (px->requires_grad) px->grad_buffer().middleCols(start, count) += n.grad;
  });
}

/// Reinterprets the row-major storage with a new shape of equal size.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Index rows, Index cols) {
  assert(rows * cols == x.rows() * x.cols());
  Matrix<T> out = Eigen::Map<const Matrix<T>>(x.value().data(), rows, cols);
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& px = n.parents[0];
    if (px->requires_grad)
      px->grad_buffer() += Eigen::Map<const Matrix<T>>(n.grad.data(), px->value.rows(), px->value.cols());
  });
}

/// One row taken from some tensor. Used to assemble per-node state matrices whose rows
/// come from different update steps.
template <class T>
struct RowRef {
  Tensor<T> source;
  Index row = 0;
};

template <class T>
Tensor<T> stack_rows(const std::vector<RowRef<T>>& rows, Index cols) {
  Matrix<T> out(static_cast<Index>(rows.size()), cols);
  std::vector<Tensor<T>> parents;
  std::vector<std::pair<std::size_t, Index>> where;  // parent slot, source row
  where.reserve(rows.size());
  std::vector<const Node<T>*> slot_of;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out.row(static_cast<Index>(i)) = r.source.value().row(r.row);
    std::size_t slot = 0;
    for (; slot < slot_of.size(); ++slot)
      if (slot_of[slot] == r.source.node().get()) break;
    if (slot == slot_of.size()) {
      slot_of.push_back(r.source.node().get());
      parents.push_back(r.source);
    }
    where.emplace_back(slot, r.row);
  }
  return make_result<T>(std::move(out), parents, [where = std::move(where)](Node<T>& n) {
    for (std::size_t i = 0; i < where.size(); ++i) {
      auto& p = n.parents[where[i].first];
      if (p->requires_grad) p->grad_buffer().row(where[i].second) += n.grad.row(static_cast<Index>(i));
    }
  });
}

/// cos(dt · ω + φ): dt is a column of constant time deltas, ω and φ are 1 x d rows.
template <class T>
Tensor<T> time_encoding(const Eigen::Matrix<T, Eigen::Dynamic, 1>& dt, const Tensor<T>& omega,
                        const Tensor<T>& phase) {
  const Index d = omega.cols();
  Matrix<T> arg = dt * omega.value().row(0);
  arg.rowwise() += phase.value().row(0);
  Matrix<T> out = arg.array().cos().matrix();
  return make_result<T>(std::move(out), {omega, phase}, [dt, arg = std::move(arg), d](Node<T>& n) {
    Matrix<T> g = -n.grad.cwiseProduct(arg.array().sin().matrix());
    auto& pw = n.parents[0];
    auto& pp = n.parents[1];
    if (pw->requires_grad) pw->grad_buffer().noalias() += dt.transpose() * g;
    if (pp->requires_grad) pp->grad_buffer() += g.colwise().sum();
    (void)d;
  });
}

/// Row-wise layer normalization with learnable gain and bias (both 1 x d).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const Index rows = x.rows();
  const Index d = x.cols();
  Matrix<T> xhat(rows, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(rows);
  for (Index i = 0; i < rows; ++i) {
    auto r = x.value().row(i);
    T mean = r.mean();
    T var = (r.array() - mean).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (r.array() - mean) * inv_std(i);
  }
  Matrix<T> out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& n) {
                          auto& px = n.parents[0];
                          auto& pg = n.parents[1];
                          auto& pb = n.parents[2];
                          if (pg->requires_grad) pg->grad_buffer() += n.grad.cwiseProduct(xhat).colwise().sum();
                          if (pb->requires_grad) pb->grad_buffer() += n.grad.colwise().sum();
                          if (px->requires_grad) {
                            const Index d = xhat.cols();
                            Matrix<T> gx = n.grad.array().rowwise() * pg->value.row(0).array();
                            auto& out = px->grad_buffer();
                            for (Index i = 0; i < gx.rows(); ++i) {
                              auto g = gx.row(i).array();
                              auto h = xhat.row(i).array();
                              T mg = g.mean();
                              T mgh = (g * h).mean();
                              out.row(i).array() += inv_std(i) * (g - mg - h * mgh);
                            }
                            (void)d;
                          }
                        });
}

/// Multi-head scaled dot-product attention of each query row over a contiguous block
/// of key/value rows. Query i attends to rows [offsets[i], offsets[i+1]); a query with
/// an empty block produces a zero row.
template <class T>
Tensor<T> segment_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const std::vector<Index>& offsets, Index heads) {
  const Index m = q.rows();
  const Index d = q.cols();
  assert(d % heads == 0 && k.cols() == d && v.cols() == d);
  assert(static_cast<Index>(offsets.size()) == m + 1);
  const Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Matrix<T> out = Matrix<T>::Zero(m, d);
  // attention weights, one row per (key row, head)
  Matrix<T> alpha = Matrix<T>::Zero(k.rows(), heads);
  for (Index i = 0; i < m; ++i) {
    const Index b = offsets[i], e = offsets[i + 1];
    if (b == e) continue;
    for (Index h = 0; h < heads; ++h) {
      auto qh = q.value().row(i).segment(h * dh, dh);
      auto scores = alpha.col(h).segment(b, e - b);
      scores.noalias() = k.value().block(b, h * dh, e - b, dh) * qh.transpose();
      scores *= scale;
      T mx = scores.maxCoeff();
      scores = (scores.array() - mx).exp().matrix();
      scores /= scores.sum();
      out.row(i).segment(h * dh, dh).noalias() = scores.transpose() * v.value().block(b, h * dh, e - b, dh);
    }
  }
  return make_result<T>(
      std::move(out), {q, k, v}, [alpha = std::move(alpha), offsets, heads, dh, scale](Node<T>& n) {
        auto& pq = n.parents[0];
        auto& pk = n.parents[1];
        auto& pv = n.parents[2];
        const Index m = pq->value.rows();
        Matrix<T>* gq = pq->requires_grad ? &pq->grad_buffer() : nullptr;
        Matrix<T>* gk = pk->requires_grad ? &pk->grad_buffer() : nullptr;
        Matrix<T>* gv = pv->requires_grad ? &pv->grad_buffer() : nullptr;
        for (Index i = 0; i < m; ++i) {
          const Index b = offsets[i], e = offsets[i + 1];
          if (b == e) continue;
          for (Index h = 0; h < heads; ++h) {
            auto go = n.grad.row(i).segment(h * dh, dh);
            auto a = alpha.col(h).segment(b, e - b);
            auto vb = pv->value.block(b, h * dh, e - b, dh);
            auto kb = pk->value.block(b, h * dh, e - b, dh);
            if (gv) gv->block(b, h * dh, e - b, dh).noalias() += a * go;
            // d score_j = a_j (go·v_j - Σ a go·v)
            Eigen::Matrix<T, Eigen::Dynamic, 1> gav = vb * go.transpose();
            T mean = a.dot(gav);
            Eigen::Matrix<T, Eigen::Dynamic, 1> gs = (a.array() * (gav.array() - mean)).matrix() * scale;
            if (gq) gq->row(i).segment(h * dh, dh).noalias() += gs.transpose() * kb;
            if (gk) gk->block(b, h * dh, e - b, dh).noalias() += gs * pq->value.row(i).segment(h * dh, dh);
          }
        }
      });
}

/// Row-wise softmax (no gradient; used for reporting probabilities).
template <class T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i).array();
    T mx = r.maxCoeff();
    auto ex = (r - mx).exp();
    p.row(i) = (ex / ex.sum()).matrix();
  }
  return p;
}

/// Per-row cross-entropy -log softmax(logits)[label], computed stably.
template <class T>
Eigen::Matrix<T, Eigen::Dynamic, 1> cross_entropy_rows(const Matrix<T>& logits, const std::vector<int>& labels) {
  Eigen::Matrix<T, Eigen::Dynamic, 1> out(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    auto r = logits.row(i).array();
    T mx = r.maxCoeff();
    T lse = mx + std::log((r - mx).exp().sum());
    out(i) = lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

/// Σ_i weight · CE(logits_i, label_i), a 1x1 tensor.
template <class T>
Tensor<T> cross_entropy_sum(const Tensor<T>& logits, const std::vector<int>& labels, T weight) {
  auto ce = cross_entropy_rows<T>(logits.value(), labels);
  Matrix<T> out(1, 1);
  out(0, 0) = weight * ce.sum();
  return make_result<T>(std::move(out), {logits}, [labels, weight](Node<T>& n) {
    auto& pl = n.parents[0];
    if (!pl->requires_grad) return;
    Matrix<T> g = softmax_rows<T>(pl->value);
    for (Index i = 0; i < g.rows(); ++i) g(i, labels[static_cast<std::size_t>(i)]) -= T(1);
    pl->grad_buffer() += (n.grad(0, 0) * weight) * g;
  });
}

/// Sum of 1x1 tensors.
template <class T>
Tensor<T> sum_scalars(const std::vector<Tensor<T>>& xs) {
  Matrix<T> out = Matrix<T>::Zero(1, 1);
  for (const auto& x : xs) out(0, 0) += x.value()(0, 0);
  return make_result<T>(std::move(out), xs, [](Node<T>& n) {
    for (auto& p : n.parents) detail::accumulate(p, n.grad);
  });
}

}  // namespace provwatch::nn
