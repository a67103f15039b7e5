#pragma once
// Tape-based reverse-mode automatic differentiation over dense matrices.
//
// A Graph records operations in creation order; backward() walks the tape in
// reverse. Parameters live outside the graph and receive accumulated gradients
// through Graph::param() leaves, so one Graph is built per example and discarded.

#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gvqg/tensor.hpp"

namespace gvqg::nn {

struct Parameter {
  Matrix value;
  // Accumulator written by Graph::backward, also through const references.
  mutable Matrix grad;

  Parameter() = default;
  Parameter(int rows, int cols) : value(rows, cols), grad(rows, cols) {}
  void zero_grad() const { grad.fill(0.0); }
};

// Scaled-normal initialisation.
void init_normal(Parameter& p, double stddev, std::mt19937_64& rng);
void init_constant(Parameter& p, double v);

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  // With record=false no backward closures are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix m);
  // A differentiable input whose gradient can be read back after backward().
  Var leaf(Matrix m);
  // One node per Parameter per graph; repeated calls return the same Var.
  Var param(const Parameter& p);

  const Matrix& value(Var v) const;
  // Gradient w.r.t. v after backward(); zeros when v did not receive one.
  Matrix grad(Var v) const;
  double scalar(Var v) const;
  int rows(Var v) const { return value(v).rows(); }
  int cols(Var v) const { return value(v).cols(); }
  std::size_t size() const { return nodes_.size(); }

  // Linear algebra
  Var matmul(Var a, Var b);
  Var linear(Var x, Var w, Var b);  // x * w + b, b broadcast over rows
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);       // row (1 x c) broadcast over rows of a
  Var mul(Var a, Var b);             // element-wise, same shape
  Var mul_row(Var a, Var row);       // a (n x c) times row (1 x c) element-wise per row
  Var scale_rows(Var a, Var weights);  // row r of a times weights[r]; weights has n entries
  Var scale(Var a, double s);
  Var sum(Var a);                    // 1 x 1
  Var sum_rows(Var a);               // 1 x c column sums

  // Nonlinearities
  Var gelu(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var softmax_rows(Var a);

  // Shape manipulation
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var slice_rows(Var a, int start, int count);
  Var gather_rows(Var table, std::span<const int> ids);
  Var repeat_row(Var row, int n);
  Var transpose(Var a);

  // Fused multi-head scaled dot-product attention. q: T x d, k and v: S x d.
  // key_valid (size S, optional) masks keys; causal masks keys j > i.
  // Query rows with no admissible key produce zeros.
  Var attention(Var q, Var k, Var v, int heads, const std::vector<char>* key_valid, bool causal);

  // Losses
  // Mean token cross-entropy over rows whose target != ignore_index.
  Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index = -1);
  // Mean binary cross-entropy with logits over all entries.
  Var bce_with_logits(Var logits, std::span<const double> targets);
  // KL(softmax(q_logits) || softmax(p_logits)) for 1 x n logits.
  Var kl_from_logits(Var q_logits, Var p_logits);

  // softmax((logits + noise) / tau) for 1 x n logits. In hard mode the forward
  // value is the one-hot argmax and the backward pass uses the soft Jacobian.
  Var gumbel_softmax(Var logits, std::span<const double> noise, double tau, bool hard);
  // Forward min(1, x) element-wise, backward identity.
  Var clamp01_straight_through(Var a);

  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    const Parameter* param = nullptr;
    std::function<void()> backward_fn;
  };

  Var push(Matrix value, bool needs_grad);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  bool needs(Var v) const { return node(v).needs_grad; }
  Matrix& gbuf(Var v);
  template <class F>
  void on_backward(Var out, F&& fn) {
    if (record_ && node(out).needs_grad) node(out).backward_fn = std::forward<F>(fn);
  }

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, Var> params_;
};

}  // namespace gvqg::nn
