#include "gvqg/autograd.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "gvqg/kernels.hpp"

namespace gvqg {

bool all_finite(const Matrix& m) {
  for (double v : m.values())
    if (!std::isfinite(v)) return false;
  return true;
}

namespace nn {

void init_normal(Parameter& p, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : p.value.values()) v = dist(rng);
  p.grad = Matrix(p.value.rows(), p.value.cols());
}

void init_constant(Parameter& p, double v) {
  p.value.fill(v);
  p.grad = Matrix(p.value.rows(), p.value.cols());
}

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ShapeError(what);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

}  // namespace

Var Graph::push(Matrix value, bool needs_grad) {
  nodes_.push_back(Node{std::move(value), Matrix{}, needs_grad && record_, nullptr, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Graph::gbuf(Var v) {
  Node& n = node(v);
  if (n.grad.size() != n.value.size() || n.grad.rows() != n.value.rows())
    n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Graph::constant(Matrix m) { return push(std::move(m), false); }

Var Graph::leaf(Matrix m) { return push(std::move(m), true); }

Var Graph::param(const Parameter& p) {
  if (auto it = params_.find(&p); it != params_.end()) return it->second;
  Var v = push(p.value, true);
  node(v).param = &p;
  params_.emplace(&p, v);
  return v;
}

const Matrix& Graph::value(Var v) const { return node(v).value; }

Matrix Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == n.value.size() && n.grad.rows() == n.value.rows()) return n.grad;
  return Matrix(n.value.rows(), n.value.cols());
}

double Graph::scalar(Var v) const {
  require(value(v).size() == 1, "scalar() on non-scalar");
  return value(v)[0];
}

Var Graph::matmul(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.cols() == B.rows(), "matmul inner dimension mismatch");
  Matrix C(A.rows(), B.cols());
  kernels::gemm_nn(A.data(), B.data(), C.data(), A.rows(), A.cols(), B.cols());
  Var out = push(std::move(C), needs(a) || needs(b));
  on_backward(out, [this, a, b, out] {
    const Matrix& G = node(out).grad;
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (needs(a)) kernels::gemm_nt(G.data(), B.data(), gbuf(a).data(), A.rows(), B.cols(), A.cols());
    if (needs(b)) kernels::gemm_tn(A.data(), G.data(), gbuf(b).data(), A.rows(), A.cols(), B.cols());
  });
  return out;
}

Var Graph::linear(Var x, Var w, Var b) {
  const Matrix& X = value(x);
  const Matrix& W = value(w);
  const Matrix& B = value(b);
  require(X.cols() == W.rows(), "linear input width mismatch");
  require(B.rows() == 1 && B.cols() == W.cols(), "linear bias shape mismatch");
  Matrix Y(X.rows(), W.cols());
  for (int r = 0; r < Y.rows(); ++r) std::copy(B.data(), B.data() + B.cols(), Y.row(r));
  kernels::gemm_nn(X.data(), W.data(), Y.data(), X.rows(), X.cols(), W.cols());
  Var out = push(std::move(Y), needs(x) || needs(w) || needs(b));
  on_backward(out, [this, x, w, b, out] {
    const Matrix& G = node(out).grad;
    const Matrix& X = value(x);
    const Matrix& W = value(w);
    if (needs(x)) kernels::gemm_nt(G.data(), W.data(), gbuf(x).data(), X.rows(), W.cols(), X.cols());
    if (needs(w)) kernels::gemm_tn(X.data(), G.data(), gbuf(w).data(), X.rows(), X.cols(), W.cols());
    if (needs(b)) {
      Matrix& gb = gbuf(b);
      for (int r = 0; r < G.rows(); ++r) kernels::axpy(1.0, G.row(r), gb.data(), G.cols());
    }
  });
  return out;
}

Var Graph::add(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.same_shape(B), "add shape mismatch");
  Matrix C = A;
  C.add_inplace(B);
  Var out = push(std::move(C), needs(a) || needs(b));
  on_backward(out, [this, a, b, out] {
    const Matrix& G = node(out).grad;
    if (needs(a)) gbuf(a).add_inplace(G);
    if (needs(b)) gbuf(b).add_inplace(G);
  });
  return out;
}

Var Graph::add_row(Var a, Var row) {
  const Matrix& A = value(a);
  const Matrix& R = value(row);
  require(R.rows() == 1 && R.cols() == A.cols(), "add_row shape mismatch");
  Matrix C = A;
  for (int r = 0; r < C.rows(); ++r) kernels::axpy(1.0, R.data(), C.row(r), C.cols());
  Var out = push(std::move(C), needs(a) || needs(row));
  on_backward(out, [this, a, row, out] {
    const Matrix& G = node(out).grad;
    if (needs(a)) gbuf(a).add_inplace(G);
    if (needs(row)) {
      Matrix& gr = gbuf(row);
      for (int r = 0; r < G.rows(); ++r) kernels::axpy(1.0, G.row(r), gr.data(), G.cols());
    }
  });
  return out;
}

Var Graph::mul(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.same_shape(B), "mul shape mismatch");
  Matrix C(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = A[i] * B[i];
  Var out = push(std::move(C), needs(a) || needs(b));
  on_backward(out, [this, a, b, out] {
    const Matrix& G = node(out).grad;
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    if (needs(a)) {
      Matrix& ga = gbuf(a);
      for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * B[i];
    }
    if (needs(b)) {
      Matrix& gb = gbuf(b);
      for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i] * A[i];
    }
  });
  return out;
}

Var Graph::mul_row(Var a, Var row) {
  const Matrix& A = value(a);
  const Matrix& R = value(row);
  require(R.rows() == 1 && R.cols() == A.cols(), "mul_row shape mismatch");
  Matrix C(A.rows(), A.cols());
  for (int r = 0; r < A.rows(); ++r)
    for (int c = 0; c < A.cols(); ++c) C(r, c) = A(r, c) * R(0, c);
  Var out = push(std::move(C), needs(a) || needs(row));
  on_backward(out, [this, a, row, out] {
    const Matrix& G = node(out).grad;
    const Matrix& A = value(a);
    const Matrix& R = value(row);
    if (needs(a)) {
      Matrix& ga = gbuf(a);
      for (int r = 0; r < A.rows(); ++r)
        for (int c = 0; c < A.cols(); ++c) ga(r, c) += G(r, c) * R(0, c);
    }
    if (needs(row)) {
      Matrix& gr = gbuf(row);
      for (int r = 0; r < A.rows(); ++r)
        for (int c = 0; c < A.cols(); ++c) gr(0, c) += G(r, c) * A(r, c);
    }
  });
  return out;
}

Var Graph::scale_rows(Var a, Var weights) {
  const Matrix& A = value(a);
  const Matrix& W = value(weights);
  require(static_cast<int>(W.size()) == A.rows(), "scale_rows weight count mismatch");
  Matrix C = A;
  for (int r = 0; r < C.rows(); ++r)
    for (int c = 0; c < C.cols(); ++c) C(r, c) *= W[static_cast<std::size_t>(r)];
  Var out = push(std::move(C), needs(a) || needs(weights));
  on_backward(out, [this, a, weights, out] {
    const Matrix& G = node(out).grad;
    const Matrix& A = value(a);
    const Matrix& W = value(weights);
    if (needs(a)) {
      Matrix& ga = gbuf(a);
      for (int r = 0; r < A.rows(); ++r)
        kernels::axpy(W[static_cast<std::size_t>(r)], G.row(r), ga.row(r), A.cols());
    }
    if (needs(weights)) {
      Matrix& gw = gbuf(weights);
      for (int r = 0; r < A.rows(); ++r)
        gw[static_cast<std::size_t>(r)] += kernels::dot(G.row(r), A.row(r), A.cols());
    }
  });
  return out;
}

Var Graph::scale(Var a, double s) {
  Matrix C = value(a);
  for (double& v : C.values()) v *= s;
  Var out = push(std::move(C), needs(a));
  on_backward(out, [this, a, s, out] {
    const Matrix& G = node(out).grad;
    Matrix& ga = gbuf(a);
    for (std::size_t i = 0; i < G.size(); ++i) ga[i] += s * G[i];
  });
  return out;
}

Var Graph::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).values()) s += v;
  Var out = push(Matrix(1, 1, s), needs(a));
  on_backward(out, [this, a, out] {
    const double g = node(out).grad[0];
    for (double& v : gbuf(a).values()) v += g;
  });
  return out;
}

Var Graph::sum_rows(Var a) {
  const Matrix& A = value(a);
  Matrix S(1, A.cols());
  for (int r = 0; r < A.rows(); ++r) kernels::axpy(1.0, A.row(r), S.data(), A.cols());
  Var out = push(std::move(S), needs(a));
  on_backward(out, [this, a, out] {
    const Matrix& G = node(out).grad;
    Matrix& ga = gbuf(a);
    for (int r = 0; r < ga.rows(); ++r) kernels::axpy(1.0, G.data(), ga.row(r), ga.cols());
  });
  return out;
}

Var Graph::gelu(Var a) {
  const Matrix& A = value(a);
  Matrix Y(A.rows(), A.cols());
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double x = A[i];
    Y[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
  }
  Var out = push(std::move(Y), needs(a));
  on_backward(out, [this, a, out] {
    const Matrix& G = node(out).grad;
    const Matrix& A = value(a);
    Matrix& ga = gbuf(a);
    for (std::size_t i = 0; i < A.size(); ++i) {
      const double x = A[i];
      const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      ga[i] += G[i] * d;
    }
  });
  return out;
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& X = value(x);
  const Matrix& Gm = value(gamma);
  const Matrix& Bt = value(beta);
  const int n = X.cols();
  require(Gm.cols() == n && Bt.cols() == n, "layer_norm parameter width mismatch");
  auto xhat = std::make_shared<Matrix>(X.rows(), n);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(X.rows()));
  Matrix Y(X.rows(), n);
  for (int r = 0; r < X.rows(); ++r) {
    const double* xr = X.row(r);
    double mean = 0.0;
    for (int c = 0; c < n; ++c) mean += xr[c];
    mean /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (int c = 0; c < n; ++c) {
      const double h = (xr[c] - mean) * is;
      (*xhat)(r, c) = h;
      Y(r, c) = h * Gm(0, c) + Bt(0, c);
    }
  }
  Var out = push(std::move(Y), needs(x) || needs(gamma) || needs(beta));
  on_backward(out, [this, x, gamma, beta, out, xhat, inv_std, n] {
    const Matrix& G = node(out).grad;
    const Matrix& Gm = value(gamma);
    for (int r = 0; r < G.rows(); ++r) {
      const double* gr = G.row(r);
      const double* hr = xhat->row(r);
      if (needs(gamma)) {
        Matrix& gg = gbuf(gamma);
        for (int c = 0; c < n; ++c) gg(0, c) += gr[c] * hr[c];
      }
      if (needs(beta)) {
        Matrix& gb = gbuf(beta);
        for (int c = 0; c < n; ++c) gb(0, c) += gr[c];
      }
      if (needs(x)) {
        double mean_d = 0.0;
        double mean_dh = 0.0;
        for (int c = 0; c < n; ++c) {
          const double d = gr[c] * Gm(0, c);
          mean_d += d;
          mean_dh += d * hr[c];
        }
        mean_d /= n;
        mean_dh /= n;
        const double is = (*inv_std)[static_cast<std::size_t>(r)];
        double* gx = gbuf(x).row(r);
        for (int c = 0; c < n; ++c) gx[c] += is * (gr[c] * Gm(0, c) - mean_d - hr[c] * mean_dh);
      }
    }
  });
  return out;
}

Var Graph::softmax_rows(Var a) {
  const Matrix& A = value(a);
  Matrix Y(A.rows(), A.cols());
  for (int r = 0; r < A.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < A.cols(); ++c) mx = std::max(mx, A(r, c));
    double z = 0.0;
    for (int c = 0; c < A.cols(); ++c) z += (Y(r, c) = std::exp(A(r, c) - mx));
    for (int c = 0; c < A.cols(); ++c) Y(r, c) /= z;
  }
  Var out = push(std::move(Y), needs(a));
  on_backward(out, [this, a, out] {
    const Matrix& G = node(out).grad;
    const Matrix& Y = value(out);
    Matrix& ga = gbuf(a);
    for (int r = 0; r < Y.rows(); ++r) {
      const double s = kernels::dot(G.row(r), Y.row(r), Y.cols());
      for (int c = 0; c < Y.cols(); ++c) ga(r, c) += Y(r, c) * (G(r, c) - s);
    }
  });
  return out;
}

Var Graph::concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows of nothing");
  const int cols = value(parts[0]).cols();
  int rows = 0;
  bool ng = false;
  for (Var p : parts) {
    require(value(p).cols() == cols, "concat_rows width mismatch");
    rows += value(p).rows();
    ng = ng || needs(p);
  }
  Matrix C(rows, cols);
  int at = 0;
  for (Var p : parts) {
    const Matrix& P = value(p);
    std::copy(P.data(), P.data() + P.size(), C.row(at));
    at += P.rows();
  }
  Var out = push(std::move(C), ng);
  std::vector<Var> keep(parts.begin(), parts.end());
  on_backward(out, [this, keep, out] {
    const Matrix& G = node(out).grad;
    int at = 0;
    for (Var p : keep) {
      const int pr = value(p).rows();
      if (needs(p)) {
        Matrix& gp = gbuf(p);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += G.row(at)[i];
      }
      at += pr;
    }
  });
  return out;
}

Var Graph::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols of nothing");
  const int rows = value(parts[0]).rows();
  int cols = 0;
  bool ng = false;
  for (Var p : parts) {
    require(value(p).rows() == rows, "concat_cols height mismatch");
    cols += value(p).cols();
    ng = ng || needs(p);
  }
  Matrix C(rows, cols);
  int at = 0;
  for (Var p : parts) {
    const Matrix& P = value(p);
    for (int r = 0; r < rows; ++r) std::copy(P.row(r), P.row(r) + P.cols(), C.row(r) + at);
    at += P.cols();
  }
  Var out = push(std::move(C), ng);
  std::vector<Var> keep(parts.begin(), parts.end());
  on_backward(out, [this, keep, out] {
    const Matrix& G = node(out).grad;
    int at = 0;
    for (Var p : keep) {
      const int pc = value(p).cols();
      if (needs(p)) {
        Matrix& gp = gbuf(p);
        for (int r = 0; r < gp.rows(); ++r) kernels::axpy(1.0, G.row(r) + at, gp.row(r), pc);
      }
      at += pc;
    }
  });
  return out;
}

Var Graph::slice_rows(Var a, int start, int count) {
  const Matrix& A = value(a);
  require(start >= 0 && count >= 0 && start + count <= A.rows(), "slice_rows out of range");
  Matrix C(count, A.cols());
  std::copy(A.row(start), A.row(start) + static_cast<std::size_t>(count) * A.cols(), C.data());
  Var out = push(std::move(C), needs(a));
  on_backward(out, [this, a, start, out] {
    const Matrix& G = node(out).grad;
    Matrix& ga = gbuf(a);
    for (std::size_t i = 0; i < G.size(); ++i) ga.row(start)[i] += G[i];
  });
  return out;
}

Var Graph::gather_rows(Var table, std::span<const int> ids) {
  const Matrix& T = value(table);
  Matrix C(static_cast<int>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < T.rows(), "gather_rows id out of range");
    std::copy(T.row(ids[i]), T.row(ids[i]) + T.cols(), C.row(static_cast<int>(i)));
  }
  Var out = push(std::move(C), needs(table));
  std::vector<int> keep(ids.begin(), ids.end());
  on_backward(out, [this, table, keep, out] {
    const Matrix& G = node(out).grad;
    Matrix& gt = gbuf(table);
    for (std::size_t i = 0; i < keep.size(); ++i)
      kernels::axpy(1.0, G.row(static_cast<int>(i)), gt.row(keep[i]), G.cols());
  });
  return out;
}

Var Graph::repeat_row(Var row, int n) {
  const Matrix& R = value(row);
  require(R.rows() == 1, "repeat_row expects a row vector");
  Matrix C(n, R.cols());
  for (int r = 0; r < n; ++r) std::copy(R.data(), R.data() + R.cols(), C.row(r));
  Var out = push(std::move(C), needs(row));
  on_backward(out, [this, row, out] {
    const Matrix& G = node(out).grad;
    Matrix& gr = gbuf(row);
    for (int r = 0; r < G.rows(); ++r) kernels::axpy(1.0, G.row(r), gr.data(), G.cols());
  });
  return out;
}

Var Graph::transpose(Var a) {
  const Matrix& A = value(a);
  Matrix C(A.cols(), A.rows());
  for (int r = 0; r < A.rows(); ++r)
    for (int c = 0; c < A.cols(); ++c) C(c, r) = A(r, c);
  Var out = push(std::move(C), needs(a));
  on_backward(out, [this, a, out] {
    const Matrix& G = node(out).grad;
    Matrix& ga = gbuf(a);
    for (int r = 0; r < ga.rows(); ++r)
      for (int c = 0; c < ga.cols(); ++c) ga(r, c) += G(c, r);
  });
  return out;
}

Var Graph::attention(Var q, Var k, Var v, int heads, const std::vector<char>* key_valid, bool causal) {
  const Matrix& Q = value(q);
  const Matrix& K = value(k);
  const Matrix& V = value(v);
  const int T = Q.rows();
  const int S = K.rows();
  const int d = Q.cols();
  require(K.cols() == d && V.cols() == d && V.rows() == S, "attention shape mismatch");
  require(heads > 0 && d % heads == 0, "attention width not divisible by heads");
  require(key_valid == nullptr || static_cast<int>(key_valid->size()) == S, "attention mask size");
  const int dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h] is T x S
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(heads), Matrix(T, S));
  Matrix O(T, d);
  std::vector<double> s(static_cast<std::size_t>(S));
  for (int h = 0; h < heads; ++h) {
    Matrix& P = (*probs)[static_cast<std::size_t>(h)];
    const int off = h * dh;
    for (int t = 0; t < T; ++t) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < S; ++j) {
        const bool ok = (key_valid == nullptr || (*key_valid)[static_cast<std::size_t>(j)]) && (!causal || j <= t);
        s[static_cast<std::size_t>(j)] = ok ? kernels::dot(Q.row(t) + off, K.row(j) + off, dh) * sc
                                            : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, s[static_cast<std::size_t>(j)]);
      }
      if (!std::isfinite(mx)) continue;  // no admissible key: zero output row
      double z = 0.0;
      for (int j = 0; j < S; ++j) z += (P(t, j) = std::exp(s[static_cast<std::size_t>(j)] - mx));
      for (int j = 0; j < S; ++j) {
        P(t, j) /= z;
        if (P(t, j) != 0.0) kernels::axpy(P(t, j), V.row(j) + off, O.row(t) + off, dh);
      }
    }
  }
  Var out = push(std::move(O), needs(q) || needs(k) || needs(v));
  on_backward(out, [this, q, k, v, out, probs, heads, dh, sc] {
    const Matrix& G = node(out).grad;
    const Matrix& Q = value(q);
    const Matrix& K = value(k);
    const Matrix& V = value(v);
    const int T = Q.rows();
    const int S = K.rows();
    Matrix* gq = needs(q) ? &gbuf(q) : nullptr;
    Matrix* gk = needs(k) ? &gbuf(k) : nullptr;
    Matrix* gv = needs(v) ? &gbuf(v) : nullptr;
    std::vector<double> dp(static_cast<std::size_t>(S));
    for (int h = 0; h < heads; ++h) {
      const Matrix& P = (*probs)[static_cast<std::size_t>(h)];
      const int off = h * dh;
      for (int t = 0; t < T; ++t) {
        const double* gt = G.row(t) + off;
        double acc = 0.0;
        for (int j = 0; j < S; ++j) {
          const double p = P(t, j);
          if (p == 0.0) {
            dp[static_cast<std::size_t>(j)] = 0.0;
            continue;
          }
          dp[static_cast<std::size_t>(j)] = kernels::dot(gt, V.row(j) + off, dh);
          acc += p * dp[static_cast<std::size_t>(j)];
          if (gv != nullptr) kernels::axpy(p, gt, gv->row(j) + off, dh);
        }
        for (int j = 0; j < S; ++j) {
          const double p = P(t, j);
          if (p == 0.0) continue;
          const double ds = p * (dp[static_cast<std::size_t>(j)] - acc) * sc;
          if (gq != nullptr) kernels::axpy(ds, K.row(j) + off, gq->row(t) + off, dh);
          if (gk != nullptr) kernels::axpy(ds, Q.row(t) + off, gk->row(j) + off, dh);
        }
      }
    }
  });
  return out;
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets, int ignore_index) {
  const Matrix& L = value(logits);
  require(static_cast<int>(targets.size()) == L.rows(), "cross_entropy target count mismatch");
  auto probs = std::make_shared<Matrix>(L.rows(), L.cols());
  double total = 0.0;
  int count = 0;
  for (int r = 0; r < L.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < L.cols(); ++c) mx = std::max(mx, L(r, c));
    double z = 0.0;
    for (int c = 0; c < L.cols(); ++c) z += ((*probs)(r, c) = std::exp(L(r, c) - mx));
    for (int c = 0; c < L.cols(); ++c) (*probs)(r, c) /= z;
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_index) continue;
    require(t >= 0 && t < L.cols(), "cross_entropy target out of range");
    total += -(L(r, t) - mx - std::log(z));
    ++count;
  }
  require(count > 0, "cross_entropy with no counted targets");
  Var out = push(Matrix(1, 1, total / count), needs(logits));
  std::vector<int> keep(targets.begin(), targets.end());
  on_backward(out, [this, logits, out, probs, keep, ignore_index, count] {
    const double g = node(out).grad[0] / count;
    Matrix& gl = gbuf(logits);
    for (int r = 0; r < gl.rows(); ++r) {
      const int t = keep[static_cast<std::size_t>(r)];
      if (t == ignore_index) continue;
      for (int c = 0; c < gl.cols(); ++c) gl(r, c) += g * (*probs)(r, c);
      gl(r, t) -= g;
    }
  });
  return out;
}

Var Graph::bce_with_logits(Var logits, std::span<const double> targets) {
  const Matrix& L = value(logits);
  require(targets.size() == L.size(), "bce target count mismatch");
  require(!targets.empty(), "bce with no entries");
  double total = 0.0;
  for (std::size_t i = 0; i < L.size(); ++i) {
    const double x = L[i];
    // softplus(x) - t * x, stable form
    total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - targets[i] * x;
  }
  const double n = static_cast<double>(L.size());
  Var out = push(Matrix(1, 1, total / n), needs(logits));
  std::vector<double> keep(targets.begin(), targets.end());
  on_backward(out, [this, logits, out, keep, n] {
    const double g = node(out).grad[0] / n;
    const Matrix& L = value(logits);
    Matrix& gl = gbuf(logits);
    for (std::size_t i = 0; i < L.size(); ++i) gl[i] += g * (1.0 / (1.0 + std::exp(-L[i])) - keep[i]);
  });
  return out;
}

namespace {

std::vector<double> log_softmax(const double* x, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(x[i] - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = x[i] - lz;
  return out;
}

}  // namespace

Var Graph::kl_from_logits(Var q_logits, Var p_logits) {
  const Matrix& Ql = value(q_logits);
  const Matrix& Pl = value(p_logits);
  require(Ql.rows() == 1 && Ql.same_shape(Pl), "kl_from_logits expects matching row vectors");
  const int n = Ql.cols();
  auto lq = std::make_shared<std::vector<double>>(log_softmax(Ql.data(), n));
  auto lp = std::make_shared<std::vector<double>>(log_softmax(Pl.data(), n));
  double kl = 0.0;
  for (int i = 0; i < n; ++i) {
    const double qi = std::exp((*lq)[static_cast<std::size_t>(i)]);
    if (qi > 0.0) kl += qi * ((*lq)[static_cast<std::size_t>(i)] - (*lp)[static_cast<std::size_t>(i)]);
  }
  kl = std::max(kl, 0.0);
  Var out = push(Matrix(1, 1, kl), needs(q_logits) || needs(p_logits));
  on_backward(out, [this, q_logits, p_logits, out, lq, lp, kl, n] {
    const double g = node(out).grad[0];
    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double qi = std::exp((*lq)[ui]);
      const double pi = std::exp((*lp)[ui]);
      if (needs(q_logits)) gbuf(q_logits)[ui] += g * qi * (((*lq)[ui] - (*lp)[ui]) - kl);
      if (needs(p_logits)) gbuf(p_logits)[ui] += g * (pi - qi);
    }
  });
  return out;
}

Var Graph::gumbel_softmax(Var logits, std::span<const double> noise, double tau, bool hard) {
  const Matrix& L = value(logits);
  require(L.rows() == 1, "gumbel_softmax expects a row vector");
  require(noise.size() == L.size(), "gumbel_softmax noise size mismatch");
  require(tau > 0.0, "gumbel_softmax temperature must be positive");
  const int n = L.cols();
  auto soft = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, (L[static_cast<std::size_t>(i)] + noise[static_cast<std::size_t>(i)]) / tau);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    z += ((*soft)[ui] = std::exp((L[ui] + noise[ui]) / tau - mx));
  }
  int arg = 0;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    (*soft)[ui] /= z;
    if ((*soft)[ui] > (*soft)[static_cast<std::size_t>(arg)]) arg = i;
  }
  Matrix Y(1, n);
  if (hard) {
    Y[static_cast<std::size_t>(arg)] = 1.0;
  } else {
    for (int i = 0; i < n; ++i) Y[static_cast<std::size_t>(i)] = (*soft)[static_cast<std::size_t>(i)];
  }
  Var out = push(std::move(Y), needs(logits));
  on_backward(out, [this, logits, out, soft, tau, n] {
    const Matrix& G = node(out).grad;
    Matrix& gl = gbuf(logits);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += G[static_cast<std::size_t>(i)] * (*soft)[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      gl[uj] += (*soft)[uj] * (G[uj] - s) / tau;
    }
  });
  return out;
}

Var Graph::clamp01_straight_through(Var a) {
  Matrix C = value(a);
  for (double& v : C.values()) v = std::min(1.0, v);
  Var out = push(std::move(C), needs(a));
  on_backward(out, [this, a, out] { gbuf(a).add_inplace(node(out).grad); });
  return out;
}

void Graph::backward(Var loss) {
  if (!record_) throw std::logic_error("backward() on a non-recording graph");
  require(value(loss).size() == 1, "backward() needs a scalar loss");
  gbuf(loss)[0] += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward_fn) n.backward_fn();
    if (n.param != nullptr) n.param->grad.add_inplace(n.grad);
  }
}

}  // namespace nn
}  // namespace gvqg
