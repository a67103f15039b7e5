#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "gvqg/autograd.hpp"
#include "gvqg/optim.hpp"

using namespace gvqg;
using nn::Graph;
using nn::Var;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = nd(rng);
  return m;
}

using Builder = std::function<Var(Graph&, std::vector<Var>&)>;

// Central finite differences on every input entry vs. the tape gradient.
double max_rel_error(const std::vector<Matrix>& inputs, const Builder& build, double h = 1e-5) {
  Graph g;
  std::vector<Var> leaves;
  for (const auto& m : inputs) leaves.push_back(g.leaf(m));
  Var out = build(g, leaves);
  g.backward(out);
  double worst = 0.0;
  for (std::size_t li = 0; li < inputs.size(); ++li) {
    const Matrix analytic = g.grad(leaves[li]);
    for (std::size_t e = 0; e < inputs[li].size(); ++e) {
      auto eval = [&](double delta) {
        auto perturbed = inputs;
        perturbed[li][e] += delta;
        Graph g2(false);
        std::vector<Var> l2;
        for (const auto& m : perturbed) l2.push_back(g2.constant(m));
        return g2.scalar(build(g2, l2));
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double denom = std::max(1e-3, std::abs(numeric) + std::abs(analytic[e]));
      worst = std::max(worst, std::abs(numeric - analytic[e]) / denom);
    }
  }
  return worst;
}

// Reduces a matrix to a scalar with fixed non-uniform weights.
Var readout(Graph& g, Var v) {
  Matrix w(g.rows(v), g.cols(v));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
  return g.sum(g.mul(v, g.constant(w)));
}

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
  std::mt19937_64 rng(3);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix b = random_matrix(4, 5, rng);
  const Matrix c = random_matrix(3, 4, rng);
  const Matrix row = random_matrix(1, 4, rng);
  const Matrix bias = random_matrix(1, 5, rng);
  const Matrix w3 = random_matrix(1, 3, rng);

  CHECK(max_rel_error({a, b}, [](Graph& g, auto& v) { return readout(g, g.matmul(v[0], v[1])); }) < 1e-6);
  CHECK(max_rel_error({a, b, bias}, [](Graph& g, auto& v) { return readout(g, g.linear(v[0], v[1], v[2])); }) <
        1e-6);
  CHECK(max_rel_error({a, c}, [](Graph& g, auto& v) { return readout(g, g.mul(v[0], v[1])); }) < 1e-6);
  CHECK(max_rel_error({a, c}, [](Graph& g, auto& v) { return readout(g, g.add(v[0], v[1])); }) < 1e-6);
  CHECK(max_rel_error({a, row}, [](Graph& g, auto& v) { return readout(g, g.add_row(v[0], v[1])); }) < 1e-6);
  CHECK(max_rel_error({a, row}, [](Graph& g, auto& v) { return readout(g, g.mul_row(v[0], v[1])); }) < 1e-6);
  CHECK(max_rel_error({a, w3}, [](Graph& g, auto& v) { return readout(g, g.scale_rows(v[0], v[1])); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Graph& g, auto& v) { return readout(g, g.gelu(v[0])); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Graph& g, auto& v) { return readout(g, g.softmax_rows(v[0])); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Graph& g, auto& v) { return readout(g, g.transpose(v[0])); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Graph& g, auto& v) { return readout(g, g.sum_rows(v[0])); }) < 1e-6);
  CHECK(max_rel_error({row}, [](Graph& g, auto& v) { return readout(g, g.repeat_row(v[0], 3)); }) < 1e-6);
}

TEST_CASE("layer norm and shape ops match finite differences") {
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(3, 6, rng);
  const Matrix gamma = random_matrix(1, 6, rng);
  const Matrix beta = random_matrix(1, 6, rng);
  CHECK(max_rel_error({x, gamma, beta},
                      [](Graph& g, auto& v) { return readout(g, g.layer_norm(v[0], v[1], v[2])); }) < 1e-5);
  const Matrix y = random_matrix(2, 6, rng);
  CHECK(max_rel_error({x, y},
                      [](Graph& g, auto& v) {
                        const std::array<Var, 2> parts{v[0], v[1]};
                        return readout(g, g.slice_rows(g.concat_rows(parts), 1, 3));
                      }) < 1e-6);
  const Matrix z = random_matrix(3, 2, rng);
  CHECK(max_rel_error({x, z},
                      [](Graph& g, auto& v) {
                        const std::array<Var, 2> parts{v[0], v[1]};
                        return readout(g, g.concat_cols(parts));
                      }) < 1e-6);
  const std::vector<int> ids{2, 0, 2};
  CHECK(max_rel_error({x}, [&](Graph& g, auto& v) { return readout(g, g.gather_rows(v[0], ids)); }) < 1e-6);
}

TEST_CASE("attention matches finite differences with masks") {
  std::mt19937_64 rng(9);
  const Matrix q = random_matrix(3, 8, rng);
  const Matrix k = random_matrix(4, 8, rng);
  const Matrix v = random_matrix(4, 8, rng);
  const std::vector<char> valid{1, 0, 1, 1};
  CHECK(max_rel_error({q, k, v},
                      [&](Graph& g, auto& in) {
                        return readout(g, g.attention(in[0], in[1], in[2], 2, &valid, false));
                      }) < 1e-5);
  const Matrix s = random_matrix(4, 8, rng);
  CHECK(max_rel_error({s}, [&](Graph& g, auto& in) {
          return readout(g, g.attention(in[0], in[0], in[0], 4, nullptr, true));
        }) < 1e-5);
}

TEST_CASE("losses match finite differences") {
  std::mt19937_64 rng(11);
  const Matrix logits = random_matrix(4, 5, rng);
  const std::vector<int> targets{1, -1, 4, 0};
  CHECK(max_rel_error({logits}, [&](Graph& g, auto& v) { return g.cross_entropy(v[0], targets); }) < 1e-6);
  const Matrix bl = random_matrix(1, 5, rng);
  const std::vector<double> bt{1, 0, 0, 1, 0};
  CHECK(max_rel_error({bl}, [&](Graph& g, auto& v) { return g.bce_with_logits(v[0], bt); }) < 1e-6);
  const Matrix ql = random_matrix(1, 5, rng);
  const Matrix pl = random_matrix(1, 5, rng);
  CHECK(max_rel_error({ql, pl}, [](Graph& g, auto& v) { return g.kl_from_logits(v[0], v[1]); }) < 1e-6);
}

TEST_CASE("cross entropy ignores masked rows and uniform logits give ln V") {
  Graph g;
  Var l = g.constant(Matrix(3, 10, 0.0));
  const std::vector<int> t{3, -1, 7};
  CHECK(g.scalar(g.cross_entropy(l, t)) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("parameters share one node per graph and accumulate gradients") {
  nn::Parameter p(1, 3);
  p.value = Matrix::row_vector({1.0, 2.0, 3.0});
  Graph g;
  Var a = g.param(p);
  Var b = g.param(p);
  CHECK(a.id == b.id);
  g.backward(g.sum(g.add(a, b)));
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.grad[i] == doctest::Approx(2.0));
  Graph g2;
  g2.backward(g2.sum(g2.param(p)));
  CHECK(p.grad[0] == doctest::Approx(3.0));
  p.zero_grad();
  CHECK(p.grad[0] == 0.0);
}

TEST_CASE("non-recording graph computes values without gradients") {
  nn::Parameter p(1, 2);
  p.value = Matrix::row_vector({0.5, -0.5});
  Graph g(false);
  Var s = g.sum(g.mul(g.param(p), g.param(p)));
  CHECK(g.scalar(s) == doctest::Approx(0.5));
  CHECK_FALSE(g.recording());
}

TEST_CASE("hard gumbel softmax is one-hot with the soft Jacobian") {
  const Matrix logits = Matrix::row_vector({0.3, -0.2, 1.1, 0.0});
  const std::vector<double> noise{0.1, 0.4, -0.3, 0.2};
  Graph g;
  Var l = g.leaf(logits);
  Var h = g.gumbel_softmax(l, noise, 0.7, true);
  int ones = 0;
  for (double x : g.value(h).values()) {
    CHECK((x == 0.0 || x == 1.0));
    ones += x == 1.0;
  }
  CHECK(ones == 1);
  // Soft path gradient by finite differences.
  CHECK(max_rel_error({logits}, [&](Graph& gg, auto& v) { return readout(gg, gg.gumbel_softmax(v[0], noise, 0.7, false)); }) <
        1e-6);
}

TEST_CASE("shape errors are reported") {
  Graph g;
  Var a = g.constant(Matrix(2, 3));
  Var b = g.constant(Matrix(2, 3));
  CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
  CHECK_THROWS_AS(g.slice_rows(a, 1, 5), ShapeError);
}

TEST_CASE("adam reduces a quadratic and clips the global norm") {
  nn::Parameter p(1, 2);
  p.value = Matrix::row_vector({3.0, -4.0});
  nn::AdamConfig cfg;
  cfg.lr = 0.1;
  nn::Adam adam({{"p", &p}}, cfg);
  double first = 0.0;
  for (int i = 0; i < 200; ++i) {
    Graph g;
    Var v = g.param(p);
    Var loss = g.sum(g.mul(v, v));
    if (i == 0) first = g.scalar(loss);
    g.backward(loss);
    const double norm = adam.step();
    if (i == 0) CHECK(norm == doctest::Approx(10.0));
  }
  CHECK(first == doctest::Approx(25.0));
  CHECK(std::abs(p.value[0]) < 0.1);
  CHECK(std::abs(p.value[1]) < 0.1);
  CHECK(p.grad[0] == 0.0);
}
