#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "gvqg/core.hpp"
#include "gvqg/world.hpp"

using namespace gvqg;
using namespace gvqg::nn;

namespace {

CoreConfig tiny_config() {
  CoreConfig c;
  c.vocab_size = 12;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.text_layers = 2;
  c.image_layers = 2;
  c.decoder_layers = 2;
  c.feature_dim = 5;
  c.max_len = 6;
  c.init_std = 0.3;
  return c;
}

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = nd(rng);
  return m;
}

Matrix random_boxes(int rows, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 0.5);
  Matrix b(rows, 4);
  for (int r = 0; r < rows; ++r) {
    b(r, 0) = u(rng);
    b(r, 1) = u(rng);
    b(r, 2) = b(r, 0) + 0.1 + u(rng);
    b(r, 3) = b(r, 1) + 0.1 + u(rng);
  }
  return b;
}

bool close_rel(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + 1e-9; }

// Central differences of f over every entry of `values` vs. `analytic`.
void check_fd(std::span<double> values, const Matrix& analytic, const std::function<double()>& f) {
  constexpr double h = 1e-5;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = f();
    values[i] = keep - h;
    const double down = f();
    values[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    CHECK_MESSAGE(close_rel(fd, analytic[i], 1e-4), "entry " << i << ": fd " << fd << " vs " << analytic[i]);
  }
}

struct TinyModel {
  CoreConfig cfg = tiny_config();
  std::mt19937_64 rng{5};
  TextEncoder text{cfg, rng};
  ImageEncoder image{cfg, rng};
  Decoder decoder{cfg, rng};

  NamedParams params() {
    NamedParams p;
    text.collect("text", p);
    image.collect("image", p);
    decoder.collect("decoder", p);
    return p;
  }
};

}  // namespace

TEST_CASE("config validation names the field") {
  CoreConfig c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("heads"), std::invalid_argument);
  c = tiny_config();
  c.vocab_size = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("vocab_size"), std::invalid_argument);
  c = tiny_config();
  c.decoder_layers = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("decoder_layers"), std::invalid_argument);
}

TEST_CASE("text encoder is permutation equivariant") {
  TinyModel m;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> tok(4, m.cfg.vocab_size - 1);
  for (int t = 0; t < 30; ++t) {
    std::vector<int> ids(static_cast<std::size_t>(1 + t % 6));
    for (auto& id : ids) id = tok(rng);
    std::vector<int> perm(ids.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> permuted(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) permuted[i] = ids[static_cast<std::size_t>(perm[i])];

    Graph g(false);
    const Matrix a = g.value(m.text.encode(g, ids));
    const Matrix b = g.value(m.text.encode(g, permuted));
    REQUIRE(a.rows() == static_cast<int>(ids.size()));
    REQUIRE(a.cols() == m.cfg.d_model);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int c = 0; c < a.cols(); ++c) CHECK(b(static_cast<int>(i), c) == doctest::Approx(a(perm[i], c)).epsilon(1e-12));
  }
}

TEST_CASE("empty text yields one NULL row") {
  TinyModel m;
  Graph g(false);
  const Matrix s = g.value(m.text.encode(g, std::vector<int>{}));
  CHECK(s.rows() == 1);
  CHECK(s.cols() == m.cfg.d_model);
  CHECK(all_finite(s));
}

TEST_CASE("zero-layer text encoder is the embedding lookup") {
  CoreConfig cfg = tiny_config();
  cfg.text_layers = 0;
  std::mt19937_64 rng(1);
  TextEncoder enc(cfg, rng);
  const std::vector<int> ids{4, 7, 7, 11};
  Graph g(false);
  const Matrix enc_rows = g.value(enc.encode(g, ids));
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (int c = 0; c < cfg.d_model; ++c) CHECK(enc_rows(static_cast<int>(i), c) == enc.table().value(ids[i], c));
}

TEST_CASE("image encoder") {
  TinyModel m;
  std::mt19937_64 rng(8);
  const Matrix f = random_matrix(4, m.cfg.feature_dim, rng);
  const Matrix b = random_boxes(4, rng);
  const std::vector<char> valid{1, 1, 0, 1};

  SUBCASE("padding rows are dropped and ignored") {
    Graph g(false);
    const auto enc = m.image.encode(g, f, b, valid);
    CHECK(enc.slots == std::vector<int>{0, 1, 3});
    CHECK(g.rows(enc.rows) == 3);
    CHECK_FALSE(enc.all_masked);
    Matrix f2 = f;
    for (int c = 0; c < f2.cols(); ++c) f2(2, c) += 5.0;
    const auto enc2 = m.image.encode(g, f2, b, valid);
    for (std::size_t i = 0; i < g.value(enc.rows).size(); ++i)
      CHECK(g.value(enc.rows)[i] == g.value(enc2.rows)[i]);
  }
  SUBCASE("boxes carry position") {
    Graph g(false);
    Matrix shifted = b;
    for (int r = 0; r < shifted.rows(); ++r)
      for (int c = 0; c < 4; ++c) shifted(r, c) += 0.2;
    const Matrix a = g.value(m.image.encode(g, f, b, valid).rows);
    const Matrix s = g.value(m.image.encode(g, f, shifted, valid).rows);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - s[i]));
    CHECK(diff > 1e-3);
  }
  SUBCASE("all padding is flagged") {
    Graph g(false);
    const auto enc = m.image.encode(g, f, b, std::vector<char>(4, 0));
    CHECK(enc.all_masked);
    CHECK(g.rows(enc.rows) == 1);
    CHECK(enc.slots.empty());
  }
  SUBCASE("mismatched rows are a shape error") {
    Graph g(false);
    CHECK_THROWS_AS(m.image.encode(g, f, random_boxes(3, rng), valid), ShapeError);
    CHECK_THROWS_AS(m.image.encode(g, f, b, std::vector<char>{1, 1}), ShapeError);
  }
  SUBCASE("feature gradients match finite differences") {
    const Matrix head = random_matrix(3, m.cfg.d_model, rng);
    Matrix fv = f;
    auto forward = [&](Graph& g, Var fvar) {
      return g.sum(g.mul(m.image.encode(g, fvar, b, valid).rows, g.constant(head)));
    };
    Graph g;
    Var fvar = g.leaf(fv);
    g.backward(forward(g, fvar));
    const Matrix analytic = g.grad(fvar);
    check_fd(fv.values(), analytic, [&] {
      Graph h(false);
      return h.scalar(forward(h, h.constant(fv)));
    });
  }
}

TEST_CASE("teacher-forced NLL") {
  TinyModel m;
  std::mt19937_64 rng(4);
  const std::vector<int> target{5, 9, 6};

  SUBCASE("uniform logits give ln V") {
    for (auto& [name, p] : m.params())
      if (name.rfind("decoder.out.", 0) == 0) p->value.fill(0.0);
    Graph g(false);
    const auto r = teacher_forced_nll(g, m.decoder, g.constant(random_matrix(3, m.cfg.d_model, rng)), target);
    CHECK(g.scalar(r.loss) == doctest::Approx(std::log(12.0)).epsilon(1e-12));
    CHECK(g.rows(r.logits) == 4);
  }
  SUBCASE("non-negative") {
    for (int t = 0; t < 20; ++t) {
      Graph g(false);
      const auto r = teacher_forced_nll(g, m.decoder, g.constant(random_matrix(2, m.cfg.d_model, rng)), target);
      CHECK(g.scalar(r.loss) >= 0.0);
    }
  }
  SUBCASE("errors") {
    Graph g(false);
    Var mem = g.constant(random_matrix(2, m.cfg.d_model, rng));
    CHECK_THROWS_AS(teacher_forced_nll(g, m.decoder, mem, std::vector<int>{}), std::invalid_argument);
    CHECK_THROWS_AS(teacher_forced_nll(g, m.decoder, mem, std::vector<int>(7, 5)), std::invalid_argument);
  }
}

TEST_CASE("decoder and encoder gradients match finite differences on micro examples") {
  TinyModel m;
  std::mt19937_64 rng(21);
  const std::vector<std::vector<int>> targets{{5, 9, 6}, {4, 4, 10}, {11, 7, 5}};
  const std::vector<std::string> checked{"decoder.layer0.cross.q.weight", "decoder.out.bias", "decoder.positions",
                                         "image.feature.weight", "image.box.weight",
                                         "text.stack.layer1.attn.v.weight"};
  for (const auto& target : targets) {
    const Matrix f = random_matrix(3, m.cfg.feature_dim, rng);
    const Matrix b = random_boxes(3, rng);
    const std::vector<int> ids{4, 8};
    auto loss = [&](Graph& g) {
      Var s = m.text.encode(g, ids);
      Var i = m.image.encode(g, f, b, std::vector<char>{1, 1, 1}).rows;
      return teacher_forced_nll(g, m.decoder, g.concat_rows(std::array<Var, 2>{s, i}), target).loss;
    };
    auto params = m.params();
    for (auto& [name, p] : params) p->zero_grad();
    Graph g;
    g.backward(loss(g));
    for (auto& [name, p] : params) {
      CHECK_MESSAGE(all_finite(p->grad), name);
      if (std::find(checked.begin(), checked.end(), name) == checked.end()) continue;
      INFO(name);
      const Matrix analytic = p->grad;
      check_fd(p->value.values(), analytic, [&] {
        Graph h(false);
        return h.scalar(loss(h));
      });
    }
  }
}

TEST_CASE("decoder logits are causal") {
  TinyModel m;
  std::mt19937_64 rng(6);
  Graph g(false);
  Var mem = g.constant(random_matrix(3, m.cfg.d_model, rng));
  const std::vector<int> inputs{world::Vocabulary::kBos, 5, 9, 6, 7};
  const Matrix base = g.value(m.decoder.logits(g, mem, inputs));
  for (std::size_t t = 0; t + 1 < inputs.size(); ++t) {
    std::vector<int> changed = inputs;
    for (std::size_t j = t + 1; j < changed.size(); ++j) changed[j] = 4 + static_cast<int>((changed[j] + 3) % 8);
    const Matrix alt = g.value(m.decoder.logits(g, mem, changed));
    for (std::size_t r = 0; r <= t; ++r)
      for (int c = 0; c < base.cols(); ++c) CHECK(alt(static_cast<int>(r), c) == base(static_cast<int>(r), c));
  }
}

TEST_CASE("decoding") {
  TinyModel m;
  std::mt19937_64 rng(12);
  const Matrix memory = random_matrix(3, m.cfg.d_model, rng);

  SUBCASE("untrained output respects the contract and is deterministic") {
    Graph g(false);
    Var mem = g.constant(memory);
    DecodeOptions opts;
    opts.max_len = 6;
    const auto a = decode(g, m.decoder, mem, opts);
    const auto b = decode(g, m.decoder, mem, opts);
    CHECK(a == b);
    CHECK(a.size() <= 6);
    for (int t : a) {
      CHECK(t != world::Vocabulary::kPad);
      CHECK(t != world::Vocabulary::kBos);
      CHECK(t != world::Vocabulary::kEos);
    }
    opts.temperature = 1.0;
    opts.seed = 3;
    CHECK(decode(g, m.decoder, mem, opts) == decode(g, m.decoder, mem, opts));
  }
  SUBCASE("overfitting one example reproduces the target") {
    const std::vector<int> target{7, 5, 10, 5};
    AdamConfig ac;
    ac.lr = 1e-2;
    Adam opt(m.params(), ac);
    for (int step = 0; step < 200; ++step) {
      Graph g;
      g.backward(teacher_forced_nll(g, m.decoder, g.constant(memory), target).loss);
      opt.step();
    }
    Graph g(false);
    CHECK(decode(g, m.decoder, g.constant(memory), DecodeOptions{}) == target);
  }
}
