#include <doctest.h>

#include <array>
#include <cmath>
#include <random>

#include "gvqg/sampling.hpp"

using namespace gvqg;
using namespace gvqg::sampling;

namespace {

std::array<double, 3> hard_frequencies(const std::vector<double>& logits, int draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GumbelConfig cfg;
  std::array<double, 3> freq{};
  for (int i = 0; i < draws; ++i) {
    const auto y = gumbel_softmax(logits, cfg, rng);
    for (std::size_t j = 0; j < 3; ++j) freq[j] += y[j];
  }
  for (auto& f : freq) f /= draws;
  return freq;
}

std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) s += (v = ex(rng));
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("zero-noise peaked sample is the argmax one-hot") {
  const std::vector<double> logits{5, 0, 0};
  const std::vector<double> noise(3, 0.0);
  GumbelConfig cfg;
  cfg.tau = 0.1;
  cfg.hard = true;
  CHECK(gumbel_softmax_with_noise(logits, noise, cfg) == std::vector<double>{1, 0, 0});
  cfg.hard = false;
  const auto soft = gumbel_softmax_with_noise(logits, noise, cfg);
  CHECK(soft[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("soft samples lie on the simplex and hard samples are one-hot") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> logits(7);
    for (auto& l : logits) l = nd(rng);
    GumbelConfig cfg;
    cfg.tau = 0.3 + 0.01 * t;
    cfg.hard = false;
    const auto y = gumbel_softmax(logits, cfg, rng);
    double s = 0.0;
    for (double v : y) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
    cfg.hard = true;
    const auto h = gumbel_softmax(logits, cfg, rng);
    int ones = 0;
    for (double v : h) {
      CHECK((v == 0.0 || v == 1.0));
      ones += v == 1.0;
    }
    CHECK(ones == 1);
  }
}

TEST_CASE("hard sample frequencies match the softmax") {
  const std::vector<double> logits{1, 0, -1};
  const auto expected = softmax(logits);
  const auto freq = hard_frequencies(logits, 100000, 17);
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(freq[j] - expected[j]) < 0.01);
}

TEST_CASE("sampled distribution is invariant to a logit shift") {
  const auto base = hard_frequencies({1, 0, -1}, 100000, 21);
  const auto shifted = hard_frequencies({8.5, 7.5, 6.5}, 100000, 22);
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(base[j] - shifted[j]) < 0.01);
}

TEST_CASE("soft sample entropy does not increase as temperature falls") {
  const std::vector<double> logits{0.7, 0.2, -0.4, 0.0, 1.1};
  std::mt19937_64 rng(5);
  std::vector<std::vector<double>> noises;
  for (int i = 0; i < 2000; ++i) noises.push_back(gumbel_noise(logits.size(), rng));
  double prev = std::log(static_cast<double>(logits.size())) + 1e-12;
  for (double tau : {2.0, 1.0, 0.5, 0.1}) {
    GumbelConfig cfg;
    cfg.tau = tau;
    cfg.hard = false;
    double h = 0.0;
    for (const auto& n : noises) h += entropy(gumbel_softmax_with_noise(logits, n, cfg));
    h /= static_cast<double>(noises.size());
    CHECK(h <= prev);
    prev = h;
  }
}

TEST_CASE("non-positive temperature and non-finite logits are rejected") {
  std::mt19937_64 rng(1);
  GumbelConfig cfg;
  cfg.tau = 0.0;
  const std::vector<double> logits{1, 2};
  CHECK_THROWS_AS(gumbel_softmax(logits, cfg, rng), std::invalid_argument);
  cfg.tau = -1.0;
  CHECK_THROWS_AS(sample_k_hot(logits, 1, cfg, rng), std::invalid_argument);
  cfg.tau = 1.0;
  const std::vector<double> bad{1, std::nan("")};
  CHECK_THROWS_AS(gumbel_softmax(bad, cfg, rng), std::invalid_argument);
}

TEST_CASE("annealed temperature") {
  GumbelConfig cfg;
  cfg.tau = 2.0;
  cfg.anneal = 0.5;
  CHECK(cfg.tau_at_epoch(0) == 2.0);
  CHECK(cfg.tau_at_epoch(2) == doctest::Approx(0.5));
}

TEST_CASE("k-hot masks") {
  std::mt19937_64 rng(9);
  GumbelConfig cfg;

  SUBCASE("k=1 yields exactly one") {
    const std::vector<double> scores{0.3, -0.2, 0.9, 0.0};
    for (int i = 0; i < 500; ++i) CHECK(sample_k_hot(scores, 1, cfg, rng).ones() == 1);
  }
  SUBCASE("dominant entry is always selected") {
    cfg.tau = 0.1;
    const std::vector<double> scores{0, 10, 0, 0, 0};
    for (int i = 0; i < 1000; ++i) {
      const auto m = sample_k_hot(scores, 1, cfg, rng);
      CHECK(m.indices() == std::vector<int>{1});
    }
  }
  SUBCASE("binary with 1..k ones") {
    std::normal_distribution<double> nd;
    for (int t = 0; t < 500; ++t) {
      std::vector<double> scores(6);
      for (auto& s : scores) s = nd(rng);
      const int k = 1 + t % 4;
      const auto m = sample_k_hot(scores, k, cfg, rng);
      for (double v : m.z) CHECK((v == 0.0 || v == 1.0));
      CHECK(m.ones() >= 1);
      CHECK(m.ones() <= k);
      for (std::size_t i = 0; i < m.z.size(); ++i)
        if (m.z[i] == 1.0) CHECK(m.soft[i] > 0.0);
    }
  }
  SUBCASE("collision rate for uniform scores") {
    const std::vector<double> scores(8, 0.0);
    double total = 0.0;
    constexpr int kDraws = 100000;
    for (int i = 0; i < kDraws; ++i) total += sample_k_hot(scores, 2, cfg, rng).ones();
    CHECK(std::abs(total / kDraws - 1.875) < 0.02);
  }
  SUBCASE("k larger than the slot count is an error") {
    const std::vector<double> scores{1, 2};
    CHECK_THROWS_AS(sample_k_hot(scores, 3, cfg, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_k_hot(scores, 0, cfg, rng), std::invalid_argument);
  }
}

TEST_CASE("graph k-hot mask carries the sum of soft-draw gradients") {
  const std::vector<double> logits{0.4, -0.3, 1.2, 0.1, -0.8};
  const std::vector<double> readout{0.5, -1.0, 2.0, 0.25, 1.5};
  GumbelConfig cfg;
  cfg.tau = 0.7;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    nn::Graph g;
    nn::Var l = g.leaf(Matrix::row_vector(logits));
    GuidanceMask mask;
    nn::Var z = sample_k_hot(g, l, 3, cfg, rng, &mask);
    g.backward(g.sum(g.mul(z, g.constant(Matrix::row_vector(readout)))));

    std::mt19937_64 replay(seed);
    std::vector<double> expected(logits.size(), 0.0);
    std::vector<double> hard_or(logits.size(), 0.0);
    for (int draw = 0; draw < 3; ++draw) {
      const auto noise = gumbel_noise(logits.size(), replay);
      const auto rep = straight_through_grad_check(logits, readout, noise, cfg);
      for (std::size_t i = 0; i < expected.size(); ++i) expected[i] += rep.analytic_grad[i];
      GumbelConfig hard = cfg;
      hard.hard = true;
      const auto h = gumbel_softmax_with_noise(logits, noise, hard);
      for (std::size_t i = 0; i < h.size(); ++i) hard_or[i] = std::max(hard_or[i], h[i]);
    }
    CHECK(mask.z == hard_or);
    const Matrix grad = g.grad(l);
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(grad.values()[i] == doctest::Approx(expected[i]).epsilon(1e-9));
  }
}

TEST_CASE("random k-subsets") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto m = random_k_subset(6, 2, rng);
    CHECK(m.ones() == 2);
    CHECK(m.mode == MaskMode::random);
  }
  CHECK(random_k_subset(3, 5, rng).ones() == 3);
  const std::vector<int> bad{0, 4};
  CHECK_THROWS_AS(mask_from_indices(3, bad, MaskMode::gold), std::out_of_range);
}

TEST_CASE("straight-through gradient check") {
  const std::vector<double> logits{0.3, -1.2, 0.8, 0.05};
  const std::vector<double> readout{1.0, -0.5, 2.0, 0.7};
  std::mt19937_64 rng(8);
  const auto noise = gumbel_noise(logits.size(), rng);

  SUBCASE("matches the analytic soft gradient") {
    for (double tau : {0.5, 1.0, 2.0}) {
      GumbelConfig cfg;
      cfg.tau = tau;
      const auto rep = straight_through_grad_check(logits, readout, noise, cfg);
      CHECK(rep.passed);
      CHECK(rep.max_abs_diff <= 1e-6);
    }
  }
  SUBCASE("zero readout gives zero gradient") {
    const std::vector<double> zeros(logits.size(), 0.0);
    const auto rep = straight_through_grad_check(logits, zeros, noise, GumbelConfig{});
    for (double v : rep.st_grad) CHECK(v == 0.0);
  }
  SUBCASE("a difference above tolerance is flagged") {
    const auto rep = straight_through_grad_check(logits, readout, noise, GumbelConfig{}, -1.0);
    CHECK_FALSE(rep.passed);
  }
}

TEST_CASE("categorical KL") {
  const std::vector<double> q{1, 0};
  const std::vector<double> p{0.5, 0.5};
  CHECK(categorical_kl(q, p) == doctest::Approx(0.6931471805599453).epsilon(1e-12));
  CHECK(categorical_kl(p, p) == 0.0);

  std::mt19937_64 rng(12);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_simplex(5, rng);
    const auto b = random_simplex(5, rng);
    CHECK(categorical_kl(a, b) >= 0.0);
    CHECK(categorical_kl(a, a) == 0.0);
  }

  const std::vector<double> negative{1.5, -0.5};
  const std::vector<double> off{0.6, 0.6};
  const std::vector<double> shorter{1.0};
  CHECK_THROWS_AS(categorical_kl(negative, p), std::invalid_argument);
  CHECK_THROWS_AS(categorical_kl(off, p), std::invalid_argument);
  CHECK_THROWS_AS(categorical_kl(shorter, p), std::invalid_argument);
}
