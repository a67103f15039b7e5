#include "gvqg/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gvqg::sampling {

double GumbelConfig::tau_at_epoch(int epoch) const { return tau * std::pow(anneal, std::max(0, epoch)); }

std::string_view to_string(MaskMode m) {
  switch (m) {
    case MaskMode::predicted: return "predicted";
    case MaskMode::gold: return "gold";
    case MaskMode::random: return "random";
  }
  return "?";
}

int GuidanceMask::ones() const {
  return static_cast<int>(std::count_if(z.begin(), z.end(), [](double v) { return v > 0.5; }));
}

std::vector<int> GuidanceMask::indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (z[i] > 0.5) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<double> gumbel_noise(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ur(std::numeric_limits<double>::min(), 1.0);
  std::vector<double> g(n);
  for (auto& v : g) v = -std::log(-std::log(ur(rng)));
  return g;
}

std::vector<double> softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

std::vector<double> gumbel_softmax_with_noise(std::span<const double> logits, std::span<const double> noise,
                                              const GumbelConfig& cfg) {
  cfg.validate();
  if (noise.size() != logits.size()) throw std::invalid_argument("gumbel_softmax: noise size mismatch");
  std::vector<double> x(logits.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(logits[i])) throw std::invalid_argument("gumbel_softmax: non-finite logit");
    x[i] = (logits[i] + noise[i]) / cfg.tau;
  }
  auto y = softmax(x);
  if (!cfg.hard) return y;
  std::vector<double> h(y.size(), 0.0);
  h[static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin())] = 1.0;
  return h;
}

std::vector<double> gumbel_softmax(std::span<const double> logits, const GumbelConfig& cfg, std::mt19937_64& rng) {
  const auto noise = gumbel_noise(logits.size(), rng);
  return gumbel_softmax_with_noise(logits, noise, cfg);
}

GuidanceMask sample_k_hot(std::span<const double> scores, int k, const GumbelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (k < 1) throw std::invalid_argument("sample_k_hot: k must be >= 1");
  if (k > static_cast<int>(scores.size())) throw std::invalid_argument("sample_k_hot: k exceeds the number of slots");
  GuidanceMask m;
  m.mode = MaskMode::predicted;
  m.z.assign(scores.size(), 0.0);
  m.soft.assign(scores.size(), 0.0);
  GumbelConfig soft_cfg = cfg;
  soft_cfg.hard = false;
  for (int draw = 0; draw < k; ++draw) {
    const auto noise = gumbel_noise(scores.size(), rng);
    const auto y = gumbel_softmax_with_noise(scores, noise, soft_cfg);
    const auto arg = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    m.z[arg] = 1.0;
    for (std::size_t i = 0; i < y.size(); ++i) m.soft[i] = std::max(m.soft[i], y[i]);
  }
  return m;
}

nn::Var sample_k_hot(nn::Graph& g, nn::Var logits, int k, const GumbelConfig& cfg, std::mt19937_64& rng,
                     GuidanceMask* mask) {
  cfg.validate();
  const int n = g.cols(logits);
  if (k < 1) throw std::invalid_argument("sample_k_hot: k must be >= 1");
  if (k > n) throw std::invalid_argument("sample_k_hot: k exceeds the number of slots");
  nn::Var acc;
  std::vector<double> soft_max(static_cast<std::size_t>(n), 0.0);
  for (int draw = 0; draw < k; ++draw) {
    const auto noise = gumbel_noise(static_cast<std::size_t>(n), rng);
    if (mask != nullptr) {
      GumbelConfig soft_cfg = cfg;
      soft_cfg.hard = false;
      const auto y = gumbel_softmax_with_noise(g.value(logits).values(), noise, soft_cfg);
      for (std::size_t i = 0; i < y.size(); ++i) soft_max[i] = std::max(soft_max[i], y[i]);
    }
    nn::Var h = g.gumbel_softmax(logits, noise, cfg.tau, true);
    acc = acc.valid() ? g.add(acc, h) : h;
  }
  nn::Var z = g.clamp01_straight_through(acc);
  if (mask != nullptr) {
    mask->mode = MaskMode::predicted;
    mask->z.assign(g.value(z).values().begin(), g.value(z).values().end());
    mask->soft = std::move(soft_max);
  }
  return z;
}

GuidanceMask random_k_subset(int n, int k, std::mt19937_64& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  const int take = std::clamp(k, 0, n);
  for (int i = 0; i < take; ++i)
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(i), idx.size() - 1)(rng)]);
  return mask_from_indices(n, std::span<const int>(idx.data(), static_cast<std::size_t>(take)), MaskMode::random);
}

GuidanceMask mask_from_indices(int n, std::span<const int> indices, MaskMode mode) {
  GuidanceMask m;
  m.mode = mode;
  m.z.assign(static_cast<std::size_t>(n), 0.0);
  m.soft.assign(static_cast<std::size_t>(n), 0.0);
  for (int i : indices) {
    if (i < 0 || i >= n) throw std::out_of_range("mask index out of range");
    m.z[static_cast<std::size_t>(i)] = 1.0;
  }
  return m;
}

StraightThroughReport straight_through_grad_check(std::span<const double> logits, std::span<const double> readout,
                                                  std::span<const double> noise, const GumbelConfig& cfg,
                                                  double tolerance) {
  cfg.validate();
  const int n = static_cast<int>(logits.size());
  if (readout.size() != logits.size() || noise.size() != logits.size())
    throw std::invalid_argument("straight_through_grad_check: size mismatch");

  nn::Graph g;
  nn::Var l = g.leaf(Matrix::row_vector(logits));
  nn::Var w = g.constant(Matrix::row_vector(readout));
  nn::Var y = g.gumbel_softmax(l, noise, cfg.tau, true);
  nn::Var loss = g.sum(g.mul(y, w));
  g.backward(loss);

  StraightThroughReport rep;
  rep.tolerance = tolerance;
  const Matrix gl = g.grad(l);
  rep.st_grad.assign(gl.values().begin(), gl.values().end());

  // d softmax((l+g)/tau)_i / d l_j = y_i (delta_ij - y_j) / tau
  std::vector<double> x(logits.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (logits[i] + noise[i]) / cfg.tau;
  const auto ys = softmax(x);
  rep.analytic_grad.assign(logits.size(), 0.0);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double jac = ys[static_cast<std::size_t>(i)] * ((i == j ? 1.0 : 0.0) - ys[static_cast<std::size_t>(j)]) / cfg.tau;
      s += readout[static_cast<std::size_t>(i)] * jac;
    }
    rep.analytic_grad[static_cast<std::size_t>(j)] = s;
  }
  for (std::size_t i = 0; i < logits.size(); ++i)
    rep.max_abs_diff = std::max(rep.max_abs_diff, std::abs(rep.st_grad[i] - rep.analytic_grad[i]));
  rep.passed = rep.max_abs_diff <= tolerance;
  return rep;
}

double categorical_kl(std::span<const double> q_probs, std::span<const double> p_probs) {
  if (q_probs.size() != p_probs.size() || q_probs.empty())
    throw std::invalid_argument("categorical_kl: size mismatch");
  double sq = 0.0;
  double sp = 0.0;
  for (std::size_t i = 0; i < q_probs.size(); ++i) {
    if (q_probs[i] < 0.0 || p_probs[i] < 0.0) throw std::invalid_argument("categorical_kl: negative probability");
    sq += q_probs[i];
    sp += p_probs[i];
  }
  if (std::abs(sq - 1.0) > 1e-6 || std::abs(sp - 1.0) > 1e-6)
    throw std::invalid_argument("categorical_kl: inputs must lie on the simplex");
  constexpr double kFloor = 1e-8;
  double kl = 0.0;
  for (std::size_t i = 0; i < q_probs.size(); ++i) {
    if (q_probs[i] == 0.0) continue;
    kl += q_probs[i] * (std::log(q_probs[i]) - std::log(std::max(p_probs[i], kFloor)));
  }
  return std::max(kl, 0.0);
}

}  // namespace gvqg::sampling
