#pragma once
// Gumbel-Softmax machinery for discrete object selection.

#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gvqg/autograd.hpp"

namespace gvqg::sampling {

struct GumbelConfig {
  double tau = 1.0;
  bool hard = true;
  double anneal = 1.0;  // multiplicative per-epoch factor on tau
  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("Gumbel temperature must be > 0");
  }
  double tau_at_epoch(int epoch) const;
};

enum class MaskMode { predicted, gold, random };
std::string_view to_string(MaskMode m);

struct GuidanceMask {
  std::vector<double> z;     // binary, length k_o
  std::vector<double> soft;  // element-wise max of the soft draws (zeros for gold/random)
  MaskMode mode = MaskMode::predicted;
  int ones() const;
  std::vector<int> indices() const;
};

// -ln(-ln u), u ~ U(0,1)
std::vector<double> gumbel_noise(std::size_t n, std::mt19937_64& rng);

// Plain-vector sample; with noise disabled (zero noise) it is the tempered softmax.
std::vector<double> gumbel_softmax(std::span<const double> logits, const GumbelConfig& cfg, std::mt19937_64& rng);
std::vector<double> gumbel_softmax_with_noise(std::span<const double> logits, std::span<const double> noise,
                                              const GumbelConfig& cfg);

// k independent draws over the same scores, merged by OR.
GuidanceMask sample_k_hot(std::span<const double> scores, int k, const GumbelConfig& cfg, std::mt19937_64& rng);

// Differentiable k-hot mask inside a Graph. `logits` is 1 x n. The returned
// variable holds the OR of k straight-through hard draws; its gradient is the
// sum of the soft-draw gradients. Fills `mask` with the sampled values.
nn::Var sample_k_hot(nn::Graph& g, nn::Var logits, int k, const GumbelConfig& cfg, std::mt19937_64& rng,
                     GuidanceMask* mask = nullptr);

// Uniform random k-subset of n slots as a mask.
GuidanceMask random_k_subset(int n, int k, std::mt19937_64& rng);
GuidanceMask mask_from_indices(int n, std::span<const int> indices, MaskMode mode);

struct StraightThroughReport {
  std::vector<double> st_grad;
  std::vector<double> analytic_grad;
  double max_abs_diff = 0.0;
  double tolerance = 1e-6;
  bool passed = false;
};

// Gradient of a linear readout w . hard_sample w.r.t. logits through the
// straight-through path vs. the analytic soft Jacobian with the same noise.
StraightThroughReport straight_through_grad_check(std::span<const double> logits, std::span<const double> readout,
                                                  std::span<const double> noise, const GumbelConfig& cfg,
                                                  double tolerance = 1e-6);

// sum q (ln q - ln p), p floored at 1e-8. Throws on negative entries or
// inputs that are not on the simplex within 1e-6.
double categorical_kl(std::span<const double> q_probs, std::span<const double> p_probs);

std::vector<double> softmax(std::span<const double> logits);
double entropy(std::span<const double> probs);

}  // namespace gvqg::sampling
