#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gvqg/autograd.hpp"

namespace gvqg::nn {

using NamedParams = std::vector<std::pair<std::string, Parameter*>>;

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

class Adam {
 public:
  Adam(NamedParams params, AdamConfig cfg);

  // Applies one update from the accumulated gradients, then zeroes them.
  // Returns the pre-clip global gradient norm.
  double step();
  void zero_grad();
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  NamedParams params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

double grad_norm(const NamedParams& params);

}  // namespace gvqg::nn
