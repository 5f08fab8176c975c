#pragma once

#include <unordered_map>

#include "mdx/tensor.hpp"

namespace mdx::ad {

/// Bias-corrected Adam over a fixed parameter set.
class Adam {
 public:
  explicit Adam(double lr = 0.001, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update using each parameter's accumulated gradient and
  // clears the gradients. Parameters without a gradient are untouched.
  void step(const std::vector<Tensor>& params);

  int64_t step_count() const { return step_; }
  double lr() const { return lr_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::unordered_map<const Node*, Moments>& moments() { return moments_; }
  void set_step_count(int64_t s) { step_ = s; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t step_ = 0;
  std::unordered_map<const Node*, Moments> moments_;
};

}  // namespace mdx::ad
