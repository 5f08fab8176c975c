#include "mdx/gradcheck.hpp"

#include <cmath>

namespace mdx::ad {

GradCheckResult gradcheck(const std::function<Tensor()>& fn,
                          const std::vector<Tensor>& inputs, double h) {
  for (const Tensor& t : inputs) t.node()->grad.clear();
  Tensor root = fn();
  backward(root);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) analytic.push_back(t.grad_or_zero());

  GradCheckResult res;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    const Tensor& t = inputs[ti];
    if (!t.requires_grad()) continue;
    auto& vals = t.node()->value;
    for (int64_t i = 0; i < t.size(); ++i) {
      double orig = vals[i];
      vals[i] = orig + h;
      double fp = fn().item();
      vals[i] = orig - h;
      double fm = fn().item();
      vals[i] = orig;
      double num = (fp - fm) / (2.0 * h);
      double ana = analytic[ti][i];
      double denom = std::max({std::abs(num), std::abs(ana), 1e-6});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(num - ana) / denom);
      ++res.checked;
    }
  }
  for (const Tensor& t : inputs) t.node()->grad.clear();
  return res;
}

}  // namespace mdx::ad
