#include "mdx/adam.hpp"

#include <cmath>

namespace mdx::ad {

void Adam::step(const std::vector<Tensor>& params) {
  ++step_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    auto& mom = moments_[p.node().get()];
    if (mom.m.empty()) {
      mom.m.assign(p.size(), 0.0);
      mom.v.assign(p.size(), 0.0);
    }
    if (static_cast<int64_t>(mom.m.size()) != p.size())
      throw ShapeError("adam: moment shape does not match parameter");
    auto& val = p.node()->value;
    const auto& g = p.node()->grad;
    for (int64_t i = 0; i < p.size(); ++i) {
      mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g[i];
      mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = mom.m[i] / bc1;
      double vhat = mom.v[i] / bc2;
      val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
  for (const Tensor& p : params) p.node()->grad.clear();
}

}  // namespace mdx::ad
