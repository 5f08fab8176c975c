#pragma once

#include <functional>
#include <string>

#include "mdx/tensor.hpp"

namespace mdx::ad {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
};

// Central finite differences against reverse-mode gradients.
// `fn` must rebuild the graph from the current values of `inputs` and
// return a scalar. Only inputs with requires_grad set are perturbed.
GradCheckResult gradcheck(const std::function<Tensor()>& fn,
                          const std::vector<Tensor>& inputs, double h = 1e-5);

}  // namespace mdx::ad
