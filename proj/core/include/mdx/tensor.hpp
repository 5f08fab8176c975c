#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mdx/errors.hpp"

namespace mdx::ad {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad();
};

/// Value-semantic handle to a node in the reverse-mode graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);
  static Tensor from_data(const Shape& s, std::vector<double> v);
  static Tensor scalar(double v);
  static Tensor param(const Shape& s, std::vector<double> v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double> grad_or_zero() const;
  void zero_grad();
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  double item() const;
  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Elementwise, with numpy-style trailing broadcast in both directions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor slice_last(const Tensor& x, int start, int len);
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& s);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor gather0(const Tensor& x, const std::vector<int>& idx);
Tensor scatter0(const Tensor& x, const std::vector<int>& idx, int out_dim0);
Tensor tile0(const Tensor& x, int times);
Tensor take_diag(const Tensor& x);  // [*,n,n] -> [*,n]

// Batched matmul: a [B..,n,m] x b [B..,m,p] with identical batch prefix.
Tensor bmm(const Tensor& a, const Tensor& b);

// Depthwise k x k conv (zero "same" padding, stride 1) followed by 1x1
// pointwise mixing with bias. x: [B,F,S,Cin] or [F,S,Cin];
// dw: [k,k,Cin]; pw: [Cin,Cout]; bias: [Cout].
Tensor conv2d_separable(const Tensor& x, const Tensor& dw, const Tensor& pw,
                        const Tensor& bias);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
};

// x: [..., C]; statistics over all axes but the last.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState* state, bool train, double momentum = 0.1,
                  double eps = 1e-5);

// Per-element BCE in bits (base-2 logs), stable for |logit| up to ~1e4.
Tensor bce_with_logits(const Tensor& logit, const Tensor& target);

void backward(const Tensor& root);

}  // namespace mdx::ad
