#include "mdx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mdx::ad {

namespace {

constexpr double kLn2 = 0.6931471805599453;

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + ")";
}

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// Row-major strides; 0 on axes of extent 1 so they broadcast.
std::vector<int64_t> bcast_strides(const Shape& s, int out_rank) {
  std::vector<int64_t> strides(out_rank, 0);
  int64_t acc = 1;
  int off = out_rank - static_cast<int>(s.size());
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    strides[off + i] = (s[i] == 1) ? 0 : acc;
    acc *= s[i];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  int rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (int i = 0; i < rank; ++i) {
    int da = i < rank - static_cast<int>(a.size()) ? 1 : a[i - (rank - a.size())];
    int db = i < rank - static_cast<int>(b.size()) ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("broadcast mismatch " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

template <class F>
void for_each_bcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  int rank = static_cast<int>(out.size());
  auto sa = bcast_strides(a, rank);
  auto sb = bcast_strides(b, rank);
  int64_t n = numel(out);
  std::vector<int> coord(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t io = 0; io < n; ++io) {
    f(io, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ++coord[d];
      ia += sa[d];
      ib += sb[d];
      if (coord[d] < out[d]) break;
      ia -= static_cast<int64_t>(coord[d]) * sa[d];
      ib -= static_cast<int64_t>(coord[d]) * sb[d];
      coord[d] = 0;
    }
  }
}

using BinFwd = double (*)(double, double);
using BinBwd = double (*)(double, double, double);  // (a, b, y) -> d/d{a|b}

Tensor binary_op(const Tensor& a, const Tensor& b, BinFwd fwd, BinBwd dfa,
                 BinBwd dfb) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  std::vector<double> v(numel(os));
  const auto& av = a.value();
  const auto& bv = b.value();
  for_each_bcast(os, a.shape(), b.shape(),
                 [&](int64_t io, int64_t ia, int64_t ib) { v[io] = fwd(av[ia], bv[ib]); });
  auto out = make_node(os, std::move(v));
  if (any_grad({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a.node(), b.node()};
    auto an = a.node();
    auto bn = b.node();
    out->backprop = [an, bn, dfa, dfb](Node& self) {
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for_each_bcast(self.shape, an->shape, bn->shape,
                     [&](int64_t io, int64_t ia, int64_t ib) {
                       double g = self.grad[io];
                       double y = self.value[io];
                       if (an->requires_grad)
                         an->grad[ia] += g * dfa(an->value[ia], bn->value[ib], y);
                       if (bn->requires_grad)
                         bn->grad[ib] += g * dfb(an->value[ia], bn->value[ib], y);
                     });
    };
  }
  return Tensor(out);
}

}  // namespace

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::zeros(const Shape& s) { return full(s, 0.0); }

Tensor Tensor::full(const Shape& s, double v) {
  return Tensor(make_node(s, std::vector<double>(numel(s), v)));
}

Tensor Tensor::from_data(const Shape& s, std::vector<double> v) {
  if (static_cast<int64_t>(v.size()) != numel(s))
    throw ShapeError("from_data: value count does not match shape");
  return Tensor(make_node(s, std::move(v)));
}

Tensor Tensor::scalar(double v) { return from_data({}, {v}); }

Tensor Tensor::param(const Shape& s, std::vector<double> v) {
  Tensor t = from_data(s, std::move(v));
  t.set_requires_grad(true);
  return t;
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) throw StateError("tensor has no gradient");
  return node_->grad;
}

std::vector<double> Tensor::grad_or_zero() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor");
  return node_->value[0];
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor scale(const Tensor& x, double c) { return mul(x, Tensor::scalar(c)); }

Tensor add_const(const Tensor& x, double c) { return add(x, Tensor::scalar(c)); }

Tensor relu(const Tensor& x) {
  std::vector<double> v(x.size());
  for (int64_t i = 0; i < x.size(); ++i) v[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  auto out = make_node(x.shape(), std::move(v));
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    out->backprop = [xn](Node& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  std::vector<double> v(x.size());
  for (int64_t i = 0; i < x.size(); ++i) v[i] = std::clamp(x.value()[i], lo, hi);
  auto out = make_node(x.shape(), std::move(v));
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    out->backprop = [xn, lo, hi](Node& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (xn->value[i] > lo && xn->value[i] < hi) xn->grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  Shape base = xs[0].shape();
  if (base.empty()) throw ShapeError("concat_channels: rank-0 input");
  int total_c = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != base.size()) throw ShapeError("concat_channels: rank mismatch");
    for (size_t i = 0; i + 1 < s.size(); ++i)
      if (s[i] != base[i]) throw ShapeError("concat_channels: leading dims differ");
    total_c += s.back();
  }
  Shape os = base;
  os.back() = total_c;
  int64_t rows = numel(os) / total_c;
  std::vector<double> v(numel(os));
  int coff = 0;
  for (const auto& x : xs) {
    int c = x.shape().back();
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < c; ++j) v[r * total_c + coff + j] = x.value()[r * c + j];
    coff += c;
  }
  auto out = make_node(os, std::move(v));
  bool rg = false;
  for (const auto& x : xs) rg = rg || x.requires_grad();
  if (rg) {
    out->requires_grad = true;
    std::vector<std::shared_ptr<Node>> parents;
    for (const auto& x : xs) parents.push_back(x.node());
    out->parents = parents;
    out->backprop = [parents, rows, total_c](Node& self) {
      int off = 0;
      for (const auto& p : parents) {
        int c = p->shape.back();
        if (p->requires_grad) {
          p->ensure_grad();
          for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < c; ++j)
              p->grad[r * c + j] += self.grad[r * total_c + off + j];
        }
        off += c;
      }
    };
  }
  return Tensor(out);
}

Tensor slice_last(const Tensor& x, int start, int len) {
  const Shape& s = x.shape();
  if (s.empty() || start < 0 || start + len > s.back())
    throw ShapeError("slice_last: range out of bounds");
  Shape os = s;
  os.back() = len;
  int c = s.back();
  int64_t rows = x.size() / c;
  std::vector<double> v(rows * len);
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < len; ++j) v[r * len + j] = x.value()[r * c + start + j];
  auto out = make_node(os, std::move(v));
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    out->backprop = [xn, start, len, c, rows](Node& self) {
      xn->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < len; ++j)
          xn->grad[r * c + start + j] += self.grad[r * len + j];
    };
  }
  return Tensor(out);
}

Tensor reduce_sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  auto out = make_node({}, {acc});
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    out->backprop = [xn](Node& self) {
      xn->ensure_grad();
      for (auto& g : xn->grad) g += self.grad[0];
    };
  }
  return Tensor(out);
}

Tensor reduce_mean(const Tensor& x) {
  return scale(reduce_sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, const Shape& s) {
  if (numel(s) != x.size()) throw ShapeError("reshape: element count mismatch");
  auto out = make_node(s, x.value());
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    out->backprop = [xn](Node& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const Shape& s = x.shape();
  int rank = static_cast<int>(s.size());
  if (static_cast<int>(axes.size()) != rank) throw ShapeError("permute: bad axes");
  Shape os(rank);
  for (int i = 0; i < rank; ++i) os[i] = s[axes[i]];
  std::vector<int64_t> in_strides(rank, 1);
  for (int i = rank - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * s[i + 1];
  std::vector<int64_t> map_strides(rank);
  for (int i = 0; i < rank; ++i) map_strides[i] = in_strides[axes[i]];
  int64_t n = x.size();
  std::vector<int64_t> src(n);
  std::vector<int> coord(rank, 0);
  int64_t ii = 0;
  for (int64_t io = 0; io < n; ++io) {
    src[io] = ii;
    for (int d = rank - 1; d >= 0; --d) {
      ++coord[d];
      ii += map_strides[d];
      if (coord[d] < os[d]) break;
      ii -= static_cast<int64_t>(coord[d]) * map_strides[d];
      coord[d] = 0;
    }
  }
  std::vector<double> v(n);
  for (int64_t i = 0; i < n; ++i) v[i] = x.value()[src[i]];
  auto out = make_node(os, std::move(v));
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    auto src_copy = std::move(src);
    out->backprop = [xn, src_copy](Node& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        xn->grad[src_copy[i]] += self.grad[i];
    };
  }
  return Tensor(out);
}

Tensor gather0(const Tensor& x, const std::vector<int>& idx) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("gather0: rank-0 input");
  int64_t inner = x.size() / s[0];
  Shape os = s;
  os[0] = static_cast<int>(idx.size());
  std::vector<double> v(idx.size() * inner);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= s[0]) throw ShapeError("gather0: index out of range");
    std::copy_n(x.value().begin() + idx[i] * inner, inner, v.begin() + i * inner);
  }
  auto out = make_node(os, std::move(v));
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    auto idx_copy = idx;
    out->backprop = [xn, idx_copy, inner](Node& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < idx_copy.size(); ++i)
        for (int64_t j = 0; j < inner; ++j)
          xn->grad[idx_copy[i] * inner + j] += self.grad[i * inner + j];
    };
  }
  return Tensor(out);
}

Tensor scatter0(const Tensor& x, const std::vector<int>& idx, int out_dim0) {
  const Shape& s = x.shape();
  if (s.empty() || s[0] != static_cast<int>(idx.size()))
    throw ShapeError("scatter0: index count mismatch");
  int64_t inner = x.size() / s[0];
  Shape os = s;
  os[0] = out_dim0;
  std::vector<double> v(out_dim0 * inner, 0.0);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= out_dim0) throw ShapeError("scatter0: index out of range");
    for (int64_t j = 0; j < inner; ++j) v[idx[i] * inner + j] += x.value()[i * inner + j];
  }
  auto out = make_node(os, std::move(v));
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    auto idx_copy = idx;
    out->backprop = [xn, idx_copy, inner](Node& self) {
      xn->ensure_grad();
      for (size_t i = 0; i < idx_copy.size(); ++i)
        for (int64_t j = 0; j < inner; ++j)
          xn->grad[i * inner + j] += self.grad[idx_copy[i] * inner + j];
    };
  }
  return Tensor(out);
}

Tensor tile0(const Tensor& x, int times) {
  if (times < 1) throw ShapeError("tile0: times must be >= 1");
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("tile0: rank-0 input");
  Shape os = s;
  os[0] = s[0] * times;
  int64_t blk = x.size();
  std::vector<double> v(blk * times);
  for (int t = 0; t < times; ++t)
    std::copy(x.value().begin(), x.value().end(), v.begin() + t * blk);
  auto out = make_node(os, std::move(v));
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    out->backprop = [xn, times, blk](Node& self) {
      xn->ensure_grad();
      for (int t = 0; t < times; ++t)
        for (int64_t i = 0; i < blk; ++i) xn->grad[i] += self.grad[t * blk + i];
    };
  }
  return Tensor(out);
}

Tensor take_diag(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2])
    throw ShapeError("take_diag: trailing dims must be square");
  int n = s.back();
  int64_t batch = x.size() / (static_cast<int64_t>(n) * n);
  Shape os(s.begin(), s.end() - 1);
  std::vector<double> v(batch * n);
  for (int64_t b = 0; b < batch; ++b)
    for (int i = 0; i < n; ++i) v[b * n + i] = x.value()[(b * n + i) * n + i];
  auto out = make_node(os, std::move(v));
  if (x.requires_grad()) {
    out->requires_grad = true;
    out->parents = {x.node()};
    auto xn = x.node();
    out->backprop = [xn, batch, n](Node& self) {
      xn->ensure_grad();
      for (int64_t b = 0; b < batch; ++b)
        for (int i = 0; i < n; ++i)
          xn->grad[(b * n + i) * n + i] += self.grad[b * n + i];
    };
  }
  return Tensor(out);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError("bmm: rank must be >= 2");
  if (sa.size() != sb.size()) throw ShapeError("bmm: rank mismatch");
  for (size_t i = 0; i + 2 < sa.size(); ++i)
    if (sa[i] != sb[i]) throw ShapeError("bmm: batch dims differ");
  int n = sa[sa.size() - 2], m = sa.back();
  int m2 = sb[sb.size() - 2], p = sb.back();
  if (m != m2) throw ShapeError("bmm: inner dims differ");
  int64_t batch = 1;
  for (size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  Shape os(sa.begin(), sa.end() - 2);
  os.push_back(n);
  os.push_back(p);
  std::vector<double> v(batch * n * p, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (int64_t q = 0; q < batch; ++q) {
    const double* A = av.data() + q * n * m;
    const double* B = bv.data() + q * m * p;
    double* C = v.data() + q * n * p;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < m; ++k) {
        double aik = A[i * m + k];
        if (aik == 0.0) continue;
        for (int j = 0; j < p; ++j) C[i * p + j] += aik * B[k * p + j];
      }
  }
  auto out = make_node(os, std::move(v));
  if (any_grad({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a.node(), b.node()};
    auto an = a.node();
    auto bn = b.node();
    out->backprop = [an, bn, batch, n, m, p](Node& self) {
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (int64_t q = 0; q < batch; ++q) {
        const double* A = an->value.data() + q * n * m;
        const double* B = bn->value.data() + q * m * p;
        const double* G = self.grad.data() + q * n * p;
        if (an->requires_grad) {
          double* GA = an->grad.data() + q * n * m;
          for (int i = 0; i < n; ++i)
            for (int k = 0; k < m; ++k) {
              double acc = 0.0;
              for (int j = 0; j < p; ++j) acc += G[i * p + j] * B[k * p + j];
              GA[i * m + k] += acc;
            }
        }
        if (bn->requires_grad) {
          double* GB = bn->grad.data() + q * m * p;
          for (int k = 0; k < m; ++k)
            for (int j = 0; j < p; ++j) {
              double acc = 0.0;
              for (int i = 0; i < n; ++i) acc += A[i * m + k] * G[i * p + j];
              GB[k * p + j] += acc;
            }
        }
      }
    };
  }
  return Tensor(out);
}

Tensor conv2d_separable(const Tensor& x_in, const Tensor& dw, const Tensor& pw,
                        const Tensor& bias) {
  Tensor x = x_in;
  bool squeeze = false;
  if (x.shape().size() == 3) {
    Shape s4 = {1, x.shape()[0], x.shape()[1], x.shape()[2]};
    x = reshape(x, s4);
    squeeze = true;
  }
  const Shape& xs = x.shape();
  const Shape& ks = dw.shape();
  const Shape& ps = pw.shape();
  if (xs.size() != 4) throw ShapeError("conv2d_separable: input must be rank 3 or 4");
  if (ks.size() != 3 || ks[0] != ks[1]) throw ShapeError("conv2d_separable: bad depthwise kernel");
  if (ks[0] % 2 == 0) throw ConfigError("conv2d_separable: kernel size must be odd");
  const int B = xs[0], F = xs[1], S = xs[2], Ci = xs[3];
  const int k = ks[0];
  if (ks[2] != Ci) throw ShapeError("conv2d_separable: depthwise channels mismatch");
  if (ps.size() != 2 || ps[0] != Ci) throw ShapeError("conv2d_separable: pointwise shape mismatch");
  const int Co = ps[1];
  if (bias.shape() != Shape{Co}) throw ShapeError("conv2d_separable: bias shape mismatch");
  const int o = k / 2;

  // Depthwise stage (kept for backward).
  std::vector<double> mid(static_cast<int64_t>(B) * F * S * Ci, 0.0);
  const auto& xv = x.value();
  const auto& kv = dw.value();
  auto xat = [&](int b, int f, int s, int c) -> double {
    return xv[((static_cast<int64_t>(b) * F + f) * S + s) * Ci + c];
  };
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int s = 0; s < S; ++s)
        for (int c = 0; c < Ci; ++c) {
          double acc = 0.0;
          for (int u = 0; u < k; ++u) {
            int fi = f + u - o;
            if (fi < 0 || fi >= F) continue;
            for (int vv = 0; vv < k; ++vv) {
              int si = s + vv - o;
              if (si < 0 || si >= S) continue;
              acc += xat(b, fi, si, c) * kv[(u * k + vv) * Ci + c];
            }
          }
          mid[((static_cast<int64_t>(b) * F + f) * S + s) * Ci + c] = acc;
        }

  std::vector<double> v(static_cast<int64_t>(B) * F * S * Co);
  const auto& pv = pw.value();
  const auto& bvv = bias.value();
  int64_t pix = static_cast<int64_t>(B) * F * S;
  for (int64_t q = 0; q < pix; ++q)
    for (int co = 0; co < Co; ++co) {
      double acc = bvv[co];
      for (int c = 0; c < Ci; ++c) acc += mid[q * Ci + c] * pv[c * Co + co];
      v[q * Co + co] = acc;
    }

  Shape os = {B, F, S, Co};
  auto out = make_node(os, std::move(v));
  if (any_grad({&x, &dw, &pw, &bias})) {
    out->requires_grad = true;
    out->parents = {x.node(), dw.node(), pw.node(), bias.node()};
    auto xn = x.node();
    auto kn = dw.node();
    auto pn = pw.node();
    auto bn = bias.node();
    auto mid_saved = std::make_shared<std::vector<double>>(std::move(mid));
    out->backprop = [xn, kn, pn, bn, mid_saved, B, F, S, Ci, Co, k, o, pix](Node& self) {
      const auto& mv = *mid_saved;
      // Pointwise backward.
      std::vector<double> gmid(static_cast<int64_t>(B) * F * S * Ci, 0.0);
      if (pn->requires_grad) pn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (int64_t q = 0; q < pix; ++q)
        for (int co = 0; co < Co; ++co) {
          double g = self.grad[q * Co + co];
          if (g == 0.0) continue;
          if (bn->requires_grad) bn->grad[co] += g;
          for (int c = 0; c < Ci; ++c) {
            gmid[q * Ci + c] += g * pn->value[c * Co + co];
            if (pn->requires_grad) pn->grad[c * Co + co] += g * mv[q * Ci + c];
          }
        }
      // Depthwise backward.
      bool need_x = xn->requires_grad, need_k = kn->requires_grad;
      if (need_x) xn->ensure_grad();
      if (need_k) kn->ensure_grad();
      if (!need_x && !need_k) return;
      auto xi = [&](int b, int f, int s, int c) -> int64_t {
        return ((static_cast<int64_t>(b) * F + f) * S + s) * Ci + c;
      };
      for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f)
          for (int s = 0; s < S; ++s)
            for (int c = 0; c < Ci; ++c) {
              double g = gmid[xi(b, f, s, c)];
              if (g == 0.0) continue;
              for (int u = 0; u < k; ++u) {
                int fi = f + u - o;
                if (fi < 0 || fi >= F) continue;
                for (int vv = 0; vv < k; ++vv) {
                  int si = s + vv - o;
                  if (si < 0 || si >= S) continue;
                  if (need_x)
                    xn->grad[xi(b, fi, si, c)] += g * kn->value[(u * k + vv) * Ci + c];
                  if (need_k)
                    kn->grad[(u * k + vv) * Ci + c] += g * xn->value[xi(b, fi, si, c)];
                }
              }
            }
    };
  }
  Tensor res(out);
  if (squeeze) res = reshape(res, {F, S, Co});
  return res;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState* state, bool train, double momentum, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("batch_norm: rank-0 input");
  int C = s.back();
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("batch_norm: affine parameter shape mismatch");
  int64_t rows = x.size() / C;
  const auto& xv = x.value();

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (train) {
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) mean[c] += xv[r * C + c];
    for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(rows);
    for (int64_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        double d = xv[r * C + c] - mean[c];
        var[c] += d * d;
      }
    for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(rows);
    if (state) {
      if (!state->initialized) {
        state->running_mean = mean;
        state->running_var = var;
        state->initialized = true;
      } else {
        for (int c = 0; c < C; ++c) {
          state->running_mean[c] = (1 - momentum) * state->running_mean[c] + momentum * mean[c];
          state->running_var[c] = (1 - momentum) * state->running_var[c] + momentum * var[c];
        }
      }
    }
  } else {
    if (!state || !state->initialized)
      throw StateError("batch_norm: inference with uninitialized running stats");
    mean = state->running_mean;
    var = state->running_var;
  }

  std::vector<double> invstd(C);
  for (int c = 0; c < C; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + eps);
  std::vector<double> xhat(x.size());
  std::vector<double> v(x.size());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < C; ++c) {
      double xh = (xv[r * C + c] - mean[c]) * invstd[c];
      xhat[r * C + c] = xh;
      v[r * C + c] = gv[c] * xh + bv[c];
    }
  auto out = make_node(s, std::move(v));
  if (any_grad({&x, &gamma, &beta})) {
    out->requires_grad = true;
    out->parents = {x.node(), gamma.node(), beta.node()};
    auto xn = x.node();
    auto gn = gamma.node();
    auto btn = beta.node();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(invstd));
    out->backprop = [xn, gn, btn, xh, is, rows, C, train](Node& self) {
      if (gn->requires_grad) gn->ensure_grad();
      if (btn->requires_grad) btn->ensure_grad();
      for (int c = 0; c < C; ++c) {
        if (gn->requires_grad || btn->requires_grad) {
          double gg = 0.0, gb = 0.0;
          for (int64_t r = 0; r < rows; ++r) {
            gg += self.grad[r * C + c] * (*xh)[r * C + c];
            gb += self.grad[r * C + c];
          }
          if (gn->requires_grad) gn->grad[c] += gg;
          if (btn->requires_grad) btn->grad[c] += gb;
        }
      }
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      if (!train) {
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < C; ++c)
            xn->grad[r * C + c] += self.grad[r * C + c] * gn->value[c] * (*is)[c];
        return;
      }
      double n = static_cast<double>(rows);
      for (int c = 0; c < C; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t r = 0; r < rows; ++r) {
          sum_g += self.grad[r * C + c];
          sum_gx += self.grad[r * C + c] * (*xh)[r * C + c];
        }
        double coef = gn->value[c] * (*is)[c];
        for (int64_t r = 0; r < rows; ++r) {
          double g = self.grad[r * C + c];
          xn->grad[r * C + c] +=
              coef * (g - sum_g / n - (*xh)[r * C + c] * sum_gx / n);
        }
      }
    };
  }
  return Tensor(out);
}

Tensor bce_with_logits(const Tensor& logit, const Tensor& target) {
  if (logit.shape() != target.shape())
    throw ShapeError("bce_with_logits: logit/target shape mismatch");
  std::vector<double> v(logit.size());
  const auto& lv = logit.value();
  const auto& tv = target.value();
  for (int64_t i = 0; i < logit.size(); ++i) {
    double l = lv[i], t = tv[i];
    double nats = std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
    v[i] = nats / kLn2;
  }
  auto out = make_node(logit.shape(), std::move(v));
  if (logit.requires_grad()) {
    out->requires_grad = true;
    out->parents = {logit.node(), target.node()};
    auto ln = logit.node();
    auto tn = target.node();
    out->backprop = [ln, tn](Node& self) {
      ln->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        double l = ln->value[i];
        double sig = l >= 0 ? 1.0 / (1.0 + std::exp(-l))
                            : std::exp(l) / (1.0 + std::exp(l));
        ln->grad[i] += self.grad[i] * (sig - tn->value[i]) / kLn2;
      }
    };
  }
  return Tensor(out);
}

void backward(const Tensor& root) {
  if (root.size() != 1) throw ShapeError("backward: root must be scalar");
  // Reverse topological order via iterative DFS; each node visited once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Node* p = node->parents[child++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

}  // namespace mdx::ad
