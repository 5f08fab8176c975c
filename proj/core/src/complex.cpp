#include "mdx/complex.hpp"

#include <cmath>

namespace mdx::ad {

namespace {

using cd = std::complex<double>;

// Gauss-Jordan inversion with partial pivoting over std::complex.
// Returns false when a pivot magnitude drops below tol.
bool invert_inplace(std::vector<cd>& a, int n, double tol) {
  std::vector<cd> inv(n * n, cd(0.0, 0.0));
  for (int i = 0; i < n; ++i) inv[i * n + i] = 1.0;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::abs(a[col * n + col]);
    for (int r = col + 1; r < n; ++r) {
      double m = std::abs(a[r * n + col]);
      if (m > best) {
        best = m;
        piv = r;
      }
    }
    if (best < tol) return false;
    if (piv != col) {
      for (int j = 0; j < n; ++j) {
        std::swap(a[piv * n + j], a[col * n + j]);
        std::swap(inv[piv * n + j], inv[col * n + j]);
      }
    }
    cd d = a[col * n + col];
    for (int j = 0; j < n; ++j) {
      a[col * n + j] /= d;
      inv[col * n + j] /= d;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      cd m = a[r * n + col];
      if (m == cd(0.0, 0.0)) continue;
      for (int j = 0; j < n; ++j) {
        a[r * n + j] -= m * a[col * n + j];
        inv[r * n + j] -= m * inv[col * n + j];
      }
    }
  }
  a = std::move(inv);
  return true;
}

}  // namespace

ComplexPair make_complex(Tensor re, Tensor im) {
  if (re.shape() != im.shape()) throw ShapeError("make_complex: re/im shape mismatch");
  return {std::move(re), std::move(im)};
}

ComplexPair complex_zeros(const Shape& s) {
  return {Tensor::zeros(s), Tensor::zeros(s)};
}

ComplexPair complex_from(const Shape& s, const std::vector<std::complex<double>>& v) {
  std::vector<double> re(v.size()), im(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    re[i] = v[i].real();
    im[i] = v[i].imag();
  }
  return {Tensor::from_data(s, std::move(re)), Tensor::from_data(s, std::move(im))};
}

ComplexPair cadd(const ComplexPair& a, const ComplexPair& b) {
  return {add(a.re, b.re), add(a.im, b.im)};
}

ComplexPair csub(const ComplexPair& a, const ComplexPair& b) {
  return {sub(a.re, b.re), sub(a.im, b.im)};
}

ComplexPair cmul(const ComplexPair& a, const ComplexPair& b) {
  return {sub(mul(a.re, b.re), mul(a.im, b.im)),
          add(mul(a.re, b.im), mul(a.im, b.re))};
}

ComplexPair conj(const ComplexPair& a) { return {a.re, scale(a.im, -1.0)}; }

ComplexPair cscale(const ComplexPair& a, double c) {
  return {scale(a.re, c), scale(a.im, c)};
}

ComplexPair cmul_real(const ComplexPair& a, const Tensor& r) {
  return {mul(a.re, r), mul(a.im, r)};
}

Tensor cabs2(const ComplexPair& a) {
  return add(mul(a.re, a.re), mul(a.im, a.im));
}

ComplexPair cgather0(const ComplexPair& a, const std::vector<int>& idx) {
  return {gather0(a.re, idx), gather0(a.im, idx)};
}

ComplexPair cscatter0(const ComplexPair& a, const std::vector<int>& idx, int out_dim0) {
  return {scatter0(a.re, idx, out_dim0), scatter0(a.im, idx, out_dim0)};
}

ComplexPair creshape(const ComplexPair& a, const Shape& s) {
  return {reshape(a.re, s), reshape(a.im, s)};
}

ComplexPair cpermute(const ComplexPair& a, const std::vector<int>& axes) {
  return {permute(a.re, axes), permute(a.im, axes)};
}

ComplexPair cconcat_last(const std::vector<ComplexPair>& xs) {
  std::vector<Tensor> re, im;
  for (const auto& x : xs) {
    re.push_back(x.re);
    im.push_back(x.im);
  }
  return {concat_channels(re), concat_channels(im)};
}

ComplexPair cslice_last(const ComplexPair& a, int start, int len) {
  return {slice_last(a.re, start, len), slice_last(a.im, start, len)};
}

ComplexPair cbmm(const ComplexPair& a, const ComplexPair& b) {
  return {sub(bmm(a.re, b.re), bmm(a.im, b.im)),
          add(bmm(a.re, b.im), bmm(a.im, b.re))};
}

ComplexPair cherm(const ComplexPair& a) {
  int rank = static_cast<int>(a.shape().size());
  if (rank < 2) throw ShapeError("cherm: rank must be >= 2");
  std::vector<int> axes(rank);
  for (int i = 0; i < rank; ++i) axes[i] = i;
  std::swap(axes[rank - 1], axes[rank - 2]);
  return {permute(a.re, axes), scale(permute(a.im, axes), -1.0)};
}

ComplexPair hermitian_solve(const ComplexPair& A, const ComplexPair& B) {
  const Shape& sa = A.shape();
  const Shape& sb = B.shape();
  if (sa.size() < 2 || sa.back() != sa[sa.size() - 2])
    throw ShapeError("hermitian_solve: A must be [*,n,n]");
  if (sb.size() != sa.size() || sb[sb.size() - 2] != sa.back())
    throw ShapeError("hermitian_solve: B inner dim mismatch");
  for (size_t i = 0; i + 2 < sa.size(); ++i)
    if (sa[i] != sb[i]) throw ShapeError("hermitian_solve: batch dims differ");
  const int n = sa.back();
  const int m = sb.back();
  int64_t batch = numel(sa) / (static_cast<int64_t>(n) * n);

  auto ainv = std::make_shared<std::vector<cd>>(batch * n * n);
  std::vector<cd> xv(batch * n * m);
  for (int64_t q = 0; q < batch; ++q) {
    std::vector<cd> a(n * n);
    for (int i = 0; i < n * n; ++i)
      a[i] = cd(A.re.value()[q * n * n + i], A.im.value()[q * n * n + i]);
    if (!invert_inplace(a, n, 1e-12))
      throw SingularError("hermitian_solve: matrix numerically singular");
    std::copy(a.begin(), a.end(), ainv->begin() + q * n * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        cd acc(0.0, 0.0);
        for (int k = 0; k < n; ++k)
          acc += a[i * n + k] * cd(B.re.value()[(q * n + k) * m + j],
                                   B.im.value()[(q * n + k) * m + j]);
        xv[(q * n + i) * m + j] = acc;
      }
  }

  Shape os = sb;
  std::vector<double> vre(batch * n * m), vim(batch * n * m);
  for (int64_t i = 0; i < batch * n * m; ++i) {
    vre[i] = xv[i].real();
    vim[i] = xv[i].imag();
  }

  auto out_re_node = std::make_shared<Node>();
  auto out_im_node = std::make_shared<Node>();
  out_re_node->shape = os;
  out_re_node->value = std::move(vre);
  out_im_node->shape = os;
  out_im_node->value = std::move(vim);

  bool rg = A.re.requires_grad() || A.im.requires_grad() ||
            B.re.requires_grad() || B.im.requires_grad();
  if (rg) {
    auto x_saved = std::make_shared<std::vector<cd>>(std::move(xv));
    auto arn = A.re.node();
    auto ain = A.im.node();
    auto brn = B.re.node();
    auto bin = B.im.node();
    // Both outputs share the backward rule; each consumes only its own
    // cotangent slice (re or im part of the complex cotangent).
    auto make_bprop = [=](bool imag_out) {
      return [=](Node& self) {
        bool need_a = arn->requires_grad || ain->requires_grad;
        bool need_b = brn->requires_grad || bin->requires_grad;
        if (arn->requires_grad) arn->ensure_grad();
        if (ain->requires_grad) ain->ensure_grad();
        if (brn->requires_grad) brn->ensure_grad();
        if (bin->requires_grad) bin->ensure_grad();
        for (int64_t q = 0; q < batch; ++q) {
          const cd* inv = ainv->data() + q * n * n;
          const cd* X = x_saved->data() + q * n * m;
          // C_B = A^{-H} G, with G = g_re + i g_im packed one part at a time.
          std::vector<cd> cb(n * m, cd(0.0, 0.0));
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
              cd acc(0.0, 0.0);
              for (int k = 0; k < n; ++k) {
                double g = self.grad[(q * n + k) * m + j];
                cd gk = imag_out ? cd(0.0, g) : cd(g, 0.0);
                acc += std::conj(inv[k * n + i]) * gk;
              }
              cb[i * m + j] = acc;
            }
          if (need_b) {
            for (int i = 0; i < n * m; ++i) {
              if (brn->requires_grad) brn->grad[q * n * m + i] += cb[i].real();
              if (bin->requires_grad) bin->grad[q * n * m + i] += cb[i].imag();
            }
          }
          if (need_a) {
            // C_A = -C_B X^H
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < n; ++j) {
                cd acc(0.0, 0.0);
                for (int k = 0; k < m; ++k)
                  acc += cb[i * m + k] * std::conj(X[j * m + k]);
                acc = -acc;
                if (arn->requires_grad) arn->grad[(q * n + i) * n + j] += acc.real();
                if (ain->requires_grad) ain->grad[(q * n + i) * n + j] += acc.imag();
              }
          }
        }
      };
    };
    std::vector<std::shared_ptr<Node>> parents = {arn, ain, brn, bin};
    out_re_node->requires_grad = true;
    out_re_node->parents = parents;
    out_re_node->backprop = make_bprop(false);
    out_im_node->requires_grad = true;
    out_im_node->parents = parents;
    out_im_node->backprop = make_bprop(true);
  }
  return {Tensor(out_re_node), Tensor(out_im_node)};
}

}  // namespace mdx::ad
