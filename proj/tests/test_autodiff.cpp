#include <cmath>
#include <complex>
#include <random>

#include "doctest.h"
#include "mdx/adam.hpp"
#include "mdx/complex.hpp"
#include "mdx/gradcheck.hpp"
#include "mdx/tensor.hpp"

using namespace mdx;
using namespace mdx::ad;
using cd = std::complex<double>;

namespace {

std::vector<double> randu(std::mt19937_64& rng, int64_t n, double lo = -1.0,
                          double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Independent oracle: direct nested-loop depthwise + pointwise convolution.
std::vector<double> conv_oracle(const std::vector<double>& x, int F, int S, int Ci,
                                const std::vector<double>& dw, int k,
                                const std::vector<double>& pw, int Co,
                                const std::vector<double>& bias) {
  int o = k / 2;
  std::vector<double> mid(F * S * Ci, 0.0);
  for (int f = 0; f < F; ++f)
    for (int s = 0; s < S; ++s)
      for (int c = 0; c < Ci; ++c)
        for (int u = 0; u < k; ++u)
          for (int v = 0; v < k; ++v) {
            int fi = f + u - o, si = s + v - o;
            if (fi < 0 || fi >= F || si < 0 || si >= S) continue;
            mid[(f * S + s) * Ci + c] += x[(fi * S + si) * Ci + c] * dw[(u * k + v) * Ci + c];
          }
  std::vector<double> out(F * S * Co);
  for (int q = 0; q < F * S; ++q)
    for (int co = 0; co < Co; ++co) {
      double acc = bias[co];
      for (int c = 0; c < Ci; ++c) acc += mid[q * Ci + c] * pw[c * Co + co];
      out[q * Co + co] = acc;
    }
  return out;
}

// Independent oracle: complex linear solve by Gaussian elimination.
std::vector<cd> gauss_solve_oracle(std::vector<cd> a, std::vector<cd> b, int n, int m) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    for (int j = 0; j < n; ++j) std::swap(a[piv * n + j], a[col * n + j]);
    for (int j = 0; j < m; ++j) std::swap(b[piv * m + j], b[col * m + j]);
    for (int r = col + 1; r < n; ++r) {
      cd f = a[r * n + col] / a[col * n + col];
      for (int j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
      for (int j = 0; j < m; ++j) b[r * m + j] -= f * b[col * m + j];
    }
  }
  for (int col = n - 1; col >= 0; --col)
    for (int j = 0; j < m; ++j) {
      cd acc = b[col * m + j];
      for (int r = col + 1; r < n; ++r) acc -= a[col * n + r] * b[r * m + j];
      b[col * m + j] = acc / a[col * n + col];
    }
  return b;
}

// Random Hermitian positive definite A = M^H M + d I.
void random_hpd(std::mt19937_64& rng, int n, std::vector<double>& are,
                std::vector<double>& aim) {
  auto m_re = randu(rng, n * n), m_im = randu(rng, n * n);
  are.assign(n * n, 0.0);
  aim.assign(n * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      cd acc(0.0, 0.0);
      for (int k = 0; k < n; ++k)
        acc += std::conj(cd(m_re[k * n + i], m_im[k * n + i])) *
               cd(m_re[k * n + j], m_im[k * n + j]);
      if (i == j) acc += 0.5 * n;
      are[i * n + j] = acc.real();
      aim[i * n + j] = acc.imag();
    }
}

}  // namespace

TEST_CASE("relu forward and subgradient at zero") {
  Tensor x = Tensor::param({3}, {-1.0, 0.0, 2.0});
  Tensor y = relu(x);
  CHECK(y.value() == std::vector<double>{0.0, 0.0, 2.0});
  backward(reduce_sum(y));
  CHECK(x.grad() == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("concat_channels shapes") {
  Tensor a = Tensor::zeros({4, 5, 2});
  Tensor b = Tensor::zeros({4, 5, 2});
  Tensor c = concat_channels({a, b});
  CHECK(c.shape() == Shape{4, 5, 4});
  CHECK_THROWS_AS(concat_channels({a, Tensor::zeros({3, 5, 2})}), ShapeError);
}

TEST_CASE("broadcast mul with scalar: values and gradient wrt scalar") {
  Tensor x = Tensor::param({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor s = Tensor::param({}, {2.0});
  Tensor y = mul(x, s);
  for (int i = 0; i < 6; ++i) CHECK(y.value()[i] == doctest::Approx(2.0 * (i + 1)));
  backward(reduce_sum(y));
  CHECK(s.grad()[0] == doctest::Approx(21.0));  // sum of upstream * x
}

TEST_CASE("shape mismatch raises ShapeError") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("backward: sum and quadratic") {
  Tensor x = Tensor::param({3}, {1, 2, 3});
  backward(reduce_sum(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});

  Tensor z = Tensor::param({2}, {1, 2});
  backward(reduce_sum(mul(z, z)));
  CHECK(z.grad()[0] == doctest::Approx(2.0));
  CHECK(z.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward requires scalar root") {
  Tensor x = Tensor::param({3}, {1, 2, 3});
  CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
}

TEST_CASE("shared subexpressions accumulate additively") {
  Tensor x = Tensor::param({}, {3.0});
  Tensor g = mul(x, x);
  backward(add(g, g));  // f = g + g, f' = 2 g' = 4x
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("separable conv: zero kernels give zero output") {
  std::mt19937_64 rng(7);
  Tensor x = Tensor::from_data({5, 6, 3}, randu(rng, 90));
  Tensor dw = Tensor::zeros({3, 3, 3});
  Tensor pw = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({4});
  Tensor y = conv2d_separable(x, dw, pw, b);
  for (double v : y.value()) CHECK(v == 0.0);
}

TEST_CASE("separable conv: identity center tap on 1x1 grid") {
  Tensor x = Tensor::from_data({1, 1, 1}, {0.73});
  std::vector<double> dwv(9, 0.0);
  dwv[4] = 1.0;  // center tap
  Tensor dw = Tensor::from_data({3, 3, 1}, dwv);
  Tensor pw = Tensor::from_data({1, 1}, {1.0});
  Tensor b = Tensor::zeros({1});
  CHECK(conv2d_separable(x, dw, pw, b).value()[0] == doctest::Approx(0.73));
}

TEST_CASE("separable conv: even kernel rejected") {
  CHECK_THROWS_AS(conv2d_separable(Tensor::zeros({4, 4, 1}), Tensor::zeros({2, 2, 1}),
                                   Tensor::zeros({1, 1}), Tensor::zeros({1})),
                  ConfigError);
}

TEST_CASE("separable conv matches nested-loop oracle") {
  std::mt19937_64 rng(11);
  int F = 4, S = 4, Ci = 2, Co = 3, k = 3;
  auto xv = randu(rng, F * S * Ci);
  auto dwv = randu(rng, k * k * Ci);
  auto pwv = randu(rng, Ci * Co);
  auto bv = randu(rng, Co);
  Tensor y = conv2d_separable(Tensor::from_data({F, S, Ci}, xv),
                              Tensor::from_data({k, k, Ci}, dwv),
                              Tensor::from_data({Ci, Co}, pwv),
                              Tensor::from_data({Co}, bv));
  auto want = conv_oracle(xv, F, S, Ci, dwv, k, pwv, Co, bv);
  for (size_t i = 0; i < want.size(); ++i)
    CHECK(y.value()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("separable conv gradients vs finite differences") {
  std::mt19937_64 rng(13);
  Tensor x = Tensor::param({3, 4, 2}, randu(rng, 24));
  Tensor dw = Tensor::param({3, 3, 2}, randu(rng, 18));
  Tensor pw = Tensor::param({2, 2}, randu(rng, 4));
  Tensor b = Tensor::param({2}, randu(rng, 2));
  auto fn = [&] { return reduce_mean(mul(conv2d_separable(x, dw, pw, b),
                                         conv2d_separable(x, dw, pw, b))); };
  auto res = gradcheck(fn, {x, dw, pw, b});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("batch norm: constant channel gives beta") {
  Tensor x = Tensor::full({2, 3, 1}, 5.0);
  Tensor gamma = Tensor::from_data({1}, {1.5});
  Tensor beta = Tensor::from_data({1}, {0.25});
  Tensor y = batch_norm(x, gamma, beta, nullptr, true);
  for (double v : y.value()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("batch norm: zero-mean unit-variance input is a fixed point") {
  // Two samples at +-1: mean 0, biased variance 1.
  Tensor x = Tensor::from_data({2, 1}, {1.0, -1.0});
  Tensor y = batch_norm(x, Tensor::from_data({1}, {1.0}), Tensor::zeros({1}),
                        nullptr, true, 0.1, 1e-8);
  CHECK(y.value()[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(y.value()[1] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("batch norm: train output is normalized per channel") {
  std::mt19937_64 rng(17);
  Tensor x = Tensor::from_data({50, 3}, randu(rng, 150, -2.0, 5.0));
  Tensor y = batch_norm(x, Tensor::from_data({3}, {1, 1, 1}), Tensor::zeros({3}),
                        nullptr, true, 0.1, 1e-12);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int r = 0; r < 50; ++r) mean += y.value()[r * 3 + c];
    mean /= 50;
    for (int r = 0; r < 50; ++r) {
      double d = y.value()[r * 3 + c] - mean;
      var += d * d;
    }
    var /= 50;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("batch norm: uninitialized running stats in infer mode") {
  BatchNormState st;
  CHECK_THROWS_AS(batch_norm(Tensor::zeros({2, 1}), Tensor::from_data({1}, {1.0}),
                             Tensor::zeros({1}), &st, false),
                  StateError);
}

TEST_CASE("batch norm: gradient wrt gamma matches finite differences") {
  std::mt19937_64 rng(19);
  Tensor x = Tensor::param({2, 2, 1}, randu(rng, 4));
  Tensor gamma = Tensor::param({1}, {1.3});
  Tensor beta = Tensor::param({1}, {-0.2});
  auto fn = [&] {
    Tensor y = batch_norm(x, gamma, beta, nullptr, true);
    return reduce_mean(mul(y, y));
  };
  auto res = gradcheck(fn, {x, gamma, beta});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("hermitian_solve: identity and diagonal") {
  auto B = complex_from({2, 1}, {cd(1.0, 2.0), cd(-0.5, 0.25)});
  auto I = complex_from({2, 2}, {1, 0, 0, 1});
  auto X = hermitian_solve(I, B);
  CHECK(X.at(0) == B.at(0));
  CHECK(X.at(1) == B.at(1));

  auto A = complex_from({2, 2}, {2, 0, 0, 5});
  auto E = complex_from({2, 2}, {1, 0, 0, 1});
  auto Y = hermitian_solve(A, E);
  CHECK(Y.at(0).real() == doctest::Approx(0.5));
  CHECK(Y.at(3).real() == doctest::Approx(0.2));
}

TEST_CASE("hermitian_solve matches Gaussian-elimination oracle") {
  std::mt19937_64 rng(23);
  int n = 4, m = 2;
  std::vector<double> are, aim;
  random_hpd(rng, n, are, aim);
  auto bre = randu(rng, n * m);
  auto bim = randu(rng, n * m);
  std::vector<cd> ac(n * n), bc(n * m);
  for (int i = 0; i < n * n; ++i) ac[i] = cd(are[i], aim[i]);
  for (int i = 0; i < n * m; ++i) bc[i] = cd(bre[i], bim[i]);
  auto want = gauss_solve_oracle(ac, bc, n, m);

  ComplexPair A{Tensor::from_data({n, n}, are), Tensor::from_data({n, n}, aim)};
  ComplexPair B{Tensor::from_data({n, m}, bre), Tensor::from_data({n, m}, bim)};
  auto X = hermitian_solve(A, B);
  for (int i = 0; i < n * m; ++i) {
    CHECK(std::abs(X.at(i) - want[i]) / std::abs(want[i]) < 1e-10);
  }
}

TEST_CASE("hermitian_solve gradient vs finite differences") {
  std::mt19937_64 rng(29);
  int n = 4, m = 2;
  std::vector<double> are, aim;
  random_hpd(rng, n, are, aim);
  Tensor Are = Tensor::param({n, n}, are);
  Tensor Aim = Tensor::param({n, n}, aim);
  Tensor Bre = Tensor::param({n, m}, randu(rng, n * m));
  Tensor Bim = Tensor::param({n, m}, randu(rng, n * m));
  auto wre = randu(rng, n * m);
  auto wim = randu(rng, n * m);
  auto fn = [&] {
    auto X = hermitian_solve({Are, Aim}, {Bre, Bim});
    Tensor acc = add(reduce_sum(mul(X.re, Tensor::from_data({n, m}, wre))),
                     reduce_sum(mul(X.im, Tensor::from_data({n, m}, wim))));
    return acc;
  };
  auto res = gradcheck(fn, {Are, Aim, Bre, Bim});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("hermitian_solve(A, A*B) recovers B") {
  std::mt19937_64 rng(31);
  int n = 3, m = 2;
  std::vector<double> are, aim;
  random_hpd(rng, n, are, aim);
  ComplexPair A{Tensor::from_data({n, n}, are), Tensor::from_data({n, n}, aim)};
  ComplexPair B{Tensor::from_data({n, m}, randu(rng, n * m)),
                Tensor::from_data({n, m}, randu(rng, n * m))};
  auto X = hermitian_solve(A, cbmm(A, B));
  for (int64_t i = 0; i < X.size(); ++i)
    CHECK(std::abs(X.at(i) - B.at(i)) < 1e-10 * std::max(1.0, std::abs(B.at(i))));
}

TEST_CASE("hermitian_solve: singular matrix raises") {
  auto A = complex_from({2, 2}, {1, 1, 1, 1});
  auto B = complex_from({2, 1}, {1, 1});
  CHECK_THROWS_AS(hermitian_solve(A, B), SingularError);
}

TEST_CASE("bce_with_logits values") {
  Tensor l0 = Tensor::from_data({1}, {0.0});
  Tensor ones = Tensor::from_data({1}, {1.0});
  l0.set_requires_grad(true);
  CHECK(bce_with_logits(l0, ones).value()[0] == doctest::Approx(1.0));  // log2 2

  Tensor lbig = Tensor::from_data({1}, {40.0});
  CHECK(bce_with_logits(lbig, ones).value()[0] < 1e-10);
  CHECK(std::isfinite(bce_with_logits(Tensor::from_data({1}, {1e4}), ones).value()[0]));
  CHECK(std::isfinite(bce_with_logits(Tensor::from_data({1}, {-1e4}), ones).value()[0]));

  // p = 0.75 -> logit log(3); loss = -log2(0.75)
  Tensor l = Tensor::from_data({1}, {std::log(3.0)});
  CHECK(bce_with_logits(l, ones).value()[0] ==
        doctest::Approx(-std::log2(0.75)).epsilon(1e-12));
}

TEST_CASE("bce_with_logits gradient is (sigmoid - t)/ln2") {
  Tensor l = Tensor::param({2}, {0.3, -1.2});
  Tensor t = Tensor::from_data({2}, {1.0, 0.0});
  backward(reduce_sum(bce_with_logits(l, t)));
  for (int i = 0; i < 2; ++i) {
    double sig = 1.0 / (1.0 + std::exp(-l.value()[i]));
    CHECK(l.grad()[i] == doctest::Approx((sig - t.value()[i]) / std::log(2.0)));
  }
}

TEST_CASE("adam: zero gradient leaves parameter unchanged") {
  Tensor p = Tensor::param({2}, {1.0, -2.0});
  Adam opt(0.1);
  backward(reduce_sum(mul(p, Tensor::zeros({2}))));
  opt.step({p});
  CHECK(p.value()[0] == doctest::Approx(1.0));
  CHECK(p.value()[1] == doctest::Approx(-2.0));
}

TEST_CASE("adam: first step is approximately -lr*sign(g)") {
  Tensor p = Tensor::param({1}, {0.0});
  backward(mul(reduce_sum(p), Tensor::scalar(3.0)));  // g = 3
  Adam opt(0.01);
  opt.step({p});
  CHECK(p.value()[0] == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("adam: two steps match hand-computed trace") {
  // f(x) = x^2 at x0 = 1, lr=0.1, default betas.
  double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    double g = 2.0 * x;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mh = m / (1 - std::pow(b1, t));
    double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  Tensor p = Tensor::param({1}, {1.0});
  Adam opt(lr, b1, b2, eps);
  for (int t = 0; t < 2; ++t) {
    backward(reduce_sum(mul(p, p)));
    opt.step({p});
  }
  CHECK(p.value()[0] == doctest::Approx(x).epsilon(1e-12));
}

TEST_CASE("randomized finite-difference check across the op set") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = Tensor::param({3, 4}, randu(rng, 12));
    Tensor b = Tensor::param({4}, randu(rng, 4, 0.5, 1.5));
    Tensor c = Tensor::param({3, 4}, randu(rng, 12));
    auto fn = [&] {
      Tensor t1 = add(mul(a, b), div(c, b));
      Tensor t2 = relu(sub(t1, c));
      Tensor t3 = concat_channels({t1, t2});
      Tensor t4 = gather0(t3, {2, 0});
      Tensor t5 = permute(t4, {1, 0});
      Tensor t6 = tile0(t5, 2);
      return reduce_mean(mul(t6, t6));
    };
    auto res = gradcheck(fn, {a, b, c});
    CHECK(res.max_rel_err < 1e-5);
  }
}

TEST_CASE("bmm matches manual product and gradcheck") {
  std::mt19937_64 rng(37);
  Tensor a = Tensor::param({2, 2, 3}, randu(rng, 12));
  Tensor b = Tensor::param({2, 3, 2}, randu(rng, 12));
  Tensor y = bmm(a, b);
  for (int q = 0; q < 2; ++q)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double acc = 0;
        for (int k = 0; k < 3; ++k)
          acc += a.value()[(q * 2 + i) * 3 + k] * b.value()[(q * 3 + k) * 2 + j];
        CHECK(y.value()[(q * 2 + i) * 2 + j] == doctest::Approx(acc));
      }
  auto fn = [&] { return reduce_mean(mul(bmm(a, b), bmm(a, b))); };
  CHECK(gradcheck(fn, {a, b}).max_rel_err < 1e-5);
}

TEST_CASE("scatter0 and take_diag roundtrip gradients") {
  std::mt19937_64 rng(41);
  Tensor x = Tensor::param({2, 3}, randu(rng, 6));
  auto fn = [&] {
    Tensor s = scatter0(x, {3, 1}, 5);
    Tensor g = gather0(s, {3, 1});
    return reduce_sum(mul(g, g));
  };
  CHECK(gradcheck(fn, {x}).max_rel_err < 1e-6);

  Tensor sq = Tensor::param({2, 2, 2}, randu(rng, 8));
  auto fn2 = [&] { return reduce_sum(mul(take_diag(sq), take_diag(sq))); };
  CHECK(gradcheck(fn2, {sq}).max_rel_err < 1e-6);
}
