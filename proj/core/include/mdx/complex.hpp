#pragma once

#include <complex>

#include "mdx/tensor.hpp"

namespace mdx::ad {

/// Complex tensors as paired real tensors; no native complex dtype.
struct ComplexPair {
  Tensor re;
  Tensor im;

  const Shape& shape() const { return re.shape(); }
  int64_t size() const { return re.size(); }
  std::complex<double> at(int64_t i) const {
    return {re.value()[i], im.value()[i]};
  }
};

ComplexPair make_complex(Tensor re, Tensor im);
ComplexPair complex_zeros(const Shape& s);
ComplexPair complex_from(const Shape& s, const std::vector<std::complex<double>>& v);

ComplexPair cadd(const ComplexPair& a, const ComplexPair& b);
ComplexPair csub(const ComplexPair& a, const ComplexPair& b);
ComplexPair cmul(const ComplexPair& a, const ComplexPair& b);
ComplexPair conj(const ComplexPair& a);
ComplexPair cscale(const ComplexPair& a, double c);
ComplexPair cmul_real(const ComplexPair& a, const Tensor& r);
Tensor cabs2(const ComplexPair& a);

ComplexPair cgather0(const ComplexPair& a, const std::vector<int>& idx);
ComplexPair cscatter0(const ComplexPair& a, const std::vector<int>& idx, int out_dim0);
ComplexPair creshape(const ComplexPair& a, const Shape& s);
ComplexPair cpermute(const ComplexPair& a, const std::vector<int>& axes);
ComplexPair cconcat_last(const std::vector<ComplexPair>& xs);
ComplexPair cslice_last(const ComplexPair& a, int start, int len);

/// Batched complex matmul via four real matmuls.
ComplexPair cbmm(const ComplexPair& a, const ComplexPair& b);

/// Conjugate transpose of the trailing two axes.
ComplexPair cherm(const ComplexPair& a);

// Returns A^{-1} B for batched square A ([*,n,n]) and B ([*,n,m]).
// A is expected Hermitian positive definite; the solve reads the full
// matrix, so gradients are exact for arbitrary perturbations of A.
// Throws SingularError when a pivot falls below 1e-12.
ComplexPair hermitian_solve(const ComplexPair& A, const ComplexPair& B);

}  // namespace mdx::ad
