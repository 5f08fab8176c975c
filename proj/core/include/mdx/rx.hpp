#pragma once

#include <complex>
#include <optional>
#include <vector>

#include "mdx/channel.hpp"
#include "mdx/complex.hpp"
#include "mdx/grid.hpp"

namespace mdx::rx {

using ad::ComplexPair;
using ad::Tensor;
using cd = std::complex<double>;

enum class EstimateSource { PA_LS, DA_LS, NN, PERFECT };

struct ChannelEstimate {
  int F = 0, S = 0, n_rx = 0, n_tx = 0;
  EstimateSource source = EstimateSource::PA_LS;
  std::vector<cd> H;  // ((f*S + s)*n_rx + r)*n_tx + t

  cd& at(int f, int s, int r, int t) {
    return H[(static_cast<size_t>(f * S + s) * n_rx + r) * n_tx + t];
  }
  cd at(int f, int s, int r, int t) const {
    return H[(static_cast<size_t>(f * S + s) * n_rx + r) * n_tx + t];
  }
  static ChannelEstimate from_realization(const chan::ChannelRealization& h);
};

// Own-pilot LS with OCC despreading: one estimate per CDM pair, written to
// both pair subcarriers at each DMRS symbol; zero elsewhere.
ChannelEstimate pa_ls_estimate(const std::vector<cd>& y,
                               const std::vector<std::vector<cd>>& pilots,
                               const phy::GridLayout& layout, int n_rx);

// Fill the full grid: nearest CDM pair in frequency, linear between DMRS
// symbols in time, nearest outside.
ChannelEstimate interpolate_to_grid(const ChannelEstimate& pilot_est,
                                    const phy::GridLayout& layout);

// OCC-residual noise estimate; uses the unused OCC branch of half-loaded CDM
// groups when available, otherwise adjacent-pair despread differences.
double estimate_noise_variance(const std::vector<cd>& y,
                               const std::vector<std::vector<cd>>& pilots,
                               const phy::GridLayout& layout, int n_rx,
                               std::optional<double> genie_n0 = std::nullopt);

struct EqualizerOutput {
  ComplexPair x_hat;  // [n_re, n_tx]
  Tensor sigma_res;   // [n_re, n_tx]
};

// Parameterized LMMSE on the autodiff graph. H: [n_re, n_rx, n_tx],
// Y: [n_re, n_rx, 1]. psi is a 12x14 per-PRB adjustment (undefined = ones);
// the per-RE noise term is psi(f mod 12, s) * sigma2.
EqualizerOutput lmmse_equalize(const ComplexPair& H, const ComplexPair& Y,
                               double sigma2, const Tensor& psi,
                               const phy::GridLayout& layout);

struct LlrGrid {
  Tensor llr;            // [n_data, n_tx, B]
  std::vector<int> res;  // RE flat index per row
  int bits = 0;
};

// Max-log demapping over data REs. x_hat/sigma_res: [n_re, n_tx] over the
// full grid; gamma (scalar) and phi (12x14) rescale the variance, undefined
// meaning 1. Demapper variance is floored at 1e-12.
LlrGrid max_log_demap(const ComplexPair& x_hat, const Tensor& sigma_res,
                      const phy::Constellation& c, const Tensor& gamma,
                      const Tensor& phi, const phy::GridLayout& layout);

enum class BaselineKind { LS_LMMSE, PERFECT_CSI_LMMSE };

LlrGrid run_baseline(BaselineKind kind, const std::vector<cd>& y,
                     const std::vector<std::vector<cd>>& pilots,
                     const ChannelEstimate* true_h, const phy::GridLayout& layout,
                     int n_rx, double sigma2, const phy::Constellation& c);

// Constant-graph wrappers.
ComplexPair estimate_to_graph(const ChannelEstimate& est);          // [n_re,n_rx,n_tx]
ComplexPair received_to_graph(const std::vector<cd>& y, int n_re, int n_rx);  // [n_re,n_rx,1]

}  // namespace mdx::rx
