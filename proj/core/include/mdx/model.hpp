#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mdx/rx.hpp"

namespace mdx::model {

using ad::ComplexPair;
using ad::Tensor;
using cd = std::complex<double>;

struct MdxConfig {
  int n_blocks = 4;
  int filters = 8;
  int kernel = 3;
  // relative-distance normalization constants for the positional encoding
  double pe_freq_norm = 12.0;
  double pe_time_norm = 14.0;
};

struct ConvHead {
  Tensor dw;    // [k,k,Cin]
  Tensor pw;    // [Cin,Cout]
  Tensor bias;  // [Cout]
};

struct ResBlockParams {
  Tensor bn_gamma, bn_beta;  // [4]
  ad::BatchNormState bn_state;
  ConvHead trunk;   // 8 -> filters
  ConvHead a_head;  // filters -> 2
  ConvHead b_head;  // filters -> 2; undefined in the last block
  Tensor gamma_l;   // [12,14] per-PRB residual weight
};

struct MdxParams {
  MdxConfig cfg;
  Tensor psi_dals, psi_d, phi;  // [12,14]
  Tensor gamma;                 // [3], one per modulation order
  std::vector<ResBlockParams> blocks;

  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> learnables() const;
};

MdxParams init_params(const MdxConfig& cfg, uint64_t seed);
int64_t parameter_count(const MdxParams& p);

// gamma index for a modulation order (2 -> 0, 4 -> 1, 6 -> 2)
int gamma_index(int bits);

// [12,14,4]: channels 0-1 relative distance to the layer's nearest pilot
// (frequency, time), channels 2-3 absolute coordinates; all in [0,1].
Tensor positional_encoding(const phy::GridLayout& layout, int layer,
                           const MdxConfig& cfg = {});

rx::EqualizerOutput dals_equalize(const ComplexPair& H_pals, const ComplexPair& Y,
                                  double sigma2, const MdxParams& params,
                                  const phy::GridLayout& layout);

// Data-aided estimate: residual after cancelling the other layers, scaled by
// the conjugated symbol estimate; pilot-symbol REs keep the PA-LS value.
ComplexPair da_ls_estimate(const ComplexPair& H_pals, const ComplexPair& x_dals,
                           const ComplexPair& Y, const phy::GridLayout& layout);

// Residual conv stack over all links in parallel with shared weights.
// H_pals/H_dals: [n_re,n_rx,n_tx]; returns the refined estimate, same shape.
ComplexPair resblocks_forward(const ComplexPair& H_pals, const ComplexPair& H_dals,
                              const phy::GridLayout& layout, MdxParams& params,
                              bool train);

struct MdxOutput {
  rx::LlrGrid llr_final;
  rx::LlrGrid llr_intermediate;  // train mode only (llr.defined() == false otherwise)
  ComplexPair h_nn;              // [n_re,n_rx,n_tx]
  rx::ChannelEstimate h_pals;    // interpolated
  rx::EqualizerOutput dals;
};

MdxOutput mdx_forward(const std::vector<cd>& y,
                      const std::vector<std::vector<cd>>& pilots,
                      const phy::GridLayout& layout, int n_rx, double sigma2,
                      MdxParams& params, const phy::Constellation& c, bool train);

}  // namespace mdx::model
