#pragma once

#include <string>
#include <vector>

#include "mdx/adam.hpp"
#include "mdx/model.hpp"

namespace mdx::train {

using ad::Tensor;

struct TrainConfig {
  int batch_size = 8;  // TTIs per iteration
  int iterations = 2000;
  double lr = 0.001;
  double lambda = 0.01;  // MSE weight
  double snr_min_db = -4.0, snr_max_db = 16.0;
  int prbs = 1;
  std::vector<int> modulations = {2};  // bits per symbol, shared by all layers
  int n_rx = 4;
  int max_layers = 2;
  bool block_fading = true;
  std::string tdl_profile_path;  // used when block_fading is false
  bool genie_noise = true;       // true noise variance at the receiver
  uint64_t seed = 1;
  int checkpoint_every = 0;      // 0 = only at the end
  std::string out_dir;           // empty = no files written
  model::MdxConfig arch;
};

struct TraceRow {
  int iteration = 0;
  double loss = 0.0, bce_d = 0.0, bce_dals = 0.0, mse = 0.0, mean_snr_db = 0.0;
};

// Eq-style BCE over the data REs: mean per (RE, layer, bit) in bits (log2).
Tensor bce_loss(const rx::LlrGrid& llr,
                const std::vector<std::vector<int>>& payload_bits);

// Channel MSE over the data REs, normalized by |D| * n_rx * n_tx.
Tensor mse_loss(const ad::ComplexPair& h_hat, const chan::ChannelRealization& h_true,
                const phy::GridLayout& layout);

// Batch loss: mean over TTIs of log2(1+snr) * (bce_d + bce_dals + lambda*mse).
Tensor total_loss(const std::vector<Tensor>& bce_d,
                  const std::vector<Tensor>& bce_dals,
                  const std::vector<Tensor>& mse,
                  const std::vector<double>& snr_db, double lambda);

struct TrainResult {
  model::MdxParams params;
  std::vector<TraceRow> trace;
};

TrainResult train(const TrainConfig& cfg);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace,
                     const std::string& config_hash, uint64_t seed);

// Checkpoint: "MDXC" | u32 version | u64 manifest bytes | JSON manifest |
// raw little-endian f64 payload. Stores parameters, batch-norm running
// statistics, Adam moments, and training metadata.
void save_checkpoint(const std::string& path, const model::MdxParams& params,
                     const ad::Adam* opt, int64_t iteration, uint64_t seed,
                     const std::string& config_hash);

struct Checkpoint {
  model::MdxParams params;
  int64_t iteration = 0;
  uint64_t seed = 0;
  std::string config_hash;
  // optimizer moments keyed by parameter name, restored into an Adam via
  // restore_optimizer
  std::vector<std::pair<std::string, ad::Adam::Moments>> adam_moments;
  int64_t adam_step = 0;
};

Checkpoint load_checkpoint(const std::string& path);
void restore_optimizer(const Checkpoint& ck, const model::MdxParams& params,
                       ad::Adam& opt);

}  // namespace mdx::train
