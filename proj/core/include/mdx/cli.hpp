#pragma once

#include <string>
#include <vector>

#include "mdx/analysis.hpp"
#include "mdx/trainer.hpp"

namespace mdx::cli {

// exit-code contract
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitBadConfig = 2;
inline constexpr int kExitNanAbort = 3;
inline constexpr int kExitCheckpoint = 4;
inline constexpr int kExitGradcheck = 5;

// JSON experiment description; unset keys fall back to the defaults below.
struct ExperimentConfig {
  // system
  int n_rx = 4;
  int layers = 2;  // exact layer count for eval, upper bound for training
  int prbs = 1;
  int modulation = 2;  // bits per symbol
  // channel
  bool block_fading = true;
  std::string profile_path;
  std::vector<double> snr_db_list;          // eval grid
  double snr_min_db = -4.0, snr_max_db = 16.0;  // training range
  // receiver
  std::string receiver = "ls_lmmse";  // ls_lmmse | perfect_csi | mdx
  std::string checkpoint;
  bool genie_noise = true;
  // training
  int iterations = 2000;
  int batch_size = 8;
  double lr = 0.001;
  double lambda = 0.01;
  int checkpoint_every = 0;
  // run
  uint64_t seed = 1;
  int num_tti = 100;
  std::string out_dir = ".";
  model::MdxConfig arch;

  std::string hash;  // FNV-1a of the config file bytes

  static ExperimentConfig load(const std::string& path);
  void validate() const;  // throws ConfigError
};

std::string hash_bytes(const std::string& bytes);

// subcommand bodies; they throw on fatal problems, run() maps exceptions to
// the exit-code contract and prints messages
void cmd_train(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg);
void cmd_flops(const ExperimentConfig& cfg);

struct GradcheckEntry {
  std::string op;
  double max_rel_err = 0.0;
  bool pass = false;
};
std::vector<GradcheckEntry> run_gradcheck_suite(uint64_t seed);

// full dispatcher: mdx train|eval|flops|gradcheck --config <path>
// [--seed N] [--out DIR]; returns the process exit code
int run(const std::vector<std::string>& args);

}  // namespace mdx::cli
