#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mdx/errors.hpp"
#include "mdx/model.hpp"

namespace mdx::analysis {

// Real multiplications per RE for the LMMSE block (complex multiplication
// counted as four real ones): 2N³ + 6RN² + 6RN - 2N + 2 with N = n_tx,
// R = n_r.
int64_t lmmse_mult_count(int n_tx, int n_r);

// Depthwise-separable + pointwise convolution pair, stride 1:
// k²·n0·F·S + n0·n·F·S.
int64_t sepconv_mult_count(int k, int n0, int n, int F, int S);

// FLOP convention: 1 FLOP = 1 real multiplication; additions are excluded.
// flops_total_mul_add reports the alternative multiply-accumulate
// convention (2 FLOPs per multiplication) alongside.
struct ComplexityReport {
  int64_t lmmse = 0;
  int64_t resblocks = 0;
  int64_t demapper = 0;
  int64_t misc = 0;
  int64_t param_count = 0;
  int n_rx = 0, n_tx = 0, prbs = 0, kernel = 0, filters = 0, bits = 0;

  int64_t flops_total() const { return lmmse + resblocks + demapper + misc; }
  int64_t flops_total_mul_add() const { return 2 * flops_total(); }
};

ComplexityReport model_complexity(const model::MdxConfig& arch, int n_rx,
                                  int n_tx, int prbs, int bits);

// Reference LMMSE equalizer on plain doubles with an exact multiplication
// counter wired into every arithmetic step. H is row-major (r, t), y has
// n_r entries; the per-RE regularizer is psi * sigma2.
struct LmmseCounted {
  std::vector<std::complex<double>> x_hat;  // n_tx
  std::vector<double> noise_gain;           // n_tx, sum_r |G_ir|^2
  int64_t mults = 0;                        // real multiplications
};

LmmseCounted lmmse_counted(const std::vector<std::complex<double>>& H,
                           const std::vector<std::complex<double>>& y,
                           double sigma2, double psi, int n_r, int n_tx);

// Per-SNR metric bookkeeping. Accumulators merge, so concurrent workers can
// accumulate privately and combine.
struct SnrBucket {
  int64_t bit_errors = 0, n_bits = 0;
  int64_t block_errors = 0, n_blocks = 0;
  int64_t n_slots = 0;
  double mse_sum = 0.0;
  int64_t mse_count = 0;
};

struct MetricAccumulator {
  std::map<double, SnrBucket> buckets;  // keyed by snr_db

  void add_bits(double snr_db, int64_t errors, int64_t total);
  void add_block(double snr_db, bool error);
  void add_slot(double snr_db);
  void add_mse(double snr_db, double squared_error_sum, int64_t count);
  void merge(const MetricAccumulator& other);
};

struct ReportRow {
  double snr_db = 0.0;
  double ber = 0.0, bler = 0.0, ch_mse = 0.0;
  int64_t n_bits = 0, n_blocks = 0, n_slots = 0;
};

// Buckets with no data at all are omitted.
std::vector<ReportRow> report(const MetricAccumulator& acc);

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows,
                      const std::string& config_hash, uint64_t seed);

}  // namespace mdx::analysis
