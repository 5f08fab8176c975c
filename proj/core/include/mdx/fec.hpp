#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdx/errors.hpp"

namespace mdx::fec {

// Binary LDPC code given by a sparse parity-check matrix. Encoding is
// systematic: Gaussian elimination picks m pivot (parity) columns once at
// construction, the remaining k = n - m columns carry the info bits.
struct LdpcCode {
  int n = 0;  // code length
  int m = 0;  // parity checks
  std::vector<std::vector<int>> rows;  // per check: variable indices
  std::vector<std::vector<int>> cols;  // per variable: check indices

  // derived encoder state
  std::vector<int> info_pos;    // k info bit positions
  std::vector<int> parity_pos;  // m parity bit positions, one per reduced row
  std::vector<std::vector<int>> parity_deps;  // per parity: info positions XORed

  int k() const { return n - m; }
  double rate() const { return static_cast<double>(n - m) / n; }
  bool syndrome_ok(const std::vector<int>& codeword) const;

  // Regular (wc, wr) code via seeded progressive edge growth; retries seeds
  // until the parity-check matrix has full row rank.
  static LdpcCode peg(int n, int wc = 3, int wr = 6, uint64_t seed = 1);
  static LdpcCode from_rows(int n, std::vector<std::vector<int>> rows);

  // JSON: {"n": ..., "rows": [[...], ...]}
  static LdpcCode load_json(const std::string& path);
  void save_json(const std::string& path) const;
};

std::vector<int> ldpc_encode(const std::vector<int>& info, const LdpcCode& code);

struct DecodeResult {
  std::vector<int> bits;  // hard decisions, length n
  bool converged = false;
  int iterations = 0;
};

// Normalized min-sum belief propagation. LLR sign convention matches the
// demapper: positive means bit 1.
DecodeResult ldpc_decode(const std::vector<double>& llr, const LdpcCode& code,
                         int max_iters = 50, double normalization = 0.75);

// CRC-16/CCITT (poly 0x1021, zero initial value) over a bit vector.
uint16_t crc16(const std::vector<int>& bits);
std::vector<int> crc_attach(const std::vector<int>& bits);
bool crc_check(const std::vector<int>& bits_with_crc);

// Transport block: the data bits of one layer in one slot, segmented into
// full codewords (floor(total/n), at least one); each codeword carries
// k-16 payload bits plus its CRC. Leftover bit positions are seeded filler.
struct TransportBlock {
  std::vector<int> payload;  // C * (k-16) bits
  std::vector<int> bits;     // total_bits: C*n codeword bits then filler
  int codewords = 0;
};

TransportBlock tb_encode(int total_bits, const LdpcCode& code, uint64_t seed);

struct TbDecodeResult {
  std::vector<int> payload;
  bool ok = false;  // every codeword converged and passed CRC
  int codewords = 0;
  int failed = 0;
};

TbDecodeResult tb_decode(const std::vector<double>& llr, const LdpcCode& code,
                         int max_iters = 50, double normalization = 0.75);

}  // namespace mdx::fec
