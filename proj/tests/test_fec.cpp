#include "doctest.h"
#include "mdx/fec.hpp"

#include <cmath>
#include <complex>
#include <filesystem>
#include <random>

using namespace mdx;
using namespace mdx::fec;

namespace {

std::vector<int> random_bits(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> v(n);
  for (auto& b : v) b = static_cast<int>(rng() % 2);
  return v;
}

std::vector<int> ascii_bits(const std::string& s) {
  std::vector<int> v;
  for (unsigned char c : s)
    for (int i = 7; i >= 0; --i) v.push_back((c >> i) & 1);
  return v;
}

}  // namespace

TEST_CASE("progressive edge growth produces a regular full-rank code") {
  for (int n : {128, 1024}) {
    auto c = LdpcCode::peg(n, 3, 6, 1);
    CHECK(c.n == n);
    CHECK(c.m == n / 2);
    CHECK(c.k() == n / 2);
    CHECK(c.rate() == doctest::Approx(0.5));
    for (const auto& col : c.cols) CHECK(col.size() == 3);
    for (const auto& row : c.rows) CHECK(row.size() == 6);
    // encoder state covers every parity check exactly once
    CHECK(c.info_pos.size() == static_cast<size_t>(c.k()));
    CHECK(c.parity_pos.size() == static_cast<size_t>(c.m));
  }
  // deterministic for a fixed seed
  auto a = LdpcCode::peg(128, 3, 6, 7);
  auto b = LdpcCode::peg(128, 3, 6, 7);
  CHECK(a.rows == b.rows);
  auto d = LdpcCode::peg(128, 3, 6, 8);
  CHECK(a.rows != d.rows);
  CHECK_THROWS_AS(LdpcCode::peg(99, 3, 6, 1), ConfigError);  // 297 % 6 != 0
}

TEST_CASE("encoder output always has zero syndrome and the code is linear") {
  auto c = LdpcCode::peg(128, 3, 6, 3);
  auto zero = ldpc_encode(std::vector<int>(c.k(), 0), c);
  for (int b : zero) CHECK(b == 0);
  CHECK(c.syndrome_ok(zero));

  std::mt19937_64 rng(5);
  for (int t = 0; t < 1000; ++t) {
    auto cw = ldpc_encode(random_bits(c.k(), rng()), c);
    CHECK(c.syndrome_ok(cw));
  }
  // XOR of two codewords is a codeword
  auto u = ldpc_encode(random_bits(c.k(), 100), c);
  auto v = ldpc_encode(random_bits(c.k(), 101), c);
  std::vector<int> w(c.n);
  for (int i = 0; i < c.n; ++i) w[i] = u[i] ^ v[i];
  CHECK(c.syndrome_ok(w));

  CHECK_THROWS_AS(ldpc_encode(std::vector<int>(c.k() - 1, 0), c), ShapeError);
}

TEST_CASE("decoder handles saturated, uninformative, and scaled inputs") {
  auto c = LdpcCode::peg(128, 3, 6, 2);
  auto cw = ldpc_encode(random_bits(c.k(), 9), c);
  std::vector<double> llr(c.n);
  for (int i = 0; i < c.n; ++i) llr[i] = cw[i] ? 40.0 : -40.0;
  auto r = ldpc_decode(llr, c);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK(r.bits == cw);

  auto r0 = ldpc_decode(std::vector<double>(c.n, 0.0), c, 10);
  CHECK(!r0.converged);
  CHECK(r0.iterations == 10);

  // noisy but decodable input: positive scaling leaves decisions unchanged
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> noisy(c.n);
  for (int i = 0; i < c.n; ++i) noisy[i] = (cw[i] ? 4.0 : -4.0) + g(rng);
  auto ra = ldpc_decode(noisy, c);
  std::vector<double> scaled = noisy;
  for (auto& x : scaled) x *= 3.0;
  auto rb = ldpc_decode(scaled, c);
  CHECK(ra.converged);
  CHECK(ra.bits == rb.bits);

  CHECK_THROWS_AS(ldpc_decode(std::vector<double>(c.n - 1, 0.0), c), ShapeError);
}

TEST_CASE("small-code decoding matches maximum likelihood") {
  auto c = LdpcCode::peg(16, 3, 6, 11);
  REQUIRE(c.k() == 8);
  // enumerate the whole codebook
  std::vector<std::vector<int>> book;
  for (int w = 0; w < 256; ++w) {
    std::vector<int> info(8);
    for (int i = 0; i < 8; ++i) info[i] = (w >> i) & 1;
    book.push_back(ldpc_encode(info, c));
  }
  auto ml = [&](const std::vector<double>& llr) {
    double best = -1e300;
    const std::vector<int>* arg = nullptr;
    for (const auto& cw : book) {
      double s = 0.0;
      for (int i = 0; i < 16; ++i) s += cw[i] ? llr[i] : -llr[i];
      if (s > best) {
        best = s;
        arg = &cw;
      }
    }
    return *arg;
  };

  std::mt19937_64 rng(77);
  int agree = 0, corrected = 0, trials = 200;
  for (int t = 0; t < trials; ++t) {
    const auto& cw = book[rng() % 256];
    std::vector<double> llr(16);
    for (int i = 0; i < 16; ++i) llr[i] = cw[i] ? 8.0 : -8.0;
    int flip = static_cast<int>(rng() % 16);
    llr[flip] = cw[flip] ? -0.5 : 0.5;  // one weakly wrong bit
    auto dec = ldpc_decode(llr, c, 50);
    if (dec.converged && dec.bits == cw) ++corrected;
    if (dec.bits == ml(llr)) ++agree;
  }
  CHECK(corrected == trials);
  CHECK(agree == trials);
}

TEST_CASE("CRC-16 attach/check and the reference vector") {
  // CRC-16/XMODEM of "123456789" is 0x31C3
  CHECK(crc16(ascii_bits("123456789")) == 0x31C3);

  auto msg = random_bits(120, 4);
  auto with = crc_attach(msg);
  CHECK(with.size() == msg.size() + 16);
  CHECK(crc_check(with));
  for (size_t i = 0; i < with.size(); ++i) {
    auto flipped = with;
    flipped[i] ^= 1;
    CHECK(!crc_check(flipped));
  }

  // empty payload: remainder of the zero-extended message round-trips
  auto empty = crc_attach({});
  CHECK(empty.size() == 16);
  CHECK(crc16({}) == 0);
  CHECK(crc_check(empty));
}

TEST_CASE("JSON round trip preserves the code") {
  auto c = LdpcCode::peg(128, 3, 6, 21);
  auto path = (std::filesystem::temp_directory_path() / "mdx_ldpc.json").string();
  c.save_json(path);
  auto c2 = LdpcCode::load_json(path);
  CHECK(c2.rows == c.rows);
  auto info = random_bits(c.k(), 55);
  CHECK(ldpc_encode(info, c2) == ldpc_encode(info, c));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(LdpcCode::load_json(path), FormatError);
}

TEST_CASE("transport block segmentation round trips and flags failures") {
  auto c = LdpcCode::peg(128, 3, 6, 1);
  int total = 300;  // two codewords plus 44 filler bits
  auto tb = tb_encode(total, c, 9);
  CHECK(tb.codewords == 2);
  CHECK(tb.bits.size() == 300);
  CHECK(tb.payload.size() == static_cast<size_t>(2 * (c.k() - 16)));

  std::vector<double> llr(tb.bits.size());
  for (size_t i = 0; i < llr.size(); ++i) llr[i] = tb.bits[i] ? 20.0 : -20.0;
  auto dec = tb_decode(llr, c);
  CHECK(dec.ok);
  CHECK(dec.failed == 0);
  CHECK(dec.codewords == 2);
  CHECK(dec.payload == tb.payload);

  // wreck the second codeword: the TB errs even though the first is clean
  auto bad = llr;
  for (int i = c.n; i < 2 * c.n; ++i) bad[i] = 0.0;
  auto dec2 = tb_decode(bad, c);
  CHECK(!dec2.ok);
  CHECK(dec2.failed == 1);

  CHECK_THROWS_AS(tb_encode(100, c, 1), ShapeError);
  CHECK_THROWS_AS(tb_decode(std::vector<double>(10, 0.0), c), ShapeError);
}

TEST_CASE("coded transmission beats the uncoded proxy on block fading") {
  // BPSK with dual-antenna MRC on a block-fading channel at 10 dB
  auto c = LdpcCode::peg(1024, 3, 6, 1);
  double n0 = std::pow(10.0, -1.0);
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  int blocks = 200, coded_err = 0, uncoded_err = 0;
  for (int b = 0; b < blocks; ++b) {
    auto info = random_bits(c.k(), rng());
    auto cw = ldpc_encode(info, c);
    std::complex<double> h0(g(rng) / std::sqrt(2.0), g(rng) / std::sqrt(2.0));
    std::complex<double> h1(g(rng) / std::sqrt(2.0), g(rng) / std::sqrt(2.0));
    std::vector<double> llr(c.n);
    bool bit_err = false;
    for (int i = 0; i < c.n; ++i) {
      double s = cw[i] ? 1.0 : -1.0;
      double sn = std::sqrt(n0 / 2.0);
      std::complex<double> y0 = h0 * s + std::complex<double>(g(rng) * sn, g(rng) * sn);
      std::complex<double> y1 = h1 * s + std::complex<double>(g(rng) * sn, g(rng) * sn);
      double mrc = (std::conj(h0) * y0 + std::conj(h1) * y1).real();
      llr[i] = 4.0 * mrc / n0;
      if ((mrc > 0 ? 1 : 0) != cw[i]) bit_err = true;
    }
    if (bit_err) ++uncoded_err;
    auto dec = ldpc_decode(llr, c, 30);
    if (!dec.converged || dec.bits != cw) ++coded_err;
  }
  CHECK(coded_err < uncoded_err);
  CHECK(uncoded_err > 0);
}
