#include "mdx/fec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <random>

#include "json.hpp"

namespace mdx::fec {

namespace {

void build_cols(LdpcCode& c) {
  c.cols.assign(c.n, {});
  for (int r = 0; r < c.m; ++r)
    for (int v : c.rows[r]) c.cols[v].push_back(r);
}

// Dense GF(2) elimination; returns false when H is row-rank deficient.
// On success fills info_pos / parity_pos / parity_deps for systematic
// encoding from the reduced row echelon form.
bool build_encoder(LdpcCode& c) {
  std::vector<std::vector<uint64_t>> h(c.m);
  int words = (c.n + 63) / 64;
  for (int r = 0; r < c.m; ++r) {
    h[r].assign(words, 0);
    for (int v : c.rows[r]) h[r][v / 64] ^= 1ULL << (v % 64);
  }
  auto get = [&](int r, int v) { return (h[r][v / 64] >> (v % 64)) & 1ULL; };

  std::vector<int> pivot_col(c.m, -1);
  int rank = 0;
  for (int col = 0; col < c.n && rank < c.m; ++col) {
    int pr = -1;
    for (int r = rank; r < c.m; ++r)
      if (get(r, col)) {
        pr = r;
        break;
      }
    if (pr < 0) continue;
    std::swap(h[rank], h[pr]);
    for (int r = 0; r < c.m; ++r)
      if (r != rank && get(r, col))
        for (int w = 0; w < words; ++w) h[r][w] ^= h[rank][w];
    pivot_col[rank] = col;
    ++rank;
  }
  if (rank < c.m) return false;

  std::vector<char> is_pivot(c.n, 0);
  for (int r = 0; r < c.m; ++r) is_pivot[pivot_col[r]] = 1;
  c.info_pos.clear();
  for (int v = 0; v < c.n; ++v)
    if (!is_pivot[v]) c.info_pos.push_back(v);
  c.parity_pos = pivot_col;
  c.parity_deps.assign(c.m, {});
  for (int r = 0; r < c.m; ++r)
    for (int v : c.info_pos)
      if (get(r, v)) c.parity_deps[r].push_back(v);
  return true;
}

// Girth-aware check selection: BFS from variable v through the current
// graph; prefer checks outside the reachable set, then maximal depth, then
// minimal degree, ties broken by the PRNG.
int peg_select(const LdpcCode& c, int v, const std::vector<int>& check_deg,
               int wr, std::mt19937_64& rng) {
  std::vector<int> dist(c.m, -1);
  std::queue<std::pair<int, int>> q;  // (check, depth)
  for (int ck : c.cols[v]) {
    dist[ck] = 0;
    q.push({ck, 0});
  }
  while (!q.empty()) {
    auto [ck, d] = q.front();
    q.pop();
    for (int u : c.rows[ck])
      for (int ck2 : c.cols[u])
        if (dist[ck2] < 0) {
          dist[ck2] = d + 1;
          q.push({ck2, d + 1});
        }
  }
  int best = -1, best_dist = -2, best_deg = wr + 1;
  std::vector<int> ties;
  for (int ck = 0; ck < c.m; ++ck) {
    if (check_deg[ck] >= wr) continue;
    int d = dist[ck] < 0 ? c.m + 1 : dist[ck];  // unreachable is best
    if (d > best_dist || (d == best_dist && check_deg[ck] < best_deg)) {
      best = ck;
      best_dist = d;
      best_deg = check_deg[ck];
      ties = {ck};
    } else if (d == best_dist && check_deg[ck] == best_deg) {
      ties.push_back(ck);
    }
  }
  if (best < 0) throw ConfigError("peg: no check with free degree");
  return ties[rng() % ties.size()];
}

}  // namespace

bool LdpcCode::syndrome_ok(const std::vector<int>& codeword) const {
  if (codeword.size() != static_cast<size_t>(n))
    throw ShapeError("syndrome_ok: codeword length mismatch");
  for (const auto& row : rows) {
    int s = 0;
    for (int v : row) s ^= codeword[v] & 1;
    if (s) return false;
  }
  return true;
}

LdpcCode LdpcCode::peg(int n, int wc, int wr, uint64_t seed) {
  if (n < wr || wc < 2 || wr <= wc || (n * wc) % wr != 0)
    throw ConfigError("peg: need n*wc divisible by wr and wr > wc >= 2");
  for (int attempt = 0; attempt < 32; ++attempt) {
    LdpcCode c;
    c.n = n;
    c.m = n * wc / wr;
    c.rows.assign(c.m, {});
    c.cols.assign(n, {});
    std::mt19937_64 rng(seed + attempt);
    std::vector<int> check_deg(c.m, 0);
    for (int v = 0; v < n; ++v)
      for (int e = 0; e < wc; ++e) {
        int ck = peg_select(c, v, check_deg, wr, rng);
        c.rows[ck].push_back(v);
        c.cols[v].push_back(ck);
        ++check_deg[ck];
      }
    if (build_encoder(c)) return c;
  }
  throw ConfigError("peg: could not reach full row rank");
}

LdpcCode LdpcCode::from_rows(int n, std::vector<std::vector<int>> rows) {
  LdpcCode c;
  c.n = n;
  c.m = static_cast<int>(rows.size());
  c.rows = std::move(rows);
  for (const auto& row : c.rows)
    for (int v : row)
      if (v < 0 || v >= n) throw ConfigError("from_rows: column out of range");
  build_cols(c);
  if (!build_encoder(c)) throw ConfigError("from_rows: rank-deficient matrix");
  return c;
}

LdpcCode LdpcCode::load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("ldpc load_json: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
    return from_rows(j.at("n").get<int>(),
                     j.at("rows").get<std::vector<std::vector<int>>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("ldpc load_json: ") + e.what());
  }
}

void LdpcCode::save_json(const std::string& path) const {
  nlohmann::json j;
  j["n"] = n;
  j["rows"] = rows;
  std::ofstream f(path);
  if (!f) throw FormatError("ldpc save_json: cannot open " + path);
  f << j.dump();
}

std::vector<int> ldpc_encode(const std::vector<int>& info, const LdpcCode& code) {
  if (info.size() != static_cast<size_t>(code.k()))
    throw ShapeError("ldpc_encode: info length mismatch");
  std::vector<int> cw(code.n, 0);
  for (size_t i = 0; i < info.size(); ++i) cw[code.info_pos[i]] = info[i] & 1;
  for (int r = 0; r < code.m; ++r) {
    int p = 0;
    for (int v : code.parity_deps[r]) p ^= cw[v];
    cw[code.parity_pos[r]] = p;
  }
  return cw;
}

DecodeResult ldpc_decode(const std::vector<double>& llr, const LdpcCode& code,
                         int max_iters, double normalization) {
  if (llr.size() != static_cast<size_t>(code.n))
    throw ShapeError("ldpc_decode: llr length mismatch");
  // internal convention: positive channel value means bit 0
  std::vector<double> ch(code.n);
  for (int v = 0; v < code.n; ++v) ch[v] = -llr[v];

  // edge storage aligned with rows
  std::vector<std::vector<double>> r2v(code.m);  // check-to-variable
  for (int r = 0; r < code.m; ++r) r2v[r].assign(code.rows[r].size(), 0.0);

  DecodeResult res;
  res.bits.assign(code.n, 0);
  std::vector<double> total(code.n);
  for (int it = 1; it <= max_iters; ++it) {
    // variable beliefs from the previous check messages
    total = ch;
    for (int r = 0; r < code.m; ++r)
      for (size_t e = 0; e < code.rows[r].size(); ++e)
        total[code.rows[r][e]] += r2v[r][e];

    // check update on extrinsic inputs (total minus own previous message)
    for (int r = 0; r < code.m; ++r) {
      const auto& row = code.rows[r];
      int sign = 0;
      double min1 = 1e300, min2 = 1e300;
      size_t arg1 = 0;
      for (size_t e = 0; e < row.size(); ++e) {
        double q = total[row[e]] - r2v[r][e];
        if (q < 0) sign ^= 1;
        double a = std::abs(q);
        if (a < min1) {
          min2 = min1;
          min1 = a;
          arg1 = e;
        } else if (a < min2) {
          min2 = a;
        }
      }
      for (size_t e = 0; e < row.size(); ++e) {
        double q = total[row[e]] - r2v[r][e];
        int s = sign ^ (q < 0 ? 1 : 0);
        double mag = normalization * (e == arg1 ? min2 : min1);
        r2v[r][e] = s ? -mag : mag;
      }
    }

    total = ch;
    for (int r = 0; r < code.m; ++r)
      for (size_t e = 0; e < code.rows[r].size(); ++e)
        total[code.rows[r][e]] += r2v[r][e];
    bool decided = true;
    for (int v = 0; v < code.n; ++v) {
      res.bits[v] = total[v] < 0 ? 1 : 0;
      if (total[v] == 0.0) decided = false;  // zero belief carries no information
    }
    res.iterations = it;
    if (decided && code.syndrome_ok(res.bits)) {
      res.converged = true;
      return res;
    }
  }
  return res;
}

uint16_t crc16(const std::vector<int>& bits) {
  uint16_t crc = 0;
  for (int b : bits) {
    crc ^= static_cast<uint16_t>((b & 1) << 15);
    crc = (crc & 0x8000) ? static_cast<uint16_t>((crc << 1) ^ 0x1021)
                         : static_cast<uint16_t>(crc << 1);
  }
  return crc;
}

std::vector<int> crc_attach(const std::vector<int>& bits) {
  std::vector<int> out = bits;
  uint16_t c = crc16(bits);
  for (int i = 15; i >= 0; --i) out.push_back((c >> i) & 1);
  return out;
}

bool crc_check(const std::vector<int>& bits_with_crc) {
  if (bits_with_crc.size() < 16) return false;
  std::vector<int> msg(bits_with_crc.begin(), bits_with_crc.end() - 16);
  uint16_t c = crc16(msg);
  for (int i = 0; i < 16; ++i)
    if (bits_with_crc[bits_with_crc.size() - 16 + i] != ((c >> (15 - i)) & 1))
      return false;
  return true;
}

TransportBlock tb_encode(int total_bits, const LdpcCode& code, uint64_t seed) {
  if (total_bits < code.n)
    throw ShapeError("tb_encode: transport block shorter than one codeword");
  if (code.k() <= 16) throw ConfigError("tb_encode: code too short for CRC");
  TransportBlock tb;
  tb.codewords = total_bits / code.n;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> bit(0, 1);
  int per_cw = code.k() - 16;
  for (int c = 0; c < tb.codewords; ++c) {
    std::vector<int> info(per_cw);
    for (auto& b : info) b = bit(rng);
    tb.payload.insert(tb.payload.end(), info.begin(), info.end());
    auto cw = ldpc_encode(crc_attach(info), code);
    tb.bits.insert(tb.bits.end(), cw.begin(), cw.end());
  }
  while (tb.bits.size() < static_cast<size_t>(total_bits)) tb.bits.push_back(bit(rng));
  return tb;
}

TbDecodeResult tb_decode(const std::vector<double>& llr, const LdpcCode& code,
                         int max_iters, double normalization) {
  TbDecodeResult res;
  res.codewords = static_cast<int>(llr.size()) / code.n;
  if (res.codewords < 1) throw ShapeError("tb_decode: fewer LLRs than one codeword");
  res.ok = true;
  for (int c = 0; c < res.codewords; ++c) {
    std::vector<double> cw_llr(llr.begin() + static_cast<size_t>(c) * code.n,
                               llr.begin() + static_cast<size_t>(c + 1) * code.n);
    auto dec = ldpc_decode(cw_llr, code, max_iters, normalization);
    std::vector<int> info(code.k());
    for (int i = 0; i < code.k(); ++i) info[i] = dec.bits[code.info_pos[i]];
    bool ok = dec.converged && crc_check(info);
    if (!ok) {
      res.ok = false;
      ++res.failed;
    }
    res.payload.insert(res.payload.end(), info.begin(), info.end() - 16);
  }
  return res;
}

}  // namespace mdx::fec
