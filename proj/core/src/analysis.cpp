#include "mdx/analysis.hpp"

#include <fstream>

namespace mdx::analysis {

namespace {

using cplx = std::complex<double>;

// counting primitives: complex*complex = 4 real mults, complex*real = 2,
// |z|^2 = 2, real*real = 1; additions, negations, and divisions are free
struct Counter {
  int64_t n = 0;
  cplx mul(cplx a, cplx b) {
    n += 4;
    return a * b;
  }
  cplx mulr(cplx a, double b) {
    n += 2;
    return a * b;
  }
  double abs2(cplx a) {
    n += 2;
    return a.real() * a.real() + a.imag() * a.imag();
  }
  double rmul(double a, double b) {
    n += 1;
    return a * b;
  }
};

}  // namespace

int64_t lmmse_mult_count(int n_tx, int n_r) {
  if (n_tx < 1 || n_r < 1) throw ConfigError("lmmse_mult_count: need n_tx, n_r >= 1");
  int64_t n = n_tx, r = n_r;
  return 2 * n * n * n + 6 * r * n * n + 6 * r * n - 2 * n + 2;
}

int64_t sepconv_mult_count(int k, int n0, int n, int F, int S) {
  if (k < 1 || n0 < 0 || n < 0 || F < 1 || S < 1)
    throw ConfigError("sepconv_mult_count: bad arguments");
  return static_cast<int64_t>(k) * k * n0 * F * S +
         static_cast<int64_t>(n0) * n * F * S;
}

ComplexityReport model_complexity(const model::MdxConfig& arch, int n_rx,
                                  int n_tx, int prbs, int bits) {
  ComplexityReport rep;
  rep.n_rx = n_rx;
  rep.n_tx = n_tx;
  rep.prbs = prbs;
  rep.kernel = arch.kernel;
  rep.filters = arch.filters;
  rep.bits = bits;

  int F = 12 * prbs, S = 14;
  int64_t n_re = static_cast<int64_t>(F) * S;
  int64_t n_data = static_cast<int64_t>(F) * (S - 2);

  // two equalization passes (data-aided and final) over every RE
  rep.lmmse = 2 * n_re * lmmse_mult_count(n_tx, n_rx);

  // per link: trunk over the 8 input maps (estimate pair + positional
  // encoding), then the refinement heads; the last block has no B head
  int64_t links = static_cast<int64_t>(n_rx) * n_tx;
  int64_t trunk = sepconv_mult_count(arch.kernel, 8, arch.filters, F, S);
  int64_t head = sepconv_mult_count(arch.kernel, arch.filters, 2, F, S);
  rep.resblocks =
      links * (arch.n_blocks * (trunk + head) + (arch.n_blocks - 1) * head);

  // 2^B squared distances per data RE per layer, 4 real mults each
  rep.demapper = n_data * n_tx * (int64_t{1} << bits) * 4;

  auto params = model::init_params(arch, 0);
  rep.param_count = model::parameter_count(params);
  return rep;
}

LmmseCounted lmmse_counted(const std::vector<cplx>& H, const std::vector<cplx>& y,
                           double sigma2, double psi, int n_r, int n_tx) {
  if (H.size() != static_cast<size_t>(n_r) * n_tx ||
      y.size() != static_cast<size_t>(n_r))
    throw ShapeError("lmmse_counted: H/y size mismatch");
  Counter c;
  auto h = [&](int r, int t) { return H[static_cast<size_t>(r) * n_tx + t]; };
  int N = n_tx, R = n_r;

  // diagonal loading: the regularizer enters as a complex-by-real product
  double reg = c.mulr(cplx(psi, 0.0), sigma2).real();

  // Gram matrix A = H^H H + reg I, upper triangle via Hermitian symmetry
  std::vector<cplx> A(static_cast<size_t>(N) * N, 0.0);
  for (int i = 0; i < N; ++i) {
    double d = reg;
    for (int r = 0; r < R; ++r) d += c.abs2(h(r, i));
    A[static_cast<size_t>(i) * N + i] = d;
    for (int j = i + 1; j < N; ++j) {
      cplx s = 0.0;
      for (int r = 0; r < R; ++r) s += c.mul(std::conj(h(r, i)), h(r, j));
      A[static_cast<size_t>(i) * N + j] = s;
      A[static_cast<size_t>(j) * N + i] = std::conj(s);
    }
  }

  // in-place Hermitian inversion via symmetric sweeps (the fully swept
  // matrix equals -A^{-1}); the diagonal update is kept as a full complex
  // product, its imaginary part vanishes analytically
  std::vector<cplx> B = A;
  auto at = [&](int i, int j) -> cplx& { return B[static_cast<size_t>(i) * N + j]; };
  for (int k = 0; k < N; ++k) {
    double p = at(k, k).real();
    if (p == 0.0) throw SingularError("lmmse_counted: zero pivot");
    double r = 1.0 / p;
    std::vector<cplx> cv(N);
    for (int i = 0; i < N; ++i)
      if (i != k) cv[i] = c.mulr(at(i, k), r);
    for (int i = 0; i < N; ++i) {
      if (i == k) continue;
      for (int j = i; j < N; ++j) {
        if (j == k) continue;
        cplx upd = c.mul(cv[i], std::conj(at(j, k)));
        at(i, j) -= upd;
        if (j != i) at(j, i) = std::conj(at(i, j));
      }
    }
    for (int i = 0; i < N; ++i)
      if (i != k) {
        at(i, k) = cv[i];
        at(k, i) = std::conj(cv[i]);
      }
    at(k, k) = -r;
  }
  for (auto& v : B) v = -v;

  // G = A^{-1} H^H, then x_hat = G y and the per-stream noise gain
  std::vector<cplx> G(static_cast<size_t>(N) * R, 0.0);
  for (int i = 0; i < N; ++i)
    for (int r = 0; r < R; ++r) {
      cplx s = 0.0;
      for (int j = 0; j < N; ++j)
        s += c.mul(at(i, j), std::conj(h(r, j)));
      G[static_cast<size_t>(i) * R + r] = s;
    }

  LmmseCounted out;
  out.x_hat.assign(N, 0.0);
  out.noise_gain.assign(N, 0.0);
  for (int i = 0; i < N; ++i) {
    cplx s = 0.0;
    double g = 0.0;
    for (int r = 0; r < R; ++r) {
      s += c.mul(G[static_cast<size_t>(i) * R + r], y[r]);
      g += c.abs2(G[static_cast<size_t>(i) * R + r]);
    }
    out.x_hat[i] = s;
    out.noise_gain[i] = g;
  }
  out.mults = c.n;
  return out;
}

void MetricAccumulator::add_bits(double snr_db, int64_t errors, int64_t total) {
  auto& b = buckets[snr_db];
  b.bit_errors += errors;
  b.n_bits += total;
}

void MetricAccumulator::add_block(double snr_db, bool error) {
  auto& b = buckets[snr_db];
  b.block_errors += error ? 1 : 0;
  b.n_blocks += 1;
}

void MetricAccumulator::add_slot(double snr_db) { buckets[snr_db].n_slots += 1; }

void MetricAccumulator::add_mse(double snr_db, double squared_error_sum,
                                int64_t count) {
  auto& b = buckets[snr_db];
  b.mse_sum += squared_error_sum;
  b.mse_count += count;
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
  for (const auto& [snr, ob] : other.buckets) {
    auto& b = buckets[snr];
    b.bit_errors += ob.bit_errors;
    b.n_bits += ob.n_bits;
    b.block_errors += ob.block_errors;
    b.n_blocks += ob.n_blocks;
    b.n_slots += ob.n_slots;
    b.mse_sum += ob.mse_sum;
    b.mse_count += ob.mse_count;
  }
}

std::vector<ReportRow> report(const MetricAccumulator& acc) {
  std::vector<ReportRow> rows;
  for (const auto& [snr, b] : acc.buckets) {
    if (b.n_bits == 0 && b.n_blocks == 0 && b.mse_count == 0) continue;
    ReportRow r;
    r.snr_db = snr;
    r.ber = b.n_bits ? static_cast<double>(b.bit_errors) / b.n_bits : 0.0;
    r.bler = b.n_blocks ? static_cast<double>(b.block_errors) / b.n_blocks : 0.0;
    r.ch_mse = b.mse_count ? b.mse_sum / b.mse_count : 0.0;
    r.n_bits = b.n_bits;
    r.n_blocks = b.n_blocks;
    r.n_slots = b.n_slots;
    rows.push_back(r);
  }
  return rows;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows,
                      const std::string& config_hash, uint64_t seed) {
  std::ofstream f(path);
  if (!f) throw FormatError("write_report_csv: cannot open " + path);
  f << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  f << "snr_db,ber,bler,ch_mse,n_bits,n_blocks,n_slots\n";
  f.precision(17);
  for (const auto& r : rows)
    f << r.snr_db << ',' << r.ber << ',' << r.bler << ',' << r.ch_mse << ','
      << r.n_bits << ',' << r.n_blocks << ',' << r.n_slots << "\n";
}

}  // namespace mdx::analysis
