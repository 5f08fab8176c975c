#include "mdx/model.hpp"

#include <cmath>
#include <random>

namespace mdx::model {

namespace {

Tensor ones_12x14() { return Tensor::param({12, 14}, std::vector<double>(168, 1.0)); }

Tensor uniform_param(const ad::Shape& s, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  int64_t n = 1;
  for (int d : s) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor::param(s, v);
}

ConvHead make_head(int k, int cin, int cout, std::mt19937_64& rng) {
  ConvHead h;
  h.dw = uniform_param({k, k, cin}, 1.0 / std::sqrt(static_cast<double>(k) * k), rng);
  h.pw = uniform_param({cin, cout}, 1.0 / std::sqrt(static_cast<double>(cin)), rng);
  h.bias = Tensor::param({cout}, std::vector<double>(cout, 0.0));
  return h;
}

// (f,s) -> per-PRB lookup index used by the tiled 12x14 parameters
std::vector<int> prb_tile_map(const phy::GridLayout& g) {
  std::vector<int> idx(static_cast<size_t>(g.n_re()));
  for (int f = 0; f < g.F; ++f)
    for (int s = 0; s < g.S; ++s) idx[g.re_index(f, s)] = (f % 12) * g.S + s;
  return idx;
}

// [n_re,n_rx,n_tx] complex -> [L,F,S,2] real channels, L = n_rx*n_tx
Tensor grid_to_links(const ComplexPair& x, int F, int S, int n_rx, int n_tx) {
  int L = n_rx * n_tx;
  auto part = [&](const Tensor& t) {
    return ad::reshape(ad::permute(t, {1, 2, 0}), {L, F, S, 1});
  };
  return ad::concat_channels({part(x.re), part(x.im)});
}

ComplexPair links_to_grid(const Tensor& a, int F, int S, int n_rx, int n_tx) {
  auto part = [&](int ch) {
    Tensor t = ad::slice_last(a, ch, 1);  // [L,F,S,1]
    return ad::permute(ad::reshape(t, {n_rx, n_tx, F * S}), {2, 0, 1});
  };
  return {part(0), part(1)};
}

}  // namespace

int gamma_index(int bits) {
  switch (bits) {
    case 2: return 0;
    case 4: return 1;
    case 6: return 2;
  }
  throw ConfigError("gamma_index: unsupported modulation order");
}

MdxParams init_params(const MdxConfig& cfg, uint64_t seed) {
  if (cfg.n_blocks < 1 || cfg.filters < 1 || cfg.kernel < 1)
    throw ConfigError("init_params: bad architecture config");
  std::mt19937_64 rng(seed);
  MdxParams p;
  p.cfg = cfg;
  p.psi_dals = ones_12x14();
  p.psi_d = ones_12x14();
  p.phi = ones_12x14();
  p.gamma = Tensor::param({3}, {1.0, 1.0, 1.0});
  for (int l = 0; l < cfg.n_blocks; ++l) {
    ResBlockParams b;
    b.bn_gamma = Tensor::param({4}, std::vector<double>(4, 1.0));
    b.bn_beta = Tensor::param({4}, std::vector<double>(4, 0.0));
    b.bn_state.running_mean.assign(4, 0.0);
    b.bn_state.running_var.assign(4, 1.0);
    b.bn_state.initialized = true;
    b.trunk = make_head(cfg.kernel, 8, cfg.filters, rng);
    b.a_head = make_head(cfg.kernel, cfg.filters, 2, rng);
    if (l + 1 < cfg.n_blocks) b.b_head = make_head(cfg.kernel, cfg.filters, 2, rng);
    b.gamma_l = Tensor::param({12, 14}, std::vector<double>(168, 0.0));
    p.blocks.push_back(std::move(b));
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> MdxParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out = {
      {"psi_dals", psi_dals}, {"psi_d", psi_d}, {"phi", phi}, {"gamma", gamma}};
  for (size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    std::string pre = "block" + std::to_string(l) + ".";
    out.emplace_back(pre + "bn_gamma", b.bn_gamma);
    out.emplace_back(pre + "bn_beta", b.bn_beta);
    out.emplace_back(pre + "trunk.dw", b.trunk.dw);
    out.emplace_back(pre + "trunk.pw", b.trunk.pw);
    out.emplace_back(pre + "trunk.bias", b.trunk.bias);
    out.emplace_back(pre + "a_head.dw", b.a_head.dw);
    out.emplace_back(pre + "a_head.pw", b.a_head.pw);
    out.emplace_back(pre + "a_head.bias", b.a_head.bias);
    if (b.b_head.dw.defined()) {
      out.emplace_back(pre + "b_head.dw", b.b_head.dw);
      out.emplace_back(pre + "b_head.pw", b.b_head.pw);
      out.emplace_back(pre + "b_head.bias", b.b_head.bias);
    }
    out.emplace_back(pre + "gamma_l", b.gamma_l);
  }
  return out;
}

std::vector<Tensor> MdxParams::learnables() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

int64_t parameter_count(const MdxParams& p) {
  int64_t n = 0;
  for (auto& [name, t] : p.named()) n += t.size();
  return n;
}

Tensor positional_encoding(const phy::GridLayout& layout, int layer,
                           const MdxConfig& cfg) {
  if (layout.dmrs_symbols.empty())
    throw ConfigError("positional_encoding: no DMRS symbols");
  if (layer < 0 || layer >= layout.n_layers)
    throw ConfigError("positional_encoding: layer out of range");
  int S = layout.S;
  int off = layout.cdm[layer].group;
  std::vector<double> v(static_cast<size_t>(12) * S * 4);
  for (int f = 0; f < 12; ++f) {
    int df = 12;
    for (int fp = off; fp < 12; fp += 2) df = std::min(df, std::abs(f - fp));
    for (int s = 0; s < S; ++s) {
      int ds = S;
      for (int sp : layout.dmrs_symbols) ds = std::min(ds, std::abs(s - sp));
      double* e = &v[(static_cast<size_t>(f) * S + s) * 4];
      e[0] = df / cfg.pe_freq_norm;
      e[1] = ds / cfg.pe_time_norm;
      e[2] = (f + 1) / 12.0;
      e[3] = (s + 1) / static_cast<double>(S);
    }
  }
  return Tensor::from_data({12, S, 4}, std::move(v));
}

rx::EqualizerOutput dals_equalize(const ComplexPair& H_pals, const ComplexPair& Y,
                                  double sigma2, const MdxParams& params,
                                  const phy::GridLayout& layout) {
  return rx::lmmse_equalize(H_pals, Y, sigma2, params.psi_dals, layout);
}

ComplexPair da_ls_estimate(const ComplexPair& H_pals, const ComplexPair& x_dals,
                           const ComplexPair& Y, const phy::GridLayout& layout) {
  const ad::Shape& sh = H_pals.shape();
  if (sh.size() != 3) throw ShapeError("da_ls_estimate: H must be [n_re,n_rx,n_tx]");
  int n_re = sh[0], n_tx = sh[2];
  if (x_dals.shape() != ad::Shape{n_re, n_tx})
    throw ShapeError("da_ls_estimate: x_dals must be [n_re,n_tx]");

  ComplexPair xs = ad::creshape(x_dals, {n_re, n_tx, 1});
  ComplexPair P = ad::cbmm(H_pals, xs);  // [n_re,n_rx,1]
  ComplexPair resid0 = ad::csub(Y, P);

  std::vector<ComplexPair> cols;
  for (int n = 0; n < n_tx; ++n) {
    ComplexPair hn = ad::cslice_last(H_pals, n, 1);               // [n_re,n_rx,1]
    ComplexPair xn = ad::creshape(ad::cslice_last(x_dals, n, 1),  // [n_re,1,1]
                                  {n_re, 1, 1});
    // add back this layer's own contribution, then LS-scale by conj(x_n)
    ComplexPair resid_n = ad::cadd(resid0, ad::cmul(hn, xn));
    cols.push_back(ad::cmul(resid_n, ad::conj(xn)));
  }
  ComplexPair hd = ad::cconcat_last(cols);  // [n_re,n_rx,n_tx]

  // Eq-style data-aided values exist on data REs only; keep PA-LS elsewhere
  std::vector<double> mask_v(static_cast<size_t>(n_re), 0.0);
  for (int idx : layout.data_indices()) mask_v[idx] = 1.0;
  std::vector<double> inv_v(mask_v);
  for (auto& m : inv_v) m = 1.0 - m;
  Tensor mask = Tensor::from_data({n_re, 1, 1}, std::move(mask_v));
  Tensor inv = Tensor::from_data({n_re, 1, 1}, std::move(inv_v));
  return ad::cadd(ad::cmul_real(hd, mask), ad::cmul_real(H_pals, inv));
}

ComplexPair resblocks_forward(const ComplexPair& H_pals, const ComplexPair& H_dals,
                              const phy::GridLayout& layout, MdxParams& params,
                              bool train) {
  const ad::Shape& sh = H_pals.shape();
  if (sh.size() != 3 || sh[0] != layout.n_re())
    throw ShapeError("resblocks_forward: H must be [n_re,n_rx,n_tx]");
  if (H_dals.shape() != sh) throw ShapeError("resblocks_forward: estimate shapes differ");
  if (layout.F % 12 != 0) throw ShapeError("resblocks_forward: F must tile by PRB");
  int F = layout.F, S = layout.S, n_rx = sh[1], n_tx = sh[2];
  int L = n_rx * n_tx;
  int prbs = F / 12;

  Tensor A = grid_to_links(H_pals, F, S, n_rx, n_tx);  // [L,F,S,2]
  Tensor B = grid_to_links(H_dals, F, S, n_rx, n_tx);

  // positional encoding per link (depends on the tx layer only), PRB-tiled
  std::vector<double> pe_v(static_cast<size_t>(L) * F * S * 4);
  for (int t = 0; t < n_tx; ++t) {
    Tensor pe = positional_encoding(layout, t, params.cfg);
    for (int r = 0; r < n_rx; ++r) {
      int l = r * n_tx + t;
      for (int f = 0; f < F; ++f)
        for (int s = 0; s < S; ++s)
          for (int ch = 0; ch < 4; ++ch)
            pe_v[((static_cast<size_t>(l) * F + f) * S + s) * 4 + ch] =
                pe.value()[(static_cast<size_t>(f % 12) * S + s) * 4 + ch];
    }
  }
  Tensor PE = Tensor::from_data({L, F, S, 4}, std::move(pe_v));

  auto tile_map = prb_tile_map(layout);
  (void)prbs;
  for (size_t l = 0; l < params.blocks.size(); ++l) {
    auto& b = params.blocks[l];
    Tensor z = ad::concat_channels({A, B});  // [L,F,S,4]
    z = ad::batch_norm(z, b.bn_gamma, b.bn_beta, &b.bn_state, train);
    z = ad::relu(z);
    Tensor x0 = ad::concat_channels({z, PE});  // [L,F,S,8]
    Tensor x = ad::relu(ad::conv2d_separable(x0, b.trunk.dw, b.trunk.pw, b.trunk.bias));
    Tensor upd_a = ad::conv2d_separable(x, b.a_head.dw, b.a_head.pw, b.a_head.bias);
    Tensor gl = ad::reshape(
        ad::gather0(ad::reshape(b.gamma_l, {12 * S}), tile_map), {F, S, 1});
    A = ad::add(A, ad::mul(gl, upd_a));
    if (b.b_head.dw.defined()) {
      Tensor upd_b = ad::conv2d_separable(x, b.b_head.dw, b.b_head.pw, b.b_head.bias);
      B = ad::add(B, upd_b);
    }
  }
  return links_to_grid(A, F, S, n_rx, n_tx);
}

MdxOutput mdx_forward(const std::vector<cd>& y,
                      const std::vector<std::vector<cd>>& pilots,
                      const phy::GridLayout& layout, int n_rx, double sigma2,
                      MdxParams& params, const phy::Constellation& c, bool train) {
  MdxOutput out;
  out.h_pals =
      rx::interpolate_to_grid(rx::pa_ls_estimate(y, pilots, layout, n_rx), layout);
  ComplexPair Hp = rx::estimate_to_graph(out.h_pals);
  ComplexPair Yg = rx::received_to_graph(y, layout.n_re(), n_rx);

  out.dals = dals_equalize(Hp, Yg, sigma2, params, layout);
  ComplexPair Hd = da_ls_estimate(Hp, out.dals.x_hat, Yg, layout);
  out.h_nn = resblocks_forward(Hp, Hd, layout, params, train);

  auto eq = rx::lmmse_equalize(out.h_nn, Yg, sigma2, params.psi_d, layout);
  Tensor gm = ad::slice_last(params.gamma, gamma_index(c.bits), 1);
  out.llr_final = rx::max_log_demap(eq.x_hat, eq.sigma_res, c, gm, params.phi, layout);
  if (train)
    out.llr_intermediate = rx::max_log_demap(out.dals.x_hat, out.dals.sigma_res, c,
                                             Tensor(), Tensor(), layout);
  return out;
}

}  // namespace mdx::model
