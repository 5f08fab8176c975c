#include "mdx/rx.hpp"

#include <algorithm>
#include <cmath>

namespace mdx::rx {

using ad::Node;
using ad::Shape;

namespace {

// despread estimate for one CDM pair: average of the two per-RE LS values
cd despread_pair(const std::vector<cd>& y, const std::vector<cd>& pil,
                 const phy::GridLayout& g, int layer, size_t pair_idx, int r,
                 int n_rx) {
  cd acc(0.0, 0.0);
  for (int j = 0; j < 2; ++j) {
    const auto& pos = g.pilot_sets[layer][2 * pair_idx + j];
    cd p = pil[2 * pair_idx + j];
    double p2 = std::norm(p);
    if (p2 <= 0.0) throw NumericalError("pa_ls_estimate: zero pilot magnitude");
    cd yv = y[static_cast<size_t>(g.re_index(pos.f, pos.s)) * n_rx + r];
    acc += std::conj(p) * yv / p2;
  }
  return acc * 0.5;
}

std::vector<int> sorted_dmrs(const phy::GridLayout& g) {
  auto d = g.dmrs_symbols;
  std::sort(d.begin(), d.end());
  return d;
}

std::vector<int> psi_index_map(const phy::GridLayout& g) {
  std::vector<int> idx(static_cast<size_t>(g.n_re()));
  for (int f = 0; f < g.F; ++f)
    for (int s = 0; s < g.S; ++s) idx[g.re_index(f, s)] = (f % 12) * g.S + s;
  return idx;
}

}  // namespace

ChannelEstimate ChannelEstimate::from_realization(const chan::ChannelRealization& h) {
  ChannelEstimate e;
  e.F = h.F;
  e.S = h.S;
  e.n_rx = h.n_rx;
  e.n_tx = h.n_tx;
  e.source = EstimateSource::PERFECT;
  e.H = h.H;
  return e;
}

ChannelEstimate pa_ls_estimate(const std::vector<cd>& y,
                               const std::vector<std::vector<cd>>& pilots,
                               const phy::GridLayout& layout, int n_rx) {
  if (y.size() != static_cast<size_t>(layout.n_re()) * n_rx)
    throw ShapeError("pa_ls_estimate: received grid size mismatch");
  if (pilots.size() != static_cast<size_t>(layout.n_layers))
    throw ShapeError("pa_ls_estimate: pilot layer count mismatch");
  ChannelEstimate e;
  e.F = layout.F;
  e.S = layout.S;
  e.n_rx = n_rx;
  e.n_tx = layout.n_layers;
  e.source = EstimateSource::PA_LS;
  e.H.assign(static_cast<size_t>(layout.n_re()) * n_rx * e.n_tx, cd(0.0, 0.0));
  for (int n = 0; n < layout.n_layers; ++n) {
    for (size_t q = 0; q < layout.pilot_pairs[n].size(); ++q) {
      const auto& a = layout.pilot_sets[n][2 * q];
      const auto& b = layout.pilot_sets[n][2 * q + 1];
      for (int r = 0; r < n_rx; ++r) {
        cd h = despread_pair(y, pilots[n], layout, n, q, r, n_rx);
        e.at(a.f, a.s, r, n) = h;
        e.at(b.f, b.s, r, n) = h;
      }
    }
  }
  return e;
}

ChannelEstimate interpolate_to_grid(const ChannelEstimate& pilot_est,
                                    const phy::GridLayout& layout) {
  ChannelEstimate e = pilot_est;
  auto dmrs = sorted_dmrs(layout);
  for (int n = 0; n < layout.n_layers; ++n) {
    int off = layout.cdm[n].group;
    for (int f = 0; f < layout.F; ++f) {
      // nearest CDM pair in frequency: the 4-subcarrier cell containing f
      int prb = f / 12;
      int cell = (f % 12) / 4;
      int fp = prb * 12 + 4 * cell + off;
      for (int r = 0; r < e.n_rx; ++r) {
        for (size_t d = 0; d + 1 < dmrs.size(); ++d) {
          cd h0 = pilot_est.at(fp, dmrs[d], r, n);
          cd h1 = pilot_est.at(fp, dmrs[d + 1], r, n);
          for (int s = dmrs[d]; s <= dmrs[d + 1]; ++s) {
            double w = static_cast<double>(s - dmrs[d]) / (dmrs[d + 1] - dmrs[d]);
            e.at(f, s, r, n) = h0 * (1.0 - w) + h1 * w;
          }
        }
        for (int s = 0; s < dmrs.front(); ++s)
          e.at(f, s, r, n) = pilot_est.at(fp, dmrs.front(), r, n);
        for (int s = dmrs.back() + 1; s < layout.S; ++s)
          e.at(f, s, r, n) = pilot_est.at(fp, dmrs.back(), r, n);
        if (dmrs.size() == 1)
          for (int s = 0; s < layout.S; ++s)
            e.at(f, s, r, n) = pilot_est.at(fp, dmrs.front(), r, n);
      }
    }
  }
  return e;
}

double estimate_noise_variance(const std::vector<cd>& y,
                               const std::vector<std::vector<cd>>& pilots,
                               const phy::GridLayout& layout, int n_rx,
                               std::optional<double> genie_n0) {
  if (genie_n0) return *genie_n0;
  if (y.size() != static_cast<size_t>(layout.n_re()) * n_rx)
    throw ShapeError("estimate_noise_variance: received grid size mismatch");

  // layers per CDM group
  int n_groups = 0;
  for (const auto& a : layout.cdm) n_groups = std::max(n_groups, a.group + 1);
  std::vector<std::vector<int>> group_layers(n_groups);
  for (int n = 0; n < layout.n_layers; ++n)
    group_layers[layout.cdm[n].group].push_back(n);

  double acc = 0.0;
  long count = 0;
  bool any_half = false;
  for (const auto& gl : group_layers) any_half |= gl.size() == 1;

  if (any_half) {
    // unused OCC branch of half-loaded groups carries noise only
    for (const auto& gl : group_layers) {
      if (gl.size() != 1) continue;
      int n = gl[0];
      for (size_t q = 0; q < layout.pilot_pairs[n].size(); ++q) {
        const auto& a = layout.pilot_sets[n][2 * q];
        const auto& b = layout.pilot_sets[n][2 * q + 1];
        for (int r = 0; r < n_rx; ++r) {
          cd ya = y[static_cast<size_t>(layout.re_index(a.f, a.s)) * n_rx + r];
          cd yb = y[static_cast<size_t>(layout.re_index(b.f, b.s)) * n_rx + r];
          cd pa = pilots[n][2 * q];
          cd pb = pilots[n][2 * q + 1];
          if (std::norm(pa) <= 0.0 || std::norm(pb) <= 0.0)
            throw NumericalError("estimate_noise_variance: zero pilot magnitude");
          cd u = 0.5 * (std::conj(pa) * ya / std::norm(pa) -
                        std::conj(pb) * yb / std::norm(pb));
          acc += 2.0 * std::norm(u);
          ++count;
        }
      }
    }
  } else {
    // fully loaded: despread differences across adjacent pairs of one layer
    // per group cancel the (assumed frequency-flat) channel
    for (const auto& gl : group_layers) {
      if (gl.empty()) continue;
      int n = gl[0];
      size_t pairs_per_sym = static_cast<size_t>(layout.num_prbs) * 3;
      for (size_t base = 0; base + pairs_per_sym <= layout.pilot_pairs[n].size();
           base += pairs_per_sym) {
        for (size_t q = base; q + 1 < base + pairs_per_sym; ++q) {
          // stay within one PRB so the flatness assumption is local
          if (layout.pilot_sets[n][2 * q].f / 12 !=
              layout.pilot_sets[n][2 * (q + 1)].f / 12)
            continue;
          for (int r = 0; r < n_rx; ++r) {
            cd e0 = despread_pair(y, pilots[n], layout, n, q, r, n_rx);
            cd e1 = despread_pair(y, pilots[n], layout, n, q + 1, r, n_rx);
            acc += std::norm(e1 - e0);
            ++count;
          }
        }
      }
    }
  }
  if (count == 0) throw ConfigError("estimate_noise_variance: insufficient pilots");
  return acc / count;
}

EqualizerOutput lmmse_equalize(const ComplexPair& H, const ComplexPair& Y,
                               double sigma2, const Tensor& psi,
                               const phy::GridLayout& layout) {
  const Shape& sh = H.shape();
  if (sh.size() != 3) throw ShapeError("lmmse_equalize: H must be [n_re,n_rx,n_tx]");
  int n_re = sh[0], n_rx = sh[1], n_tx = sh[2];
  if (n_re != layout.n_re()) throw ShapeError("lmmse_equalize: RE count mismatch");
  if (Y.shape() != Shape{n_re, n_rx, 1})
    throw ShapeError("lmmse_equalize: Y must be [n_re,n_rx,1]");
  if (sigma2 < 0.0) throw ConfigError("lmmse_equalize: negative noise variance");

  ComplexPair Hh = ad::cherm(H);
  ComplexPair A = ad::cbmm(Hh, H);  // [n_re,n_tx,n_tx]

  Tensor psi_re;  // [n_re,1,1]
  if (psi.defined()) {
    if (psi.shape() != Shape{12, layout.S})
      throw ShapeError("lmmse_equalize: psi must be 12x14");
    psi_re = ad::reshape(ad::gather0(ad::reshape(psi, {12 * layout.S}),
                                     psi_index_map(layout)),
                         {n_re, 1, 1});
  } else {
    psi_re = Tensor::full({n_re, 1, 1}, 1.0);
  }
  Tensor sigma_adj = ad::scale(psi_re, sigma2);  // [n_re,1,1]

  std::vector<double> eye_v(static_cast<size_t>(n_tx) * n_tx, 0.0);
  for (int i = 0; i < n_tx; ++i) eye_v[i * n_tx + i] = 1.0;
  Tensor eye = Tensor::from_data({n_tx, n_tx}, eye_v);

  ComplexPair Areg{ad::add(A.re, ad::mul(sigma_adj, eye)), A.im};

  // one batched solve for both A^{-1}H^H y and A^{-1}
  ComplexPair HhY = ad::cbmm(Hh, Y);  // [n_re,n_tx,1]
  std::vector<double> eye_b(static_cast<size_t>(n_re) * n_tx * n_tx);
  for (int q = 0; q < n_re; ++q)
    std::copy(eye_v.begin(), eye_v.end(), eye_b.begin() + static_cast<size_t>(q) * n_tx * n_tx);
  ComplexPair eyeg{Tensor::from_data({n_re, n_tx, n_tx}, eye_b),
                   Tensor::zeros({n_re, n_tx, n_tx})};
  ComplexPair B = ad::cconcat_last({HhY, eyeg});
  ComplexPair sol = ad::hermitian_solve(Areg, B);  // [n_re,n_tx,1+n_tx]
  ComplexPair X = ad::cslice_last(sol, 0, 1);
  ComplexPair Ainv = ad::cslice_last(sol, 1, n_tx);

  Tensor diag = ad::take_diag(Ainv.re);                     // [n_re,n_tx]
  Tensor sa2 = ad::reshape(sigma_adj, {n_re, 1});           // broadcasts over n_tx
  Tensor d = ad::add_const(ad::scale(ad::mul(sa2, diag), -1.0), 1.0);

  EqualizerOutput out;
  out.x_hat = {ad::div(ad::reshape(X.re, {n_re, n_tx}), d),
               ad::div(ad::reshape(X.im, {n_re, n_tx}), d)};
  out.sigma_res = ad::add_const(ad::div(Tensor::full({1}, 1.0), d), -1.0);
  return out;
}

LlrGrid max_log_demap(const ComplexPair& x_hat, const Tensor& sigma_res,
                      const phy::Constellation& c, const Tensor& gamma,
                      const Tensor& phi, const phy::GridLayout& layout) {
  const Shape& sx = x_hat.shape();
  if (sx.size() != 2 || sx[0] != layout.n_re())
    throw ShapeError("max_log_demap: x_hat must be [n_re,n_tx]");
  if (sigma_res.shape() != sx) throw ShapeError("max_log_demap: sigma shape mismatch");
  int n_tx = sx[1];

  auto data_idx = layout.data_indices();
  int n_data = static_cast<int>(data_idx.size());
  LlrGrid out;
  out.res = data_idx;
  out.bits = c.bits;
  if (n_data == 0) {
    out.llr = Tensor::zeros({0, n_tx, c.bits});
    return out;
  }

  ComplexPair xd = ad::cgather0(x_hat, data_idx);  // [n_data,n_tx]
  Tensor sd = ad::gather0(sigma_res, data_idx);

  Tensor v = sd;
  if (phi.defined()) {
    if (phi.shape() != Shape{12, layout.S})
      throw ShapeError("max_log_demap: phi must be 12x14");
    auto full_map = psi_index_map(layout);
    std::vector<int> dmap(n_data);
    for (int i = 0; i < n_data; ++i) dmap[i] = full_map[data_idx[i]];
    Tensor phi_d = ad::reshape(ad::gather0(ad::reshape(phi, {12 * layout.S}), dmap),
                               {n_data, 1});
    v = ad::mul(v, phi_d);
  }
  if (gamma.defined()) v = ad::mul(v, gamma);
  v = ad::clamp(v, 1e-12, 1e30);

  // custom node: per (RE, layer, bit) max-log LLR with subgradients through
  // the two selected constellation points
  auto xr = xd.re.node();
  auto xi = xd.im.node();
  auto vn = v.node();
  int B = c.bits;
  int64_t nel = static_cast<int64_t>(n_data) * n_tx;

  auto node = std::make_shared<Node>();
  node->shape = {n_data, n_tx, B};
  node->value.resize(nel * B);
  auto sel = std::make_shared<std::vector<int>>(nel * B * 2);
  for (int64_t e = 0; e < nel; ++e) {
    cd x(xr->value[e], xi->value[e]);
    for (int b = 0; b < B; ++b) {
      double dmin[2] = {1e300, 1e300};
      int amin[2] = {0, 0};
      for (int t = 0; t < 2; ++t)
        for (int label : c.sets[b][t]) {
          double dd = std::norm(x - c.points[label]);
          if (dd < dmin[t]) {
            dmin[t] = dd;
            amin[t] = label;
          }
        }
      node->value[e * B + b] = (dmin[0] - dmin[1]) / vn->value[e];
      (*sel)[(e * B + b) * 2] = amin[0];
      (*sel)[(e * B + b) * 2 + 1] = amin[1];
    }
  }
  bool rg = xr->requires_grad || xi->requires_grad || vn->requires_grad;
  if (rg) {
    node->requires_grad = true;
    node->parents = {xr, xi, vn};
    const auto& pts = c.points;
    node->backprop = [xr, xi, vn, sel, B, nel, pts](Node& self) {
      if (xr->requires_grad) xr->ensure_grad();
      if (xi->requires_grad) xi->ensure_grad();
      if (vn->requires_grad) vn->ensure_grad();
      for (int64_t e = 0; e < nel; ++e) {
        cd x(xr->value[e], xi->value[e]);
        double vv = vn->value[e];
        for (int b = 0; b < B; ++b) {
          double g = self.grad[e * B + b];
          if (g == 0.0) continue;
          cd x0 = pts[(*sel)[(e * B + b) * 2]];
          cd x1 = pts[(*sel)[(e * B + b) * 2 + 1]];
          double l = self.value[e * B + b];
          if (xr->requires_grad) xr->grad[e] += g * 2.0 * (x1.real() - x0.real()) / vv;
          if (xi->requires_grad) xi->grad[e] += g * 2.0 * (x1.imag() - x0.imag()) / vv;
          if (vn->requires_grad) vn->grad[e] += -g * l / vv;
        }
      }
    };
  }
  // clip for numerical stability downstream (loss and decoder inputs)
  out.llr = ad::clamp(Tensor(node), -20.0, 20.0);
  return out;
}

ComplexPair estimate_to_graph(const ChannelEstimate& est) {
  int n_re = est.F * est.S;
  std::vector<double> re(est.H.size()), im(est.H.size());
  for (size_t i = 0; i < est.H.size(); ++i) {
    re[i] = est.H[i].real();
    im[i] = est.H[i].imag();
  }
  return {Tensor::from_data({n_re, est.n_rx, est.n_tx}, std::move(re)),
          Tensor::from_data({n_re, est.n_rx, est.n_tx}, std::move(im))};
}

ComplexPair received_to_graph(const std::vector<cd>& y, int n_re, int n_rx) {
  if (y.size() != static_cast<size_t>(n_re) * n_rx)
    throw ShapeError("received_to_graph: size mismatch");
  std::vector<double> re(y.size()), im(y.size());
  for (size_t i = 0; i < y.size(); ++i) {
    re[i] = y[i].real();
    im[i] = y[i].imag();
  }
  return {Tensor::from_data({n_re, n_rx, 1}, std::move(re)),
          Tensor::from_data({n_re, n_rx, 1}, std::move(im))};
}

LlrGrid run_baseline(BaselineKind kind, const std::vector<cd>& y,
                     const std::vector<std::vector<cd>>& pilots,
                     const ChannelEstimate* true_h, const phy::GridLayout& layout,
                     int n_rx, double sigma2, const phy::Constellation& c) {
  ChannelEstimate est;
  if (kind == BaselineKind::PERFECT_CSI_LMMSE) {
    if (!true_h) throw ConfigError("run_baseline: perfect CSI requires the true channel");
    est = *true_h;
  } else {
    est = interpolate_to_grid(pa_ls_estimate(y, pilots, layout, n_rx), layout);
  }
  ComplexPair Hg = estimate_to_graph(est);
  ComplexPair Yg = received_to_graph(y, layout.n_re(), n_rx);
  auto eq = lmmse_equalize(Hg, Yg, sigma2, Tensor(), layout);
  return max_log_demap(eq.x_hat, eq.sigma_res, c, Tensor(), Tensor(), layout);
}

}  // namespace mdx::rx
