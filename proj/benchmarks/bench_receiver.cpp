#include <benchmark/benchmark.h>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "mdx/channel.hpp"
#include "mdx/fec.hpp"
#include "mdx/grid.hpp"
#include "mdx/model.hpp"
#include "mdx/rx.hpp"
#include "mdx/trainer.hpp"

using namespace mdx;
using cd = std::complex<double>;

namespace {

struct Tti {
  phy::GridLayout layout;
  phy::ResourceGrid grid;
  chan::ChannelRealization ch;
  std::vector<cd> y;
  std::vector<std::vector<cd>> pilots;
};

Tti make_tti(int prbs, int n_tx, int n_rx, int bits, double snr_db,
             uint64_t seed) {
  Tti t;
  t.layout = phy::build_grid_layout(prbs, n_tx);
  t.grid = phy::random_grid(t.layout, phy::Constellation::qam(bits), seed);
  t.ch = chan::block_fading_channel(t.layout.F, t.layout.S, n_rx, n_tx, snr_db,
                                    seed + 1);
  t.y = chan::apply_channel(t.grid, t.ch, seed + 2);
  for (int l = 0; l < n_tx; ++l)
    t.pilots.push_back(phy::generate_dmrs(l, t.layout, seed));
  return t;
}

}  // namespace

static void BM_baseline_ls_lmmse(benchmark::State& state) {
  int prbs = static_cast<int>(state.range(0));
  auto t = make_tti(prbs, 2, 4, 2, 10.0, 1);
  const auto& c = phy::Constellation::qam(2);
  for (auto _ : state) {
    auto llr = rx::run_baseline(rx::BaselineKind::LS_LMMSE, t.y, t.pilots,
                                nullptr, t.layout, 4, t.ch.N0, c);
    benchmark::DoNotOptimize(llr.llr.value().data());
  }
  state.SetItemsProcessed(state.iterations() * t.layout.n_re());
}
BENCHMARK(BM_baseline_ls_lmmse)->Arg(1)->Arg(4)->Arg(16);

static void BM_mdx_inference(benchmark::State& state) {
  int prbs = static_cast<int>(state.range(0));
  auto t = make_tti(prbs, 2, 4, 2, 10.0, 1);
  auto params = model::init_params(model::MdxConfig{}, 7);
  const auto& c = phy::Constellation::qam(2);
  for (auto _ : state) {
    auto out = model::mdx_forward(t.y, t.pilots, t.layout, 4, t.ch.N0, params,
                                  c, false);
    benchmark::DoNotOptimize(out.llr_final.llr.value().data());
  }
  state.SetItemsProcessed(state.iterations() * t.layout.n_re());
}
BENCHMARK(BM_mdx_inference)->Arg(1)->Arg(4)->Arg(16);

static void BM_mdx_train_step(benchmark::State& state) {
  auto t = make_tti(1, 2, 4, 2, 10.0, 1);
  auto params = model::init_params(model::MdxConfig{}, 7);
  ad::Adam opt(1e-3);
  const auto& c = phy::Constellation::qam(2);
  for (auto _ : state) {
    auto out = model::mdx_forward(t.y, t.pilots, t.layout, 4, t.ch.N0, params,
                                  c, true);
    auto loss = ad::add(
        ad::add(train::bce_loss(out.llr_final, t.grid.payload_bits),
                train::bce_loss(out.llr_intermediate, t.grid.payload_bits)),
        ad::scale(train::mse_loss(out.h_nn, t.ch, t.layout), 0.01));
    ad::backward(loss);
    opt.step(params.learnables());
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_mdx_train_step);

static void BM_ldpc_decode(benchmark::State& state) {
  auto code = fec::LdpcCode::peg(1024, 3, 6, 1);
  auto tb = fec::tb_encode(1024, code, 5);
  std::vector<double> llr(tb.bits.size());
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  double snr = 2.0;  // moderate noise so the decoder actually iterates
  for (size_t i = 0; i < llr.size(); ++i) {
    double x = tb.bits[i] ? 1.0 : -1.0;
    llr[i] = 2.0 * snr * (x + g(rng) / std::sqrt(snr));
  }
  for (auto _ : state) {
    auto res = fec::ldpc_decode(llr, code);
    benchmark::DoNotOptimize(res.bits.data());
  }
  state.SetItemsProcessed(state.iterations() * code.n);
}
BENCHMARK(BM_ldpc_decode);

BENCHMARK_MAIN();
