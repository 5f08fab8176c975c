#include "doctest.h"
#include "mdx/channel.hpp"

#include <cmath>
#include <numeric>

using namespace mdx::chan;

namespace {
const TdlProfile& tdl_a() {
  static TdlProfile p = TdlProfile::load(std::string(MDX_DATA_DIR) + "/tdl_a.json");
  return p;
}
}  // namespace

TEST_CASE("TDL-A profile loads normalized and ascending") {
  const auto& p = tdl_a();
  CHECK(p.name == "TDL-A");
  CHECK(p.tap_delays.size() == 23);
  double sum = std::accumulate(p.tap_powers.begin(), p.tap_powers.end(), 0.0);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  for (size_t i = 1; i < p.tap_delays.size(); ++i)
    CHECK(p.tap_delays[i] >= p.tap_delays[i - 1]);
  for (double w : p.tap_powers) CHECK(w >= 0.0);
}

TEST_CASE("profile parser rejects malformed input") {
  CHECK_THROWS_AS(TdlProfile::parse("{not json"), mdx::FormatError);
  CHECK_THROWS_AS(TdlProfile::parse("{\"name\":\"x\"}"), mdx::FormatError);
  CHECK_THROWS_AS(
      TdlProfile::parse("{\"name\":\"x\",\"delays_normalized\":[0,1],\"powers_db\":[0]}"),
      mdx::FormatError);
  CHECK_THROWS_AS(TdlProfile::load("/nonexistent/file.json"), mdx::FormatError);
}

TEST_CASE("zero delay spread gives a frequency-flat response") {
  auto h = generate_tdl_channel(tdl_a(), 0.0, 50.0, 24, 14, 2, 30e3, 11);
  for (int s = 0; s < 14; ++s)
    for (int r = 0; r < 2; ++r) {
      cd ref = h[(static_cast<size_t>(0) * 14 + s) * 2 + r];
      for (int f = 1; f < 24; ++f)
        CHECK(std::abs(h[(static_cast<size_t>(f) * 14 + s) * 2 + r] - ref) < 1e-12);
    }
}

TEST_CASE("zero Doppler gives a time-static response") {
  auto h = generate_tdl_channel(tdl_a(), 100e-9, 0.0, 24, 14, 2, 30e3, 11);
  for (int f = 0; f < 24; ++f)
    for (int r = 0; r < 2; ++r) {
      cd ref = h[(static_cast<size_t>(f) * 14 + 0) * 2 + r];
      for (int s = 1; s < 14; ++s)
        CHECK(std::abs(h[(static_cast<size_t>(f) * 14 + s) * 2 + r] - ref) < 1e-12);
    }
}

TEST_CASE("Monte-Carlo power normalization of the fading process") {
  double acc = 0.0;
  int count = 0;
  for (int trial = 0; trial < 400; ++trial) {
    auto h = generate_tdl_channel(tdl_a(), 100e-9, 200.0, 4, 14, 1, 30e3, 1000 + trial);
    for (auto v : h) {
      acc += std::norm(v);
      ++count;
    }
  }
  CHECK(count >= 10000);
  double mean = acc / count;
  CHECK(mean > 0.95);
  CHECK(mean < 1.05);
}

TEST_CASE("channel generation is seed-deterministic") {
  auto a = generate_tdl_channel(tdl_a(), 100e-9, 100.0, 12, 14, 2, 30e3, 5);
  auto b = generate_tdl_channel(tdl_a(), 100e-9, 100.0, 12, 14, 2, 30e3, 5);
  auto c = generate_tdl_channel(tdl_a(), 100e-9, 100.0, 12, 14, 2, 30e3, 6);
  CHECK(a == b);
  CHECK(a != c);
  CHECK_THROWS_AS(generate_tdl_channel(tdl_a(), 1e-9, 1.0, 2, 2, 1, 0.0, 1), mdx::ConfigError);
}

TEST_CASE("degenerate drop always picks one layer") {
  DropConfig cfg;
  cfg.max_layers = 1;
  for (int i = 0; i < 50; ++i) CHECK(sample_drop(cfg, i).n_layers == 1);
}

TEST_CASE("layer-count histogram matches the triangular pmf") {
  DropConfig cfg;
  cfg.max_layers = 4;
  const int n = 100000;
  std::vector<int> hist(5, 0);
  for (int i = 0; i < n; ++i) ++hist[sample_drop(cfg, i).n_layers];
  // p(k) = k / (1+2+3+4)
  for (int k = 1; k <= 4; ++k) {
    double emp = static_cast<double>(hist[k]) / n;
    CHECK(std::abs(emp - k / 10.0) < 0.01);
  }
}

TEST_CASE("drop parameters respect configured ranges") {
  DropConfig cfg;
  for (int i = 0; i < 2000; ++i) {
    auto sc = sample_drop(cfg, i);
    CHECK(sc.n_layers >= 1);
    CHECK(sc.n_layers <= 4);
    CHECK(sc.speeds_mps.size() == static_cast<size_t>(sc.n_layers));
    for (double v : sc.speeds_mps) {
      CHECK(v >= 0.0);
      CHECK(v <= 56.0);
    }
    for (double fd : sc.dopplers_hz) {
      CHECK(fd >= 0.0);
      CHECK(fd <= 325.0);
    }
    CHECK(sc.delay_spread_s >= 10e-9);
    CHECK(sc.delay_spread_s <= 300e-9);
    CHECK(sc.snr_db >= cfg.snr_min_db);
    CHECK(sc.snr_db <= cfg.snr_max_db);
  }
  DropConfig bad;
  bad.snr_min_db = 5.0;
  bad.snr_max_db = 0.0;
  CHECK_THROWS_AS(sample_drop(bad, 0), mdx::ConfigError);
}

TEST_CASE("block fading is constant over the slot and unit power") {
  auto h = block_fading_channel(24, 14, 2, 2, 10.0, 3);
  CHECK(h.N0 == doctest::Approx(0.1));
  for (int r = 0; r < 2; ++r)
    for (int t = 0; t < 2; ++t) {
      cd ref = h.at(0, 0, r, t);
      for (int f = 0; f < 24; ++f)
        for (int s = 0; s < 14; ++s) CHECK(h.at(f, s, r, t) == ref);
    }
  // i.i.d. CN(0,1) across links: average over many seeds
  double acc = 0.0;
  for (int seed = 0; seed < 5000; ++seed) {
    auto g = block_fading_channel(1, 1, 2, 2, 0.0, seed);
    for (int r = 0; r < 2; ++r)
      for (int t = 0; t < 2; ++t) acc += std::norm(g.at(0, 0, r, t));
  }
  CHECK(acc / 20000.0 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("zero channel leaves pure noise with variance N0") {
  auto layout = mdx::phy::build_grid_layout(4, 1);
  auto rg = mdx::phy::random_grid(layout, mdx::phy::Constellation::qam(2), 9);
  ChannelRealization h;
  h.F = layout.F;
  h.S = 14;
  h.n_rx = 2;
  h.n_tx = 1;
  h.N0 = 0.5;
  h.H.assign(static_cast<size_t>(h.F) * h.S * 2, cd(0.0, 0.0));
  auto y = apply_channel(rg, h, 77);
  double p = 0.0, pre = 0.0, pim = 0.0;
  for (auto v : y) {
    p += std::norm(v);
    pre += v.real() * v.real();
    pim += v.imag() * v.imag();
  }
  CHECK(p / y.size() == doctest::Approx(0.5).epsilon(0.05));
  // circular symmetry: each quadrature carries N0/2
  CHECK(pre / y.size() == doctest::Approx(0.25).epsilon(0.05));
  CHECK(pim / y.size() == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("noiseless SISO channel reproduces Hx exactly") {
  auto layout = mdx::phy::build_grid_layout(1, 1);
  auto rg = mdx::phy::random_grid(layout, mdx::phy::Constellation::qam(4), 21);
  ChannelRealization h;
  h.F = 12;
  h.S = 14;
  h.n_rx = 1;
  h.n_tx = 1;
  h.N0 = 0.0;
  h.H.resize(12 * 14);
  for (int f = 0; f < 12; ++f)
    for (int s = 0; s < 14; ++s) h.at(f, s, 0, 0) = cd(0.3 * f, 0.1 * s);
  auto y = apply_channel(rg, h, 1);
  for (int f = 0; f < 12; ++f)
    for (int s = 0; s < 14; ++s)
      CHECK(std::abs(y[f * 14 + s] - h.at(f, s, 0, 0) * rg.symbols[0][layout.re_index(f, s)]) <
            1e-15);
}

TEST_CASE("received second moment matches channel power plus noise") {
  auto layout = mdx::phy::build_grid_layout(6, 2);  // 72*14 = 1008 REs
  auto rg = mdx::phy::random_grid(layout, mdx::phy::Constellation::qam(2), 4);
  double expect = 0.0, got = 0.0;
  size_t n = 0;
  for (int seed = 0; seed < 12; ++seed) {
    auto h = block_fading_channel(layout.F, 14, 2, 2, 3.0, 100 + seed);
    auto y = apply_channel(rg, h, 200 + seed);
    // pilot REs on the unused comb are zero symbols, so compare against the
    // exact per-RE signal power rather than the unit-power assumption
    for (int f = 0; f < layout.F; ++f)
      for (int s = 0; s < 14; ++s)
        for (int r = 0; r < 2; ++r) {
          double sig = 0.0;
          for (int t = 0; t < 2; ++t)
            sig += std::norm(h.at(f, s, r, t) * rg.symbols[t][layout.re_index(f, s)]);
          expect += sig + h.N0;
          got += std::norm(y[(static_cast<size_t>(f) * 14 + s) * 2 + r]);
          ++n;
        }
  }
  CHECK(n >= 10000);
  CHECK(got / expect == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("apply_channel validates shapes") {
  auto layout = mdx::phy::build_grid_layout(1, 2);
  auto rg = mdx::phy::random_grid(layout, mdx::phy::Constellation::qam(2), 1);
  auto h = block_fading_channel(12, 14, 2, 1, 0.0, 1);  // n_tx mismatch
  CHECK_THROWS_AS(apply_channel(rg, h, 0), mdx::ShapeError);
}

TEST_CASE("full drop realization has coherent dimensions and finite entries") {
  DropConfig cfg;
  cfg.n_rx = 2;
  auto sc = sample_drop(cfg, 31);
  auto h = generate_channel(tdl_a(), sc, cfg, 24, 14, 31);
  CHECK(h.n_tx == sc.n_layers);
  CHECK(h.H.size() == static_cast<size_t>(24) * 14 * 2 * sc.n_layers);
  CHECK(h.N0 == doctest::Approx(std::pow(10.0, -sc.snr_db / 10.0)));
  for (auto v : h.H) CHECK(std::isfinite(std::abs(v)));
}
