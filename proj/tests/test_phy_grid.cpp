#include "doctest.h"
#include "mdx/grid.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <set>

using namespace mdx::phy;

TEST_CASE("layout counts for one PRB") {
  auto g = build_grid_layout(1, 2);
  CHECK(g.F == 12);
  CHECK(g.S == 14);
  CHECK(g.n_re() == 168);
  // 6 pilot REs per DMRS symbol per layer, 2 DMRS symbols
  for (int n = 0; n < 2; ++n) CHECK(g.pilot_sets[n].size() == 12);
  // 12 subcarriers x 12 non-DMRS symbols
  CHECK(g.data_set.size() == 144);
  CHECK(g.pilot_pairs[0].size() == 6);
}

TEST_CASE("layout scales with PRBs and layers") {
  auto g = build_grid_layout(4, 4);
  CHECK(g.F == 48);
  CHECK(g.data_set.size() == 4 * 144);
  for (int n = 0; n < 4; ++n) CHECK(g.pilot_sets[n].size() == 48);
  // layers 0,1 in comb group 0 (even f), layers 2,3 in group 1 (odd f)
  for (const auto& p : g.pilot_sets[0]) CHECK(p.f % 2 == 0);
  for (const auto& p : g.pilot_sets[3]) CHECK(p.f % 2 == 1);
}

TEST_CASE("pilot and data sets partition the DMRS-symbol structure") {
  auto g = build_grid_layout(2, 2);
  auto didx = g.data_indices();
  std::set<int> data(didx.begin(), didx.end());
  for (int n = 0; n < g.n_layers; ++n)
    for (int idx : g.pilot_indices(n)) CHECK(data.count(idx) == 0);
  // data REs never sit on a DMRS symbol
  for (const auto& p : g.data_set) CHECK(!g.is_dmrs_symbol(p.s));
  CHECK(data.size() == g.data_set.size());
}

TEST_CASE("re_index is frequency-major over 14 symbols") {
  auto g = build_grid_layout(1, 1);
  CHECK(g.re_index(0, 0) == 0);
  CHECK(g.re_index(0, 13) == 13);
  CHECK(g.re_index(1, 0) == 14);
  CHECK(g.re_index(3, 5) == 3 * 14 + 5);
}

TEST_CASE("invalid layouts are rejected") {
  CHECK_THROWS_AS(build_grid_layout(0, 1), mdx::ConfigError);
  CHECK_THROWS_AS(build_grid_layout(1, 5), mdx::ConfigError);
  CHECK_THROWS_AS(build_grid_layout(1, 0), mdx::ConfigError);
  CHECK_THROWS_AS(build_grid_layout(1, 1, {2, 99}), mdx::ConfigError);
}

TEST_CASE("OCC signs are orthogonal within a CDM group") {
  auto g = build_grid_layout(1, 4);
  for (int grp = 0; grp < 2; ++grp) {
    const auto& a = g.cdm[2 * grp];
    const auto& b = g.cdm[2 * grp + 1];
    CHECK(a.group == grp);
    CHECK(b.group == grp);
    int dot = a.occ_sign[0] * b.occ_sign[0] + a.occ_sign[1] * b.occ_sign[1];
    CHECK(dot == 0);
  }
}

TEST_CASE("co-group DMRS sequences differ only by OCC signs") {
  auto g = build_grid_layout(2, 2);
  auto p0 = generate_dmrs(0, g, 7);
  auto p1 = generate_dmrs(1, g, 7);
  REQUIRE(p0.size() == p1.size());
  for (size_t i = 0; i < p0.size(); i += 2) {
    CHECK(std::abs(p0[i] - p1[i]) < 1e-15);
    CHECK(std::abs(p0[i + 1] + p1[i + 1]) < 1e-15);
  }
  // pilots are unit-modulus QPSK
  for (auto v : p0) CHECK(std::abs(std::abs(v) - 1.0) < 1e-12);
}

TEST_CASE("DMRS is deterministic in the seed") {
  auto g = build_grid_layout(1, 2);
  auto a = generate_dmrs(0, g, 42);
  auto b = generate_dmrs(0, g, 42);
  auto c = generate_dmrs(0, g, 43);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("QAM constellations have unit average energy and full Gray round-trip") {
  for (int bits : {2, 4, 6}) {
    const auto& c = Constellation::qam(bits);
    REQUIRE(static_cast<int>(c.points.size()) == (1 << bits));
    double e = 0.0;
    for (auto p : c.points) e += std::norm(p);
    CHECK(e / c.points.size() == doctest::Approx(1.0).epsilon(1e-12));
    // every label maps to a distinct point and demaps back to itself
    std::set<std::pair<double, double>> uniq;
    for (auto p : c.points) uniq.insert({p.real(), p.imag()});
    CHECK(uniq.size() == c.points.size());
    std::vector<int> bits_in;
    for (int label = 0; label < (1 << bits); ++label)
      for (int j = 0; j < bits; ++j) bits_in.push_back((label >> (bits - 1 - j)) & 1);
    auto syms = qam_modulate(bits_in, c);
    CHECK(hard_demap(syms, c) == bits_in);
  }
}

TEST_CASE("QPSK matches the standard mapping") {
  const auto& c = Constellation::qam(2);
  double v = 1.0 / std::sqrt(2.0);
  CHECK(c.points[0] == std::complex<double>(v, v));    // 00
  CHECK(c.points[1] == std::complex<double>(v, -v));   // 01
  CHECK(c.points[2] == std::complex<double>(-v, v));   // 10
  CHECK(c.points[3] == std::complex<double>(-v, -v));  // 11
}

TEST_CASE("16-QAM inner points carry bit pattern x0x0") {
  // per the standard mapping, amplitude bits b2/b3 equal to 0 select the
  // inner ring: 0000 -> (1+j)/sqrt(10)
  const auto& c = Constellation::qam(4);
  double inner = 1.0 / std::sqrt(10.0);
  CHECK(c.points[0] == std::complex<double>(inner, inner));
  for (int label = 0; label < 16; ++label) {
    auto p = c.points[label];
    bool is_inner = std::abs(std::abs(p.real()) - inner) < 1e-12 &&
                    std::abs(std::abs(p.imag()) - inner) < 1e-12;
    bool tail_zeros = c.bit_labels[label][2] == 0 && c.bit_labels[label][3] == 0;
    CHECK(is_inner == tail_zeros);
  }
}

TEST_CASE("bit subsets split each constellation in half") {
  for (int bits : {2, 4, 6}) {
    const auto& c = Constellation::qam(bits);
    for (int b = 0; b < bits; ++b) {
      CHECK(c.sets[b][0].size() == static_cast<size_t>(1 << (bits - 1)));
      CHECK(c.sets[b][1].size() == static_cast<size_t>(1 << (bits - 1)));
      for (int label : c.sets[b][0]) CHECK(c.bit_labels[label][b] == 0);
      for (int label : c.sets[b][1]) CHECK(c.bit_labels[label][b] == 1);
    }
  }
}

TEST_CASE("Gray property: nearest horizontal/vertical neighbors differ in one bit") {
  const auto& c = Constellation::qam(4);
  double step = 2.0 / std::sqrt(10.0);
  for (int i = 0; i < 16; ++i)
    for (int j = i + 1; j < 16; ++j) {
      auto d = c.points[i] - c.points[j];
      bool adjacent = std::abs(std::abs(d) - step) < 1e-9 &&
                      (std::abs(d.real()) < 1e-9 || std::abs(d.imag()) < 1e-9);
      if (!adjacent) continue;
      int diff = 0;
      for (int b = 0; b < 4; ++b) diff += c.bit_labels[i][b] != c.bit_labels[j][b];
      CHECK(diff == 1);
    }
}

TEST_CASE("qam_modulate validates bit count") {
  const auto& c = Constellation::qam(4);
  CHECK_THROWS_AS(qam_modulate({0, 1, 0}, c), mdx::ShapeError);
  CHECK_THROWS_AS(Constellation::qam(3), mdx::ConfigError);
}

TEST_CASE("random grid places pilots and data consistently") {
  auto g = build_grid_layout(2, 2);
  const auto& c = Constellation::qam(4);
  auto rg = random_grid(g, c, 123);
  REQUIRE(rg.symbols.size() == 2);
  REQUIRE(rg.payload_bits.size() == 2);
  CHECK(rg.payload_bits[0].size() == g.data_set.size() * 4);
  for (int n = 0; n < 2; ++n) {
    auto pilots = generate_dmrs(n, g, 123);
    auto pidx = g.pilot_indices(n);
    for (size_t i = 0; i < pidx.size(); ++i)
      CHECK(rg.symbols[n][pidx[i]] == pilots[i]);
    auto syms = qam_modulate(rg.payload_bits[n], c);
    auto didx = g.data_indices();
    for (size_t i = 0; i < didx.size(); ++i)
      CHECK(rg.symbols[n][didx[i]] == syms[i]);
    // REs at DMRS symbols not used by this layer's comb stay empty
    int off = g.cdm[n].group;
    for (int s : g.dmrs_symbols)
      for (int f = 1 - off; f < g.F; f += 2)
        CHECK(rg.symbols[n][g.re_index(f, s)] == std::complex<double>(0.0, 0.0));
  }
}

TEST_CASE("map_to_grid validates sizes") {
  auto g = build_grid_layout(1, 1);
  std::vector<std::vector<std::complex<double>>> data(1), pil(1);
  data[0].resize(10);
  pil[0].resize(g.pilot_sets[0].size());
  CHECK_THROWS_AS(map_to_grid(data, pil, g), mdx::ShapeError);
}

TEST_CASE("layout JSON dump is wellformed enough to round-trip key fields") {
  auto g = build_grid_layout(1, 2);
  auto j = g.to_json();
  CHECK(j.find("\"F\":12") != std::string::npos);
  CHECK(j.find("\"num_prbs\":1") != std::string::npos);
  CHECK(j.find("\"dmrs_symbols\":[2,11]") != std::string::npos);
}
