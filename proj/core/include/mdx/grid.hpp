#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mdx/errors.hpp"

namespace mdx::phy {

using cd = std::complex<double>;

/// One (subcarrier, symbol) cell. Flat RE index is f * S + s.
struct RePos {
  int f;
  int s;
};

struct CdmAssignment {
  int group;        // comb offset: group g occupies subcarriers with f % 2 == g
  int occ_sign[2];  // frequency OCC over the two subcarriers of a pair
};

// DMRS type-1 comb layout over a 12 x 14 PRB pattern, pilots at the
// configured DMRS symbols, CDM group size 2 in frequency.
struct GridLayout {
  int F = 0;
  int S = 14;
  int num_prbs = 0;
  int n_layers = 0;
  std::vector<int> dmrs_symbols;

  std::vector<CdmAssignment> cdm;               // per layer
  std::vector<std::vector<RePos>> pilot_sets;   // per layer, pair-major order
  std::vector<RePos> data_set;                  // f-major order
  std::vector<std::vector<std::pair<int, int>>> pilot_pairs;  // per layer: (f1,f2)

  int re_index(int f, int s) const { return f * S + s; }
  int n_re() const { return F * S; }
  std::vector<int> data_indices() const;
  std::vector<int> pilot_indices(int layer) const;
  bool is_dmrs_symbol(int s) const;

  std::string to_json() const;
};

GridLayout build_grid_layout(int num_prbs, int n_layers,
                             const std::vector<int>& dmrs_symbols = {2, 11},
                             int cdm_group_size = 2);

struct Constellation {
  int bits = 0;                      // B: bits per symbol
  std::vector<cd> points;            // indexed by integer label
  std::vector<std::vector<int>> bit_labels;
  // sets[b][v]: point indices whose b-th bit equals v
  std::vector<std::vector<std::vector<int>>> sets;

  static const Constellation& qam(int bits);  // 2, 4 or 6
  int nearest(cd x) const;
};

std::vector<cd> qam_modulate(const std::vector<int>& bits, const Constellation& c);
std::vector<int> hard_demap(const std::vector<cd>& symbols, const Constellation& c);

// Unit-magnitude QPSK pilots from a seeded PRNG; the base sequence is
// shared within a CDM group and OCC signs are applied per layer.
std::vector<cd> generate_dmrs(int layer, const GridLayout& layout, uint64_t seed);

struct ResourceGrid {
  const GridLayout* layout = nullptr;
  std::vector<std::vector<cd>> symbols;        // per layer, F*S, f-major
  std::vector<std::vector<int>> payload_bits;  // per layer, |D| * B
};

ResourceGrid map_to_grid(const std::vector<std::vector<cd>>& data_symbols,
                         const std::vector<std::vector<cd>>& pilots,
                         const GridLayout& layout);

// Random payload helper: draws bits, modulates, maps, and returns the grid.
ResourceGrid random_grid(const GridLayout& layout, const Constellation& c,
                         uint64_t seed);

}  // namespace mdx::phy
