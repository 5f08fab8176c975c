#include "mdx/grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

namespace mdx::phy {

namespace {

constexpr int kSubcarriersPerPrb = 12;
constexpr int kPairsPerPrb = 3;  // CDM pairs per PRB per comb group

// 3GPP-style quadrant-recursive Gray mapping. Amplitude per axis is
// driven by alternating bits: b0/b1 pick the quadrant, later bits refine.
double pam_level(const std::vector<int>& axis_bits) {
  double level = 0.0;
  // 38.211 closed forms for 1/2/3 bits per axis.
  const auto& b = axis_bits;
  switch (b.size()) {
    case 1:
      level = 1.0 - 2.0 * b[0];
      break;
    case 2:
      level = (1.0 - 2.0 * b[0]) * (2.0 - (1.0 - 2.0 * b[1]));
      break;
    case 3:
      level = (1.0 - 2.0 * b[0]) *
              (4.0 - (1.0 - 2.0 * b[1]) * (2.0 - (1.0 - 2.0 * b[2])));
      break;
    default:
      throw ConfigError("unsupported bits per axis");
  }
  return level;
}

}  // namespace

std::vector<int> GridLayout::data_indices() const {
  std::vector<int> idx;
  idx.reserve(data_set.size());
  for (const auto& p : data_set) idx.push_back(re_index(p.f, p.s));
  return idx;
}

std::vector<int> GridLayout::pilot_indices(int layer) const {
  std::vector<int> idx;
  for (const auto& p : pilot_sets.at(layer)) idx.push_back(re_index(p.f, p.s));
  return idx;
}

bool GridLayout::is_dmrs_symbol(int s) const {
  return std::find(dmrs_symbols.begin(), dmrs_symbols.end(), s) != dmrs_symbols.end();
}

std::string GridLayout::to_json() const {
  std::ostringstream os;
  os << "{\"F\":" << F << ",\"S\":" << S << ",\"num_prbs\":" << num_prbs
     << ",\"n_layers\":" << n_layers << ",\"dmrs_symbols\":[";
  for (size_t i = 0; i < dmrs_symbols.size(); ++i)
    os << dmrs_symbols[i] << (i + 1 < dmrs_symbols.size() ? "," : "");
  os << "],\"data\":[";
  for (size_t i = 0; i < data_set.size(); ++i)
    os << "[" << data_set[i].f << "," << data_set[i].s << "]"
       << (i + 1 < data_set.size() ? "," : "");
  os << "],\"pilots\":[";
  for (int n = 0; n < n_layers; ++n) {
    os << "[";
    for (size_t i = 0; i < pilot_sets[n].size(); ++i)
      os << "[" << pilot_sets[n][i].f << "," << pilot_sets[n][i].s << "]"
         << (i + 1 < pilot_sets[n].size() ? "," : "");
    os << "]" << (n + 1 < n_layers ? "," : "");
  }
  os << "]}";
  return os.str();
}

GridLayout build_grid_layout(int num_prbs, int n_layers,
                             const std::vector<int>& dmrs_symbols,
                             int cdm_group_size) {
  if (num_prbs < 1) throw ConfigError("build_grid_layout: need at least 1 PRB");
  if (cdm_group_size != 2) throw ConfigError("build_grid_layout: CDM group size must be 2");
  if (n_layers < 1 || n_layers > 4)
    throw ConfigError("build_grid_layout: supported layer counts are 1..4");
  if (dmrs_symbols.empty()) throw ConfigError("build_grid_layout: no DMRS symbols");
  GridLayout g;
  g.num_prbs = num_prbs;
  g.F = num_prbs * kSubcarriersPerPrb;
  g.S = 14;
  g.n_layers = n_layers;
  g.dmrs_symbols = dmrs_symbols;
  for (int s : dmrs_symbols)
    if (s < 0 || s >= g.S) throw ConfigError("build_grid_layout: DMRS symbol out of slot");

  // Layers 0,1 share comb group 0 (even subcarriers); layers 2,3 group 1.
  for (int n = 0; n < n_layers; ++n) {
    CdmAssignment a;
    a.group = n / 2;
    a.occ_sign[0] = 1;
    a.occ_sign[1] = (n % 2 == 0) ? 1 : -1;
    g.cdm.push_back(a);
  }

  g.pilot_sets.resize(n_layers);
  g.pilot_pairs.resize(n_layers);
  for (int n = 0; n < n_layers; ++n) {
    int off = g.cdm[n].group;  // comb offset 0 or 1
    for (int s : dmrs_symbols)
      for (int prb = 0; prb < num_prbs; ++prb)
        for (int q = 0; q < kPairsPerPrb; ++q) {
          int f1 = prb * kSubcarriersPerPrb + 4 * q + off;
          int f2 = f1 + 2;
          g.pilot_sets[n].push_back({f1, s});
          g.pilot_sets[n].push_back({f2, s});
          g.pilot_pairs[n].emplace_back(f1, f2);
        }
  }

  // All subcarriers at DMRS symbols are reserved; everything else is data.
  for (int f = 0; f < g.F; ++f)
    for (int s = 0; s < g.S; ++s)
      if (!g.is_dmrs_symbol(s)) g.data_set.push_back({f, s});
  return g;
}

const Constellation& Constellation::qam(int bits) {
  static std::map<int, Constellation> cache;
  auto it = cache.find(bits);
  if (it != cache.end()) return it->second;
  if (bits != 2 && bits != 4 && bits != 6)
    throw ConfigError("Constellation::qam: order must be 2, 4 or 6");
  Constellation c;
  c.bits = bits;
  int n = 1 << bits;
  int per_axis = bits / 2;
  // Unit average energy normalization for the 3GPP level sets.
  double norm = bits == 2 ? std::sqrt(2.0) : bits == 4 ? std::sqrt(10.0) : std::sqrt(42.0);
  for (int label = 0; label < n; ++label) {
    std::vector<int> b(bits);
    for (int i = 0; i < bits; ++i) b[i] = (label >> (bits - 1 - i)) & 1;
    std::vector<int> bi, bq;
    for (int i = 0; i < bits; i += 2) bi.push_back(b[i]);
    for (int i = 1; i < bits; i += 2) bq.push_back(b[i]);
    c.points.emplace_back(pam_level(bi) / norm, pam_level(bq) / norm);
    c.bit_labels.push_back(b);
    (void)per_axis;
  }
  c.sets.assign(bits, {std::vector<int>{}, std::vector<int>{}});
  for (int label = 0; label < n; ++label)
    for (int bpos = 0; bpos < bits; ++bpos)
      c.sets[bpos][c.bit_labels[label][bpos]].push_back(label);
  return cache.emplace(bits, std::move(c)).first->second;
}

int Constellation::nearest(cd x) const {
  int best = 0;
  double bd = std::norm(x - points[0]);
  for (size_t i = 1; i < points.size(); ++i) {
    double d = std::norm(x - points[i]);
    if (d < bd) {
      bd = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::vector<cd> qam_modulate(const std::vector<int>& bits, const Constellation& c) {
  if (bits.size() % c.bits != 0)
    throw ShapeError("qam_modulate: bit count not divisible by symbol order");
  std::vector<cd> out;
  out.reserve(bits.size() / c.bits);
  for (size_t i = 0; i < bits.size(); i += c.bits) {
    int label = 0;
    for (int j = 0; j < c.bits; ++j) label = (label << 1) | bits[i + j];
    out.push_back(c.points[label]);
  }
  return out;
}

std::vector<int> hard_demap(const std::vector<cd>& symbols, const Constellation& c) {
  std::vector<int> bits;
  bits.reserve(symbols.size() * c.bits);
  for (cd x : symbols) {
    const auto& lbl = c.bit_labels[c.nearest(x)];
    bits.insert(bits.end(), lbl.begin(), lbl.end());
  }
  return bits;
}

std::vector<cd> generate_dmrs(int layer, const GridLayout& layout, uint64_t seed) {
  if (layer < 0 || layer >= layout.n_layers)
    throw ConfigError("generate_dmrs: layer out of range");
  const auto& a = layout.cdm[layer];
  // Base sequence is a function of (seed, group) so layers sharing a CDM
  // group see the same underlying pilots and differ only in OCC signs.
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<uint64_t>(a.group));
  std::uniform_int_distribution<int> quad(0, 3);
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  std::vector<cd> out;
  out.reserve(layout.pilot_sets[layer].size());
  size_t n_pilots = layout.pilot_sets[layer].size();
  for (size_t i = 0; i < n_pilots; i += 2) {
    cd base[2];
    for (int j = 0; j < 2; ++j) {
      int q = quad(rng);
      base[j] = cd((q & 1) ? -inv_sqrt2 : inv_sqrt2, (q & 2) ? -inv_sqrt2 : inv_sqrt2);
    }
    out.push_back(base[0] * static_cast<double>(a.occ_sign[0]));
    out.push_back(base[1] * static_cast<double>(a.occ_sign[1]));
  }
  return out;
}

ResourceGrid map_to_grid(const std::vector<std::vector<cd>>& data_symbols,
                         const std::vector<std::vector<cd>>& pilots,
                         const GridLayout& layout) {
  if (static_cast<int>(data_symbols.size()) != layout.n_layers ||
      static_cast<int>(pilots.size()) != layout.n_layers)
    throw ShapeError("map_to_grid: per-layer input count mismatch");
  ResourceGrid rg;
  rg.layout = &layout;
  rg.symbols.assign(layout.n_layers, std::vector<cd>(layout.n_re(), cd(0.0, 0.0)));
  for (int n = 0; n < layout.n_layers; ++n) {
    if (data_symbols[n].size() != layout.data_set.size())
      throw ShapeError("map_to_grid: data symbol count != |D|");
    if (pilots[n].size() != layout.pilot_sets[n].size())
      throw ShapeError("map_to_grid: pilot count mismatch");
    for (size_t i = 0; i < layout.data_set.size(); ++i)
      rg.symbols[n][layout.re_index(layout.data_set[i].f, layout.data_set[i].s)] =
          data_symbols[n][i];
    for (size_t i = 0; i < layout.pilot_sets[n].size(); ++i)
      rg.symbols[n][layout.re_index(layout.pilot_sets[n][i].f, layout.pilot_sets[n][i].s)] =
          pilots[n][i];
  }
  return rg;
}

ResourceGrid random_grid(const GridLayout& layout, const Constellation& c,
                         uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> bit(0, 1);
  std::vector<std::vector<cd>> data(layout.n_layers), pil(layout.n_layers);
  std::vector<std::vector<int>> payload(layout.n_layers);
  for (int n = 0; n < layout.n_layers; ++n) {
    payload[n].resize(layout.data_set.size() * c.bits);
    for (auto& b : payload[n]) b = bit(rng);
    data[n] = qam_modulate(payload[n], c);
    pil[n] = generate_dmrs(n, layout, seed);
  }
  ResourceGrid rg = map_to_grid(data, pil, layout);
  rg.payload_bits = std::move(payload);
  return rg;
}

}  // namespace mdx::phy
