#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mdx/errors.hpp"
#include "mdx/grid.hpp"

namespace mdx::chan {

using cd = std::complex<double>;

struct TdlProfile {
  std::string name;
  std::vector<double> tap_delays;  // normalized; multiply by rms delay spread
  std::vector<double> tap_powers;  // linear, sums to 1

  static TdlProfile load(const std::string& path);
  static TdlProfile parse(const std::string& json_text);
  static TdlProfile single_tap();  // flat-fading degenerate profile
};

struct ChannelRealization {
  int F = 0, S = 0, n_rx = 0, n_tx = 0;
  std::vector<cd> H;  // ((f*S + s)*n_rx + r)*n_tx + t
  double N0 = 0.0;
  double snr_db = 0.0;

  cd& at(int f, int s, int r, int t) {
    return H[(static_cast<size_t>(f * S + s) * n_rx + r) * n_tx + t];
  }
  cd at(int f, int s, int r, int t) const {
    return H[(static_cast<size_t>(f * S + s) * n_rx + r) * n_tx + t];
  }
};

struct DropConfig {
  int max_layers = 4;
  int n_rx = 4;
  double speed_min_mps = 0.0, speed_max_mps = 56.0;
  double doppler_min_hz = 0.0, doppler_max_hz = 325.0;
  double delay_spread_min_s = 10e-9, delay_spread_max_s = 300e-9;
  double carrier_hz = 2.14e9;
  double subcarrier_spacing_hz = 30e3;
  double snr_min_db = -2.0, snr_max_db = 18.0;
};

struct DropScenario {
  int n_layers = 1;
  std::vector<double> speeds_mps;   // per layer
  std::vector<double> dopplers_hz;  // per layer, f_D = v f_c / c
  double delay_spread_s = 0.0;
  double snr_db = 0.0;
};

// One transmit link: Jakes-faded TDL taps summed into a frequency response.
// Returns F*S*n_rx entries indexed ((f*S + s)*n_rx + r); E|H|^2 = 1.
std::vector<cd> generate_tdl_channel(const TdlProfile& profile,
                                     double rms_delay_spread_s, double doppler_hz,
                                     int F, int S, int n_rx,
                                     double subcarrier_spacing_hz, uint64_t seed);

DropScenario sample_drop(const DropConfig& cfg, uint64_t seed);

// Full multi-layer realization for a sampled drop.
ChannelRealization generate_channel(const TdlProfile& profile,
                                    const DropScenario& scen, const DropConfig& cfg,
                                    int F, int S, uint64_t seed);

// Block fading: H i.i.d. CN(0,1) per (r,t) link, constant over the slot.
ChannelRealization block_fading_channel(int F, int S, int n_rx, int n_tx,
                                        double snr_db, uint64_t seed);

// y = Hx + n with n ~ CN(0, N0 I); returns F*S*n_rx, index (f*S + s)*n_rx + r.
std::vector<cd> apply_channel(const phy::ResourceGrid& x,
                              const ChannelRealization& h, uint64_t seed);

inline double snr_db_to_n0(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

}  // namespace mdx::chan
