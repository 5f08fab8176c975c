#include "mdx/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

namespace mdx::chan {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kNumSinusoids = 32;
constexpr double kSpeedOfLight = 299792458.0;

void validate(TdlProfile& p) {
  if (p.tap_delays.size() != p.tap_powers.size() || p.tap_delays.empty())
    throw FormatError("TdlProfile: delay/power arrays empty or mismatched");
  double sum = 0.0;
  double prev = -1.0;
  for (size_t i = 0; i < p.tap_delays.size(); ++i) {
    if (p.tap_delays[i] < 0.0) throw FormatError("TdlProfile: negative delay");
    if (p.tap_powers[i] < 0.0) throw FormatError("TdlProfile: negative power");
    sum += p.tap_powers[i];
    (void)prev;
  }
  if (sum <= 0.0) throw FormatError("TdlProfile: zero total power");
  for (auto& w : p.tap_powers) w /= sum;
  // keep taps ascending in delay (profiles list them roughly sorted)
  std::vector<size_t> order(p.tap_delays.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return p.tap_delays[a] < p.tap_delays[b]; });
  TdlProfile sorted = p;
  for (size_t i = 0; i < order.size(); ++i) {
    sorted.tap_delays[i] = p.tap_delays[order[i]];
    sorted.tap_powers[i] = p.tap_powers[order[i]];
  }
  p = std::move(sorted);
}
}  // namespace

TdlProfile TdlProfile::parse(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("TdlProfile: bad JSON: ") + e.what());
  }
  if (!j.contains("name") || !j.contains("delays_normalized") || !j.contains("powers_db"))
    throw FormatError("TdlProfile: missing name/delays_normalized/powers_db");
  TdlProfile p;
  p.name = j["name"].get<std::string>();
  p.tap_delays = j["delays_normalized"].get<std::vector<double>>();
  for (double db : j["powers_db"].get<std::vector<double>>())
    p.tap_powers.push_back(std::pow(10.0, db / 10.0));
  validate(p);
  return p;
}

TdlProfile TdlProfile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("TdlProfile: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(text);
}

TdlProfile TdlProfile::single_tap() {
  TdlProfile p;
  p.name = "single-tap";
  p.tap_delays = {0.0};
  p.tap_powers = {1.0};
  return p;
}

std::vector<cd> generate_tdl_channel(const TdlProfile& profile,
                                     double rms_delay_spread_s, double doppler_hz,
                                     int F, int S, int n_rx,
                                     double subcarrier_spacing_hz, uint64_t seed) {
  if (subcarrier_spacing_hz <= 0.0)
    throw ConfigError("generate_tdl_channel: subcarrier spacing must be positive");
  if (doppler_hz < 0.0) throw ConfigError("generate_tdl_channel: negative Doppler");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uphase(0.0, kTwoPi);

  const int n_taps = static_cast<int>(profile.tap_delays.size());
  const double t_sym = 1.0 / subcarrier_spacing_hz;
  std::vector<cd> out(static_cast<size_t>(F) * S * n_rx);

  for (int r = 0; r < n_rx; ++r) {
    // per-tap Jakes sum-of-sinusoids gain over the S symbols
    std::vector<std::vector<cd>> tap_gain(n_taps, std::vector<cd>(S));
    for (int l = 0; l < n_taps; ++l) {
      double amp = std::sqrt(profile.tap_powers[l] / kNumSinusoids);
      std::vector<double> omega(kNumSinusoids), phi(kNumSinusoids);
      for (int m = 0; m < kNumSinusoids; ++m) {
        omega[m] = kTwoPi * doppler_hz * std::cos(uphase(rng));
        phi[m] = uphase(rng);
      }
      for (int s = 0; s < S; ++s) {
        double t = s * t_sym;
        cd g(0.0, 0.0);
        for (int m = 0; m < kNumSinusoids; ++m)
          g += std::polar(amp, omega[m] * t + phi[m]);
        tap_gain[l][s] = g;
      }
    }
    for (int f = 0; f < F; ++f) {
      double freq = f * subcarrier_spacing_hz;
      std::vector<cd> steer(n_taps);
      for (int l = 0; l < n_taps; ++l)
        steer[l] = std::polar(1.0, -kTwoPi * freq * profile.tap_delays[l] * rms_delay_spread_s);
      for (int s = 0; s < S; ++s) {
        cd h(0.0, 0.0);
        for (int l = 0; l < n_taps; ++l) h += tap_gain[l][s] * steer[l];
        out[(static_cast<size_t>(f) * S + s) * n_rx + r] = h;
      }
    }
  }
  return out;
}

DropScenario sample_drop(const DropConfig& cfg, uint64_t seed) {
  if (cfg.max_layers < 1 || cfg.speed_max_mps < cfg.speed_min_mps ||
      cfg.delay_spread_max_s < cfg.delay_spread_min_s || cfg.snr_max_db < cfg.snr_min_db)
    throw ConfigError("sample_drop: malformed ranges");
  std::mt19937_64 rng(seed);
  // triangular pmf on [1, max], mode at max: p(k) proportional to k
  std::vector<double> w(cfg.max_layers);
  for (int k = 0; k < cfg.max_layers; ++k) w[k] = k + 1.0;
  std::discrete_distribution<int> layers(w.begin(), w.end());
  std::uniform_real_distribution<double> uspeed(cfg.speed_min_mps, cfg.speed_max_mps);
  std::uniform_real_distribution<double> uds(cfg.delay_spread_min_s, cfg.delay_spread_max_s);
  std::uniform_real_distribution<double> usnr(cfg.snr_min_db, cfg.snr_max_db);

  DropScenario sc;
  sc.n_layers = layers(rng) + 1;
  for (int n = 0; n < sc.n_layers; ++n) {
    double v = uspeed(rng);
    double fd = v * cfg.carrier_hz / kSpeedOfLight;
    fd = std::clamp(fd, cfg.doppler_min_hz, cfg.doppler_max_hz);
    sc.speeds_mps.push_back(v);
    sc.dopplers_hz.push_back(fd);
  }
  sc.delay_spread_s = uds(rng);
  sc.snr_db = usnr(rng);
  return sc;
}

ChannelRealization generate_channel(const TdlProfile& profile,
                                    const DropScenario& scen, const DropConfig& cfg,
                                    int F, int S, uint64_t seed) {
  ChannelRealization h;
  h.F = F;
  h.S = S;
  h.n_rx = cfg.n_rx;
  h.n_tx = scen.n_layers;
  h.snr_db = scen.snr_db;
  h.N0 = snr_db_to_n0(scen.snr_db);
  h.H.resize(static_cast<size_t>(F) * S * h.n_rx * h.n_tx);
  for (int t = 0; t < h.n_tx; ++t) {
    auto link = generate_tdl_channel(profile, scen.delay_spread_s, scen.dopplers_hz[t],
                                     F, S, h.n_rx, cfg.subcarrier_spacing_hz,
                                     seed ^ (0x51ed2701u + 0x100000001b3ULL * t));
    for (int f = 0; f < F; ++f)
      for (int s = 0; s < S; ++s)
        for (int r = 0; r < h.n_rx; ++r)
          h.at(f, s, r, t) = link[(static_cast<size_t>(f) * S + s) * h.n_rx + r];
  }
  return h;
}

ChannelRealization block_fading_channel(int F, int S, int n_rx, int n_tx,
                                        double snr_db, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
  ChannelRealization h;
  h.F = F;
  h.S = S;
  h.n_rx = n_rx;
  h.n_tx = n_tx;
  h.snr_db = snr_db;
  h.N0 = snr_db_to_n0(snr_db);
  h.H.resize(static_cast<size_t>(F) * S * n_rx * n_tx);
  for (int r = 0; r < n_rx; ++r)
    for (int t = 0; t < n_tx; ++t) {
      cd g(gauss(rng), gauss(rng));
      for (int f = 0; f < F; ++f)
        for (int s = 0; s < S; ++s) h.at(f, s, r, t) = g;
    }
  return h;
}

std::vector<cd> apply_channel(const phy::ResourceGrid& x,
                              const ChannelRealization& h, uint64_t seed) {
  const auto& g = *x.layout;
  if (g.F != h.F || g.S != h.S || g.n_layers != h.n_tx)
    throw ShapeError("apply_channel: grid/channel shape mismatch");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(h.N0 / 2.0));
  std::vector<cd> y(static_cast<size_t>(h.F) * h.S * h.n_rx);
  for (int f = 0; f < h.F; ++f)
    for (int s = 0; s < h.S; ++s)
      for (int r = 0; r < h.n_rx; ++r) {
        cd acc(0.0, 0.0);
        for (int t = 0; t < h.n_tx; ++t)
          acc += h.at(f, s, r, t) * x.symbols[t][g.re_index(f, s)];
        acc += cd(gauss(rng), gauss(rng));
        y[(static_cast<size_t>(f) * h.S + s) * h.n_rx + r] = acc;
      }
  return y;
}

}  // namespace mdx::chan
