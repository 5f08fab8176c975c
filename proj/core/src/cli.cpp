#include "mdx/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdx/gradcheck.hpp"

namespace mdx::cli {

namespace {

using cd = std::complex<double>;
namespace fs = std::filesystem;

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string build_id() { return std::string(__DATE__) + " " + __TIME__; }

void write_manifest(const ExperimentConfig& cfg, const std::string& command,
                    const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = cfg.hash;
  j["seed"] = cfg.seed;
  j["build_id"] = build_id();
  j["outputs"] = outputs;
  std::ofstream f(cfg.out_dir + "/manifest.json");
  if (!f) throw FormatError("cannot write manifest in " + cfg.out_dir);
  f << j.dump(2) << "\n";
}

// fixed-layer-count drop for evaluation: dopplers and delay spread follow
// the training distribution, the SNR is pinned
chan::DropScenario eval_drop(const chan::DropConfig& drop, int layers,
                             double snr_db, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> speed(drop.speed_min_mps, drop.speed_max_mps);
  std::uniform_real_distribution<double> ds(drop.delay_spread_min_s,
                                            drop.delay_spread_max_s);
  chan::DropScenario scen;
  scen.n_layers = layers;
  for (int t = 0; t < layers; ++t) {
    double v = speed(rng);
    double fd = v * drop.carrier_hz / 299792458.0;
    scen.speeds_mps.push_back(v);
    scen.dopplers_hz.push_back(
        std::clamp(fd, drop.doppler_min_hz, drop.doppler_max_hz));
  }
  scen.delay_spread_s = ds(rng);
  scen.snr_db = snr_db;
  return scen;
}

model::MdxParams load_params_or_fresh(const ExperimentConfig& cfg) {
  if (cfg.receiver == "mdx" && !cfg.checkpoint.empty())
    return train::load_checkpoint(cfg.checkpoint).params;
  return model::init_params(cfg.arch, splitmix64(cfg.seed));
}

}  // namespace

std::string hash_bytes(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config file not found: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  ExperimentConfig cfg;
  cfg.hash = hash_bytes(buf.str());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  auto get = [](const nlohmann::json& o, const char* key, auto& into) {
    if (o.contains(key)) into = o.at(key).get<std::decay_t<decltype(into)>>();
  };
  if (j.contains("system")) {
    const auto& s = j["system"];
    get(s, "n_rx", cfg.n_rx);
    get(s, "layers", cfg.layers);
    get(s, "prbs", cfg.prbs);
    get(s, "modulation", cfg.modulation);
  }
  if (j.contains("channel")) {
    const auto& c = j["channel"];
    get(c, "block_fading", cfg.block_fading);
    get(c, "profile_path", cfg.profile_path);
    get(c, "snr_db_list", cfg.snr_db_list);
    get(c, "snr_min_db", cfg.snr_min_db);
    get(c, "snr_max_db", cfg.snr_max_db);
  }
  if (j.contains("receiver")) {
    const auto& r = j["receiver"];
    get(r, "kind", cfg.receiver);
    get(r, "checkpoint", cfg.checkpoint);
    get(r, "genie_noise", cfg.genie_noise);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    get(t, "iterations", cfg.iterations);
    get(t, "batch_size", cfg.batch_size);
    get(t, "lr", cfg.lr);
    get(t, "lambda", cfg.lambda);
    get(t, "checkpoint_every", cfg.checkpoint_every);
  }
  if (j.contains("run")) {
    const auto& r = j["run"];
    get(r, "seed", cfg.seed);
    get(r, "num_tti", cfg.num_tti);
    get(r, "out_dir", cfg.out_dir);
  }
  if (j.contains("arch")) {
    const auto& a = j["arch"];
    get(a, "n_blocks", cfg.arch.n_blocks);
    get(a, "filters", cfg.arch.filters);
    get(a, "kernel", cfg.arch.kernel);
  }
  return cfg;
}

void ExperimentConfig::validate() const {
  if (prbs < 1) throw ConfigError("prbs must be >= 1");
  if (layers < 1 || layers > 4) throw ConfigError("layers must be in [1,4]");
  if (n_rx < layers) throw ConfigError("n_rx must be >= layers");
  if (modulation != 2 && modulation != 4 && modulation != 6)
    throw ConfigError("modulation must be 2, 4, or 6 bits");
  if (!block_fading && !fs::exists(profile_path))
    throw ConfigError("channel profile not found: " + profile_path);
  if (receiver != "ls_lmmse" && receiver != "perfect_csi" && receiver != "mdx")
    throw ConfigError("receiver must be ls_lmmse, perfect_csi, or mdx");
  if (num_tti < 1) throw ConfigError("num_tti must be >= 1");
  if (iterations < 0 || batch_size < 1) throw ConfigError("bad training settings");
}

void cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  train::TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.iterations = cfg.iterations;
  tc.lr = cfg.lr;
  tc.lambda = cfg.lambda;
  tc.snr_min_db = cfg.snr_min_db;
  tc.snr_max_db = cfg.snr_max_db;
  tc.prbs = cfg.prbs;
  tc.modulations = {cfg.modulation};
  tc.n_rx = cfg.n_rx;
  tc.max_layers = cfg.layers;
  tc.block_fading = cfg.block_fading;
  tc.tdl_profile_path = cfg.profile_path;
  tc.genie_noise = cfg.genie_noise;
  tc.seed = cfg.seed;
  tc.checkpoint_every = cfg.checkpoint_every;
  tc.out_dir = cfg.out_dir;
  tc.arch = cfg.arch;

  auto result = train::train(tc);
  std::string trace_path = cfg.out_dir + "/trace.csv";
  std::string ckpt_path = cfg.out_dir + "/checkpoint.mdxc";
  train::write_trace_csv(trace_path, result.trace, cfg.hash, cfg.seed);
  train::save_checkpoint(ckpt_path, result.params, nullptr,
                         cfg.iterations, cfg.seed, cfg.hash);
  write_manifest(cfg, "train", {trace_path, ckpt_path});
  std::cout << "trained " << cfg.iterations << " iterations";
  if (!result.trace.empty())
    std::cout << ", final loss " << result.trace.back().loss;
  std::cout << "\n checkpoint: " << ckpt_path << "\n trace: " << trace_path << "\n";
}

void cmd_eval(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.snr_db_list.empty()) throw ConfigError("eval needs a nonempty snr_db_list");
  fs::create_directories(cfg.out_dir);

  auto params = load_params_or_fresh(cfg);
  const auto& c = phy::Constellation::qam(cfg.modulation);
  auto layout = phy::build_grid_layout(cfg.prbs, cfg.layers);
  chan::TdlProfile profile;
  chan::DropConfig drop;
  drop.n_rx = cfg.n_rx;
  drop.max_layers = cfg.layers;
  if (!cfg.block_fading) profile = chan::TdlProfile::load(cfg.profile_path);

  analysis::MetricAccumulator acc;
  for (size_t si = 0; si < cfg.snr_db_list.size(); ++si) {
    double snr = cfg.snr_db_list[si];
    for (int tti = 0; tti < cfg.num_tti; ++tti) {
      uint64_t s = splitmix64(cfg.seed ^ splitmix64((si << 32) + tti + 1));
      auto rg = phy::random_grid(layout, c, splitmix64(s + 1));
      chan::ChannelRealization ch =
          cfg.block_fading
              ? chan::block_fading_channel(layout.F, layout.S, cfg.n_rx,
                                           cfg.layers, snr, splitmix64(s + 2))
              : chan::generate_channel(profile, eval_drop(drop, cfg.layers, snr, s),
                                       drop, layout.F, layout.S, splitmix64(s + 2));
      auto y = chan::apply_channel(rg, ch, splitmix64(s + 3));
      std::vector<std::vector<cd>> pilots;
      for (int t = 0; t < cfg.layers; ++t)
        pilots.push_back(phy::generate_dmrs(t, layout, splitmix64(s + 1)));
      double sigma2 = cfg.genie_noise
                          ? ch.N0
                          : rx::estimate_noise_variance(y, pilots, layout, cfg.n_rx);

      rx::LlrGrid llr;
      double mse_sum = 0.0;
      int64_t mse_count = 0;
      if (cfg.receiver == "mdx") {
        auto out = model::mdx_forward(y, pilots, layout, cfg.n_rx, sigma2, params,
                                      c, false);
        llr = out.llr_final;
        for (int re : layout.data_indices())
          for (int i = 0; i < cfg.n_rx * cfg.layers; ++i) {
            size_t idx = static_cast<size_t>(re) * cfg.n_rx * cfg.layers + i;
            mse_sum += std::norm(out.h_nn.at(idx) - ch.H[idx]);
            ++mse_count;
          }
      } else if (cfg.receiver == "perfect_csi") {
        auto truth = rx::ChannelEstimate::from_realization(ch);
        llr = rx::run_baseline(rx::BaselineKind::PERFECT_CSI_LMMSE, y, pilots,
                               &truth, layout, cfg.n_rx, sigma2, c);
        mse_count = 1;  // exact CSI
      } else {
        llr = rx::run_baseline(rx::BaselineKind::LS_LMMSE, y, pilots, nullptr,
                               layout, cfg.n_rx, sigma2, c);
        auto est = rx::interpolate_to_grid(
            rx::pa_ls_estimate(y, pilots, layout, cfg.n_rx), layout);
        for (int re : layout.data_indices())
          for (int i = 0; i < cfg.n_rx * cfg.layers; ++i) {
            size_t idx = static_cast<size_t>(re) * cfg.n_rx * cfg.layers + i;
            mse_sum += std::norm(est.H[idx] - ch.H[idx]);
            ++mse_count;
          }
      }

      const auto& lv = llr.llr.value();
      int n_data = llr.llr.shape()[0], B = llr.llr.shape()[2];
      for (int t = 0; t < cfg.layers; ++t) {
        int64_t errs = 0;
        for (int row = 0; row < n_data; ++row)
          for (int b = 0; b < B; ++b) {
            int hard =
                lv[(static_cast<size_t>(row) * cfg.layers + t) * B + b] > 0 ? 1 : 0;
            if (hard != rg.payload_bits[t][static_cast<size_t>(row) * B + b]) ++errs;
          }
        acc.add_bits(snr, errs, static_cast<int64_t>(n_data) * B);
        acc.add_block(snr, errs > 0);
      }
      acc.add_slot(snr);
      acc.add_mse(snr, mse_sum, mse_count);
    }
  }

  std::string out_path = cfg.out_dir + "/results.csv";
  auto rows = analysis::report(acc);
  analysis::write_report_csv(out_path, rows, cfg.hash, cfg.seed);
  write_manifest(cfg, "eval", {out_path});
  std::cout << "snr_db ber bler ch_mse\n";
  for (const auto& r : rows)
    std::cout << r.snr_db << ' ' << r.ber << ' ' << r.bler << ' ' << r.ch_mse
              << "\n";
  std::cout << "results: " << out_path << "\n";
}

void cmd_flops(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  auto rep = analysis::model_complexity(cfg.arch, cfg.n_rx, cfg.layers, cfg.prbs,
                                        cfg.modulation);
  std::string out_path = cfg.out_dir + "/flops.csv";
  std::ofstream f(out_path);
  if (!f) throw FormatError("cannot write " + out_path);
  f << "# config_hash=" << cfg.hash << " seed=" << cfg.seed << "\n";
  f << "n_rx,n_tx,prbs,kernel,filters,lmmse,resblocks,demapper,misc,"
       "flops_total,flops_mul_add,param_count\n";
  f << rep.n_rx << ',' << rep.n_tx << ',' << rep.prbs << ',' << rep.kernel << ','
    << rep.filters << ',' << rep.lmmse << ',' << rep.resblocks << ','
    << rep.demapper << ',' << rep.misc << ',' << rep.flops_total() << ','
    << rep.flops_total_mul_add() << ',' << rep.param_count << "\n";
  write_manifest(cfg, "flops", {out_path});
  std::cout << "param_count " << rep.param_count << "\n"
            << "flops_total " << rep.flops_total() << " ("
            << rep.flops_total() / 1e9 << " G, multiplications only; "
            << rep.flops_total_mul_add() / 1e9 << " G counting mul+add)\n"
            << "report: " << out_path << "\n";
}

std::vector<GradcheckEntry> run_gradcheck_suite(uint64_t seed) {
  using ad::Tensor;
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> g(0.0, 1.0);
  auto rand_param = [&](const ad::Shape& s, double scale = 1.0, double off = 0.0) {
    int64_t n = 1;
    for (int d : s) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng) * scale + off;
    return Tensor::param(s, v);
  };

  std::vector<GradcheckEntry> out;
  auto check = [&](const std::string& op, const std::function<Tensor()>& fn,
                   const std::vector<Tensor>& inputs, double tol = 1e-5) {
    auto r = ad::gradcheck(fn, inputs);
    out.push_back({op, r.max_rel_err, r.max_rel_err < tol});
  };

  {
    auto a = rand_param({3, 4}), b = rand_param({3, 4});
    check("add_mul", [&] { return ad::reduce_sum(ad::mul(ad::add(a, b), a)); },
          {a, b});
  }
  {
    auto a = rand_param({3, 4}), b = rand_param({3, 4}, 0.3, 2.0);
    check("div", [&] { return ad::reduce_mean(ad::div(a, b)); }, {a, b});
  }
  {
    auto a = rand_param({4, 4}, 1.0, 0.3);
    check("relu_clamp",
          [&] { return ad::reduce_sum(ad::clamp(ad::relu(a), 0.1, 0.9)); }, {a});
  }
  {
    auto a = rand_param({2, 3, 4});
    check("reshape_permute_gather",
          [&] {
            auto t = ad::permute(ad::reshape(a, {4, 3, 2}), {1, 0, 2});
            return ad::reduce_sum(ad::gather0(t, {0, 2}));
          },
          {a});
  }
  {
    auto a = rand_param({2, 3, 4}), b = rand_param({2, 4, 3});
    check("bmm", [&] { return ad::reduce_sum(ad::bmm(a, b)); }, {a, b});
  }
  {
    auto x = rand_param({5, 6, 3}), dw = rand_param({3, 3, 3}, 0.5);
    auto pw = rand_param({3, 2}, 0.5), bias = rand_param({2}, 0.1);
    check("conv2d_separable",
          [&] { return ad::reduce_sum(ad::conv2d_separable(x, dw, pw, bias)); },
          {x, dw, pw, bias});
  }
  {
    auto x = rand_param({6, 4, 3}), gm = rand_param({3}, 0.2, 1.0),
         bt = rand_param({3}, 0.2);
    std::vector<double> wv(72);
    for (auto& v : wv) v = g(rng);
    auto w = Tensor::from_data({6, 4, 3}, wv);  // fixed probe weights
    check("batch_norm",
          [&] {
            ad::BatchNormState st;
            auto y = ad::batch_norm(x, gm, bt, &st, true);
            return ad::reduce_mean(ad::mul(y, w));
          },
          {x, gm, bt});
  }
  {
    auto l = rand_param({3, 4}, 2.0), t = rand_param({3, 4}, 0.2, 0.5);
    check("bce_with_logits",
          [&] { return ad::reduce_mean(ad::bce_with_logits(l, ad::clamp(t, 0.0, 1.0))); },
          {l});
  }
  {
    // Hermitian solve through a well-conditioned PD system
    auto hr = rand_param({2, 3, 2}), hi = rand_param({2, 3, 2});
    auto br = rand_param({2, 3, 1}), bi = rand_param({2, 3, 1});
    check("hermitian_solve",
          [&] {
            ad::ComplexPair H{hr, hi}, B{br, bi};
            auto A = ad::cbmm(ad::cherm(H), H);
            auto eye = ad::tile0(
                Tensor::from_data({1, 2, 2}, {0.5, 0.0, 0.0, 0.5}), 2);
            A.re = ad::add(A.re, eye);
            auto X = ad::hermitian_solve(A, ad::cbmm(ad::cherm(H), B));
            return ad::reduce_sum(ad::cabs2(X));
          },
          {hr, hi, br, bi});
  }
  {
    // end-to-end loss on one PRB, two receive antennas, one layer
    auto layout = phy::build_grid_layout(1, 1);
    auto rg = phy::random_grid(layout, phy::Constellation::qam(2), splitmix64(seed + 5));
    auto ch = chan::block_fading_channel(layout.F, 14, 2, 1, 10.0, splitmix64(seed + 6));
    auto y = chan::apply_channel(rg, ch, splitmix64(seed + 7));
    std::vector<std::vector<cd>> pilots{
        phy::generate_dmrs(0, layout, splitmix64(seed + 5))};
    auto params = model::init_params({}, splitmix64(seed + 8));
    auto inputs = params.learnables();
    auto r = ad::gradcheck(
        [&] {
          auto o = model::mdx_forward(y, pilots, layout, 2, ch.N0, params,
                                      phy::Constellation::qam(2), true);
          return ad::add(
              ad::add(train::bce_loss(o.llr_final, rg.payload_bits),
                      train::bce_loss(o.llr_intermediate, rg.payload_bits)),
              ad::scale(train::mse_loss(o.h_nn, ch, layout), 0.01));
        },
        {inputs[0], inputs[1], inputs[2], inputs[3]}, 1e-5);
    out.push_back({"mdx_end_to_end", r.max_rel_err, r.max_rel_err < 1e-4});
  }
  return out;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"MU-MIMO OFDM link simulator and model-driven receiver"};
  app.require_subcommand(1);
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* copt = sub->add_option("--config", config_path, "JSON config path");
    if (need_config) copt->required();
    sub->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--out", out_dir, "output directory override");
  };
  auto* train_cmd = app.add_subcommand("train", "train the receiver");
  auto* eval_cmd = app.add_subcommand("eval", "run a per-SNR evaluation sweep");
  auto* flops_cmd = app.add_subcommand("flops", "complexity report");
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference suite");
  add_common(train_cmd, true);
  add_common(eval_cmd, true);
  add_common(flops_cmd, true);
  add_common(grad_cmd, false);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\n";
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (grad_cmd->parsed()) {
      auto entries = run_gradcheck_suite(seed_set ? seed : 1);
      bool all_pass = true;
      for (const auto& e : entries) {
        std::cout << (e.pass ? "PASS " : "FAIL ") << e.op << " max_rel_err "
                  << e.max_rel_err << "\n";
        all_pass = all_pass && e.pass;
      }
      return all_pass ? kExitOk : kExitGradcheck;
    }

    ExperimentConfig cfg = ExperimentConfig::load(config_path);
    if (seed_set) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (train_cmd->parsed()) {
      cmd_train(cfg);
    } else if (eval_cmd->parsed()) {
      cmd_eval(cfg);
    } else if (flops_cmd->parsed()) {
      cmd_flops(cfg);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitBadConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNanAbort;
  } catch (const FormatError& e) {
    std::cerr << "checkpoint/format error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace mdx::cli
