#include "mdx/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"

namespace mdx::train {

using cd = std::complex<double>;

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t tti_seed(uint64_t master, int iteration, int k) {
  return splitmix64(master ^ splitmix64(static_cast<uint64_t>(iteration) * 131071 + k));
}

// tensors serialized into a checkpoint: learnables plus BN running stats
struct NamedVec {
  std::string name;
  ad::Shape shape;
  const std::vector<double>* data;
};

std::vector<NamedVec> checkpoint_tensors(const model::MdxParams& p) {
  std::vector<NamedVec> out;
  for (auto& [name, t] : p.named())
    out.push_back({name, t.shape(), &t.value()});
  for (size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& st = p.blocks[l].bn_state;
    std::string pre = "block" + std::to_string(l) + ".";
    out.push_back({pre + "bn_running_mean",
                   {static_cast<int>(st.running_mean.size())}, &st.running_mean});
    out.push_back({pre + "bn_running_var",
                   {static_cast<int>(st.running_var.size())}, &st.running_var});
  }
  return out;
}

void write_all(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

}  // namespace

Tensor bce_loss(const rx::LlrGrid& llr,
                const std::vector<std::vector<int>>& payload_bits) {
  const ad::Shape& s = llr.llr.shape();
  if (s.size() != 3) throw ShapeError("bce_loss: llr must be [n_data,n_tx,B]");
  int n_data = s[0], n_tx = s[1], B = s[2];
  if (payload_bits.size() != static_cast<size_t>(n_tx))
    throw ShapeError("bce_loss: layer count mismatch");
  std::vector<double> tgt(static_cast<size_t>(n_data) * n_tx * B);
  for (int t = 0; t < n_tx; ++t) {
    if (payload_bits[t].size() != static_cast<size_t>(n_data) * B)
      throw ShapeError("bce_loss: bit count mismatch");
    for (int row = 0; row < n_data; ++row)
      for (int b = 0; b < B; ++b)
        tgt[(static_cast<size_t>(row) * n_tx + t) * B + b] =
            payload_bits[t][static_cast<size_t>(row) * B + b];
  }
  return ad::reduce_mean(
      ad::bce_with_logits(llr.llr, Tensor::from_data(s, std::move(tgt))));
}

Tensor mse_loss(const ad::ComplexPair& h_hat, const chan::ChannelRealization& h_true,
                const phy::GridLayout& layout) {
  int n_re = layout.n_re();
  if (h_hat.shape() != ad::Shape{n_re, h_true.n_rx, h_true.n_tx})
    throw ShapeError("mse_loss: estimate/truth shape mismatch");
  std::vector<double> tre(h_true.H.size()), tim(h_true.H.size());
  for (size_t i = 0; i < h_true.H.size(); ++i) {
    tre[i] = h_true.H[i].real();
    tim[i] = h_true.H[i].imag();
  }
  ad::ComplexPair truth{
      Tensor::from_data({n_re, h_true.n_rx, h_true.n_tx}, std::move(tre)),
      Tensor::from_data({n_re, h_true.n_rx, h_true.n_tx}, std::move(tim))};
  Tensor err = ad::cabs2(ad::csub(h_hat, truth));  // [n_re,n_rx,n_tx]
  return ad::reduce_mean(ad::gather0(err, layout.data_indices()));
}

Tensor total_loss(const std::vector<Tensor>& bce_d,
                  const std::vector<Tensor>& bce_dals,
                  const std::vector<Tensor>& mse,
                  const std::vector<double>& snr_db, double lambda) {
  size_t n = bce_d.size();
  if (bce_dals.size() != n || mse.size() != n || snr_db.size() != n)
    throw ShapeError("total_loss: per-TTI list sizes differ");
  if (n == 0) throw ConfigError("total_loss: empty batch");
  Tensor acc;
  for (size_t i = 0; i < n; ++i) {
    double snr = std::pow(10.0, snr_db[i] / 10.0);
    double w = std::log2(1.0 + snr);
    Tensor term = ad::scale(
        ad::add(ad::add(bce_d[i], bce_dals[i]), ad::scale(mse[i], lambda)), w);
    acc = i == 0 ? term : ad::add(acc, term);
  }
  return ad::scale(acc, 1.0 / static_cast<double>(n));
}

TrainResult train(const TrainConfig& cfg) {
  if (cfg.batch_size < 1 || cfg.iterations < 0 || cfg.lambda < 0.0)
    throw ConfigError("train: bad config");
  TrainResult res;
  res.params = model::init_params(cfg.arch, splitmix64(cfg.seed));
  auto learnables = res.params.learnables();
  ad::Adam opt(cfg.lr);

  chan::TdlProfile profile;
  chan::DropConfig drop;
  drop.max_layers = cfg.max_layers;
  drop.n_rx = cfg.n_rx;
  drop.snr_min_db = cfg.snr_min_db;
  drop.snr_max_db = cfg.snr_max_db;
  if (!cfg.block_fading) profile = chan::TdlProfile::load(cfg.tdl_profile_path);

  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Tensor> bces_d, bces_dals, mses;
    std::vector<double> snrs;
    uint64_t first_seed = 0;
    for (int k = 0; k < cfg.batch_size; ++k) {
      uint64_t s = tti_seed(cfg.seed, it, k);
      if (k == 0) first_seed = s;
      auto scen = chan::sample_drop(drop, s);
      std::mt19937_64 rng(splitmix64(s));
      int bits = cfg.modulations[rng() % cfg.modulations.size()];
      const auto& c = phy::Constellation::qam(bits);
      auto layout = phy::build_grid_layout(cfg.prbs, scen.n_layers);
      auto rg = phy::random_grid(layout, c, splitmix64(s + 1));
      chan::ChannelRealization ch =
          cfg.block_fading
              ? chan::block_fading_channel(layout.F, layout.S, cfg.n_rx,
                                           scen.n_layers, scen.snr_db,
                                           splitmix64(s + 2))
              : chan::generate_channel(profile, scen, drop, layout.F, layout.S,
                                       splitmix64(s + 2));
      auto y = chan::apply_channel(rg, ch, splitmix64(s + 3));
      std::vector<std::vector<cd>> pilots;
      for (int t = 0; t < scen.n_layers; ++t)
        pilots.push_back(phy::generate_dmrs(t, layout, splitmix64(s + 1)));
      double sigma2 =
          cfg.genie_noise ? ch.N0
                          : rx::estimate_noise_variance(y, pilots, layout, cfg.n_rx);
      auto out = model::mdx_forward(y, pilots, layout, cfg.n_rx, sigma2,
                                    res.params, c, true);
      bces_d.push_back(bce_loss(out.llr_final, rg.payload_bits));
      bces_dals.push_back(bce_loss(out.llr_intermediate, rg.payload_bits));
      mses.push_back(mse_loss(out.h_nn, ch, layout));
      snrs.push_back(scen.snr_db);
    }
    Tensor loss = total_loss(bces_d, bces_dals, mses, snrs, cfg.lambda);
    if (!std::isfinite(loss.item()))
      throw NumericalError("train: non-finite loss at iteration " +
                           std::to_string(it) + " (first TTI seed " +
                           std::to_string(first_seed) + ")");
    ad::backward(loss);
    opt.step(learnables);

    TraceRow row;
    row.iteration = it;
    row.loss = loss.item();
    double sd = 0.0, sdals = 0.0, sm = 0.0, ssnr = 0.0;
    for (size_t i = 0; i < bces_d.size(); ++i) {
      sd += bces_d[i].item();
      sdals += bces_dals[i].item();
      sm += mses[i].item();
      ssnr += snrs[i];
    }
    row.bce_d = sd / bces_d.size();
    row.bce_dals = sdals / bces_d.size();
    row.mse = sm / bces_d.size();
    row.mean_snr_db = ssnr / bces_d.size();
    res.trace.push_back(row);

    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
        (it + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.out_dir + "/checkpoint_" + std::to_string(it + 1) + ".mdxc",
                      res.params, &opt, it + 1, cfg.seed, "");
  }
  return res;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace,
                     const std::string& config_hash, uint64_t seed) {
  std::ofstream f(path);
  if (!f) throw FormatError("write_trace_csv: cannot open " + path);
  f << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  f << "iteration,loss,bce_d,bce_dals,mse,mean_snr_db\n";
  f.precision(17);
  for (const auto& r : trace)
    f << r.iteration << ',' << r.loss << ',' << r.bce_d << ',' << r.bce_dals << ','
      << r.mse << ',' << r.mean_snr_db << "\n";
}

void save_checkpoint(const std::string& path, const model::MdxParams& params,
                     const ad::Adam* opt, int64_t iteration, uint64_t seed,
                     const std::string& config_hash) {
  auto tensors = checkpoint_tensors(params);

  // optimizer moments ride along under reserved names
  std::vector<std::pair<std::string, ad::Adam::Moments>> moments;
  if (opt) {
    auto* mopt = const_cast<ad::Adam*>(opt);
    for (auto& [name, t] : params.named()) {
      auto it = mopt->moments().find(t.node().get());
      if (it != mopt->moments().end()) moments.emplace_back(name, it->second);
    }
  }

  nlohmann::json manifest;
  manifest["meta"] = {{"iteration", iteration},
                      {"seed", seed},
                      {"config_hash", config_hash},
                      {"adam_step", opt ? opt->step_count() : 0},
                      {"arch",
                       {{"n_blocks", params.cfg.n_blocks},
                        {"filters", params.cfg.filters},
                        {"kernel", params.cfg.kernel}}}};
  nlohmann::json jt = nlohmann::json::array();
  uint64_t offset = 0;
  auto add_entry = [&](const std::string& name, const ad::Shape& shape, size_t n) {
    jt.push_back({{"name", name}, {"shape", shape}, {"dtype", "f64"}, {"offset", offset}});
    offset += n * sizeof(double);
  };
  for (const auto& t : tensors) add_entry(t.name, t.shape, t.data->size());
  for (const auto& [name, m] : moments) {
    add_entry("adam.m." + name, {static_cast<int>(m.m.size())}, m.m.size());
    add_entry("adam.v." + name, {static_cast<int>(m.v.size())}, m.v.size());
  }
  manifest["tensors"] = jt;
  std::string mstr = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("save_checkpoint: cannot open " + path);
  const char magic[4] = {'M', 'D', 'X', 'C'};
  uint32_t version = 1;
  uint64_t mlen = mstr.size();
  write_all(f, magic, 4);
  write_all(f, &version, sizeof(version));
  write_all(f, &mlen, sizeof(mlen));
  write_all(f, mstr.data(), mstr.size());
  for (const auto& t : tensors)
    write_all(f, t.data->data(), t.data->size() * sizeof(double));
  for (const auto& [name, m] : moments) {
    write_all(f, m.m.data(), m.m.size() * sizeof(double));
    write_all(f, m.v.data(), m.v.size() * sizeof(double));
  }
  if (!f) throw FormatError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("load_checkpoint: cannot open " + path);
  char magic[4];
  uint32_t version = 0;
  uint64_t mlen = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!f || std::memcmp(magic, "MDXC", 4) != 0)
    throw FormatError("load_checkpoint: bad magic");
  if (version != 1) throw FormatError("load_checkpoint: unsupported version");
  std::string mstr(mlen, '\0');
  f.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw FormatError("load_checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mstr);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
  }

  Checkpoint ck;
  const auto& meta = manifest.at("meta");
  ck.iteration = meta.at("iteration").get<int64_t>();
  ck.seed = meta.at("seed").get<uint64_t>();
  ck.config_hash = meta.at("config_hash").get<std::string>();
  ck.adam_step = meta.at("adam_step").get<int64_t>();
  model::MdxConfig arch;
  arch.n_blocks = meta.at("arch").at("n_blocks").get<int>();
  arch.filters = meta.at("arch").at("filters").get<int>();
  arch.kernel = meta.at("arch").at("kernel").get<int>();
  ck.params = model::init_params(arch, 0);

  std::streampos payload_start = f.tellg();
  auto read_vec = [&](uint64_t offset, size_t n) {
    std::vector<double> v(n);
    f.seekg(payload_start + static_cast<std::streamoff>(offset));
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw FormatError("load_checkpoint: truncated payload");
    return v;
  };

  std::map<std::string, ad::Adam::Moments> mtmp;
  for (const auto& e : manifest.at("tensors")) {
    std::string name = e.at("name").get<std::string>();
    auto shape = e.at("shape").get<std::vector<int>>();
    if (e.at("dtype").get<std::string>() != "f64")
      throw FormatError("load_checkpoint: unsupported dtype");
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    auto v = read_vec(e.at("offset").get<uint64_t>(), n);
    if (name.rfind("adam.m.", 0) == 0) {
      mtmp[name.substr(7)].m = std::move(v);
    } else if (name.rfind("adam.v.", 0) == 0) {
      mtmp[name.substr(7)].v = std::move(v);
    } else if (name.find("bn_running_mean") != std::string::npos) {
      int l = std::stoi(name.substr(5));
      ck.params.blocks.at(l).bn_state.running_mean = std::move(v);
    } else if (name.find("bn_running_var") != std::string::npos) {
      int l = std::stoi(name.substr(5));
      ck.params.blocks.at(l).bn_state.running_var = std::move(v);
    } else {
      bool found = false;
      for (auto& [pname, t] : ck.params.named()) {
        if (pname != name) continue;
        auto tt = t;
        if (tt.shape() != ad::Shape(shape.begin(), shape.end()))
          throw FormatError("load_checkpoint: shape mismatch for " + name);
        tt.mutable_value() = std::move(v);
        found = true;
        break;
      }
      if (!found) throw FormatError("load_checkpoint: unknown tensor " + name);
    }
  }
  for (auto& [name, m] : mtmp) ck.adam_moments.emplace_back(name, std::move(m));
  return ck;
}

void restore_optimizer(const Checkpoint& ck, const model::MdxParams& params,
                       ad::Adam& opt) {
  opt.set_step_count(ck.adam_step);
  for (const auto& [name, m] : ck.adam_moments) {
    for (auto& [pname, t] : params.named()) {
      if (pname == name) {
        opt.moments()[t.node().get()] = m;
        break;
      }
    }
  }
}

}  // namespace mdx::train
