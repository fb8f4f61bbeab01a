#include "irn/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace irn {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <class T>
void AdamStateT<T>::init_like(const std::vector<NamedParam<T>>& params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(p.tensor->numel(), T(0));
    v.emplace_back(p.tensor->numel(), T(0));
  }
  t = 0;
}

template <class T>
void adam_step(const std::vector<NamedParam<T>>& params, AdamStateT<T>& state, T lr) {
  IRN_REQUIRE(state.m.size() == params.size(), "adam_step: state holds ", state.m.size(),
              " buffers for ", params.size(), " parameters");
  for (size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].tensor->grad();
    for (T gv : g)
      IRN_REQUIRE(std::isfinite(static_cast<double>(gv)),
                  "non-finite gradient in parameter ", params[i].name);
  }
  state.t += 1;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1), state.t));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2), state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].tensor->mut_data();
    auto g = params[i].tensor->grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < theta.size(); ++j) {
      const T gj = j < g.size() ? g[j] : T(0);
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * gj * gj;
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      theta[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

template struct AdamStateT<float>;
template struct AdamStateT<double>;
template void adam_step<float>(const std::vector<NamedParam<float>>&, AdamStateT<float>&, float);
template void adam_step<double>(const std::vector<NamedParam<double>>&, AdamStateT<double>&,
                                double);

// ---------------------------------------------------------------------------
// Schedule / config
// ---------------------------------------------------------------------------

double lr_at(const Schedule& s, int64_t iter) {
  IRN_REQUIRE(iter >= 0, "lr_at: negative iteration ", iter);
  int halvings = 0;
  for (int64_t m : s.milestones)
    if (m <= iter) ++halvings;
  return s.base_lr * std::pow(s.factor, halvings);
}

namespace {

std::vector<int64_t> scaled_milestones(const std::vector<int64_t>& paper, int64_t iters,
                                       int64_t paper_iters) {
  std::vector<int64_t> out;
  for (int64_t m : paper) {
    int64_t v = static_cast<int64_t>(
        std::llround(static_cast<double>(m) * static_cast<double>(iters) / paper_iters));
    // at very small iteration counts scaled milestones can collide; keep the
    // list strictly increasing
    if (v >= 1 && v <= iters && (out.empty() || v > out.back())) out.push_back(v);
  }
  return out;
}

}  // namespace

Schedule TrainConfig::pretrain_schedule() const {
  Schedule s;
  s.base_lr = lr;
  s.milestones =
      milestones.empty() ? scaled_milestones({10000, 20000, 30000, 40000}, iters_pretrain, 50000)
                         : milestones;
  return s;
}

Schedule TrainConfig::finetune_schedule() const {
  Schedule s;
  s.base_lr = lr_finetune;
  s.milestones = milestones_finetune.empty()
                     ? scaled_milestones({5000, 10000}, iters_finetune, 20000)
                     : milestones_finetune;
  return s;
}

void TrainConfig::validate() const {
  IRN_REQUIRE(scale >= 2 && (scale & (scale - 1)) == 0, "config: scale must be a power of 2, got ",
              scale);
  IRN_REQUIRE(patch_size > 0 && patch_size % scale == 0, "config: patch_size ", patch_size,
              " must be divisible by scale ", scale);
  IRN_REQUIRE(batch_size >= 1, "config: batch_size must be >= 1, got ", batch_size);
  IRN_REQUIRE(iters_pretrain >= 0 && iters_finetune >= 0 && disc_warmup >= 0,
              "config: iteration counts must be >= 0");
  IRN_REQUIRE(lr > 0 && lr_finetune > 0, "config: learning rates must be positive");
  IRN_REQUIRE(growth >= 1 && inv_blocks_per_module >= 1, "config: growth/inv_blocks must be >= 1");
  auto check_weights = [](const LossWeights& w, const char* which) {
    IRN_REQUIRE(w.recon >= 0 && w.guide >= 0 && w.distr >= 0, "config: ", which,
                " lambdas must be >= 0");
    IRN_REQUIRE(w.percp == 0, "config: perceptual loss is unsupported, ", which,
                " lambda percp must be 0");
  };
  check_weights(lambdas, "pretrain");
  check_weights(lambdas_finetune, "finetune");
  for (size_t i = 1; i < milestones.size(); ++i)
    IRN_REQUIRE(milestones[i] > milestones[i - 1], "config: milestones must be increasing");
  for (size_t i = 1; i < milestones_finetune.size(); ++i)
    IRN_REQUIRE(milestones_finetune[i] > milestones_finetune[i - 1],
                "config: finetune milestones must be increasing");
  IRN_REQUIRE(!dataset_dir.empty() || (synthetic_count >= 1 && synthetic_size >= 16),
              "config: synthetic corpus needs count >= 1 and size >= 16");
  IRN_REQUIRE(log_every >= 1, "config: log_every must be >= 1");
}

namespace {

Metric metric_from_string(const std::string& s) {
  if (s == "l1" || s == "L1") return Metric::L1;
  if (s == "l2" || s == "L2") return Metric::L2;
  throw ContractViolation("config: unknown metric '" + s + "' (expected l1 or l2)");
}

std::string metric_to_string(Metric m) { return m == Metric::L1 ? "l1" : "l2"; }

LossWeights weights_from_json(const nlohmann::json& j, LossWeights defaults) {
  LossWeights w = defaults;
  if (j.contains("recon")) w.recon = j.at("recon").get<float>();
  if (j.contains("guide")) w.guide = j.at("guide").get<float>();
  if (j.contains("distr")) w.distr = j.at("distr").get<float>();
  if (j.contains("percp")) w.percp = j.at("percp").get<float>();
  return w;
}

}  // namespace

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("scale")) c.scale = j.at("scale").get<int>();
  if (j.contains("patch_size")) c.patch_size = j.at("patch_size").get<int>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("iters_pretrain")) c.iters_pretrain = j.at("iters_pretrain").get<int64_t>();
  if (j.contains("iters_finetune")) c.iters_finetune = j.at("iters_finetune").get<int64_t>();
  if (j.contains("disc_warmup")) c.disc_warmup = j.at("disc_warmup").get<int64_t>();
  if (j.contains("lr")) c.lr = j.at("lr").get<double>();
  if (j.contains("milestones")) c.milestones = j.at("milestones").get<std::vector<int64_t>>();
  if (j.contains("lr_finetune")) c.lr_finetune = j.at("lr_finetune").get<double>();
  if (j.contains("milestones_finetune"))
    c.milestones_finetune = j.at("milestones_finetune").get<std::vector<int64_t>>();
  if (j.contains("lambdas")) c.lambdas = weights_from_json(j.at("lambdas"), c.lambdas);
  if (j.contains("lambdas_finetune"))
    c.lambdas_finetune = weights_from_json(j.at("lambdas_finetune"), c.lambdas_finetune);
  if (j.contains("recon_metric")) {
    c.lambdas.recon_metric = metric_from_string(j.at("recon_metric").get<std::string>());
    c.lambdas_finetune.recon_metric = c.lambdas.recon_metric;
  }
  if (j.contains("guide_metric")) {
    c.lambdas.guide_metric = metric_from_string(j.at("guide_metric").get<std::string>());
    c.lambdas_finetune.guide_metric = c.lambdas.guide_metric;
  }
  if (j.contains("growth")) c.growth = j.at("growth").get<int>();
  if (j.contains("inv_blocks_per_module"))
    c.inv_blocks_per_module = j.at("inv_blocks_per_module").get<int>();
  if (j.contains("clamp_scale")) c.clamp_scale = j.at("clamp_scale").get<double>();
  if (j.contains("disc_width_mult")) c.disc_width_mult = j.at("disc_width_mult").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    if (d.contains("dir")) c.dataset_dir = d.at("dir").get<std::string>();
    if (d.contains("glob")) c.dataset_glob = d.at("glob").get<std::string>();
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    if (s.contains("count")) c.synthetic_count = s.at("count").get<int>();
    if (s.contains("size")) c.synthetic_size = s.at("size").get<int>();
  }
  if (j.contains("flips")) {
    const auto& f = j.at("flips");
    if (f.contains("horizontal")) c.hflip = f.at("horizontal").get<bool>();
    if (f.contains("vertical")) c.vflip = f.at("vertical").get<bool>();
  }
  if (j.contains("ckpt_every")) c.ckpt_every = j.at("ckpt_every").get<int64_t>();
  if (j.contains("log_every")) c.log_every = j.at("log_every").get<int64_t>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  c.validate();
  return c;
}

TrainConfig config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation("config: invalid JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["scale"] = c.scale;
  j["patch_size"] = c.patch_size;
  j["batch_size"] = c.batch_size;
  j["iters_pretrain"] = c.iters_pretrain;
  j["iters_finetune"] = c.iters_finetune;
  j["disc_warmup"] = c.disc_warmup;
  j["lr"] = c.lr;
  j["milestones"] = c.pretrain_schedule().milestones;
  j["lr_finetune"] = c.lr_finetune;
  j["milestones_finetune"] = c.finetune_schedule().milestones;
  j["lambdas"] = {{"recon", c.lambdas.recon},
                  {"guide", c.lambdas.guide},
                  {"distr", c.lambdas.distr},
                  {"percp", c.lambdas.percp}};
  j["lambdas_finetune"] = {{"recon", c.lambdas_finetune.recon},
                           {"guide", c.lambdas_finetune.guide},
                           {"distr", c.lambdas_finetune.distr},
                           {"percp", c.lambdas_finetune.percp}};
  j["recon_metric"] = metric_to_string(c.lambdas.recon_metric);
  j["guide_metric"] = metric_to_string(c.lambdas.guide_metric);
  j["growth"] = c.growth;
  j["inv_blocks_per_module"] = c.inv_blocks_per_module;
  j["clamp_scale"] = c.clamp_scale;
  j["disc_width_mult"] = c.disc_width_mult;
  j["seed"] = c.seed;
  j["dataset"] = {{"dir", c.dataset_dir}, {"glob", c.dataset_glob}};
  j["synthetic"] = {{"count", c.synthetic_count}, {"size", c.synthetic_size}};
  j["flips"] = {{"horizontal", c.hflip}, {"vertical", c.vflip}};
  j["ckpt_every"] = c.ckpt_every;
  j["log_every"] = c.log_every;
  j["out_dir"] = c.out_dir;
  return j;
}

std::string log_to_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream os;
  os << "iter,lr,loss_total,loss_recon,loss_guide,loss_distr\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.iter << "," << r.lr << "," << r.total << "," << r.recon << "," << r.guide << ","
       << r.distr << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

// synthetic corpus seeds are fixed so held-out evaluation sets can stay
// disjoint by convention (training: 1000.., held-out suites use >= 20000)
constexpr uint64_t kCorpusSeedBase = 1000;

PatchSource build_source(const TrainConfig& cfg, bool load_data) {
  DatasetSpec spec;
  spec.patch_size = cfg.patch_size;
  spec.hflip = cfg.hflip;
  spec.vflip = cfg.vflip;
  spec.seed = cfg.seed;
  if (!load_data) return PatchSource::from_images({}, spec);
  if (!cfg.dataset_dir.empty()) {
    spec.directory = cfg.dataset_dir;
    spec.glob = cfg.dataset_glob;
    auto src = PatchSource::from_directory(spec);
    IRN_REQUIRE(src.size() > 0, "dataset: no usable images in ", cfg.dataset_dir,
                " matching ", cfg.dataset_glob);
    return src;
  }
  return PatchSource::from_images(
      synth_corpus(kCorpusSeedBase, cfg.synthetic_count, cfg.synthetic_size), spec);
}

Rng init_rng(uint64_t seed, uint64_t stream) { return Rng(seed, stream); }

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, bool load_data)
    : cfg_(cfg),
      data_(build_source(cfg, load_data)),
      model_([&] {
        Rng r = init_rng(cfg.seed, 100);
        return IrnModel(cfg.scale, cfg.inv_blocks_per_module, cfg.growth, r,
                        static_cast<float>(cfg.clamp_scale));
      }()),
      rng_data_(init_rng(cfg.seed, 1)),
      rng_latent_(init_rng(cfg.seed, 2)) {
  cfg_.validate();
  auto params = model_.params();
  opt_.init_like(params);
}

Discriminator& Trainer::discriminator() {
  if (!disc_) {
    Rng r = init_rng(cfg_.seed, 101);
    disc_.emplace(cfg_.patch_size, cfg_.disc_width_mult, r);
    disc_opt_.init_like(disc_->params());
  }
  return *disc_;
}

std::pair<Tensor, Tensor> Trainer::make_batch() {
  const int p = cfg_.patch_size;
  const int lr_size = p / cfg_.scale;
  std::vector<ImageF> xs, gs;
  xs.reserve(cfg_.batch_size);
  gs.reserve(cfg_.batch_size);
  for (int b = 0; b < cfg_.batch_size; ++b) {
    const size_t idx = static_cast<size_t>(rng_data_.uniform_int(data_.size()));
    ImageF patch = data_.sample_patch(idx, rng_data_);
    gs.push_back(bicubic_resize(patch, lr_size, lr_size, true));
    xs.push_back(std::move(patch));
  }
  return {images_to_tensor<float>(xs), images_to_tensor<float>(gs)};
}

void Trainer::checkpoint_if_due(int64_t done_iters) {
  if (cfg_.ckpt_every > 0 && done_iters % cfg_.ckpt_every == 0) {
    std::filesystem::create_directories(cfg_.out_dir);
    save(cfg_.out_dir + "/checkpoint.irn");
  }
}

bool Trainer::run_pretrain() {
  IRN_REQUIRE(data_.size() > 0, "pretrain: empty dataset");
  const Schedule sched = cfg_.pretrain_schedule();
  auto params = model_.params();
  const int p = cfg_.patch_size;
  for (int64_t it = iter_pre_; it < cfg_.iters_pretrain; ++it) {
    const double lr = lr_at(sched, it);
    auto [x, guide] = make_batch();
    auto z_draw = sample_latent<float>(model_.z_shape(cfg_.batch_size, p, p), 1.0f, rng_latent_);
    auto bd = total_loss_pretrain(x, guide, model_, z_draw, cfg_.lambdas, true);
    const double total = bd.total.item();
    if (!std::isfinite(total)) {
      abort_ = detail::concat("pretrain: non-finite loss at iteration ", it);
      return false;
    }
    backward(bd.total);
    try {
      adam_step(params, opt_, static_cast<float>(lr));
    } catch (const ContractViolation& e) {
      abort_ = detail::concat("pretrain: ", e.what(), " at iteration ", it);
      return false;
    }
    model_.zero_grad();
    iter_pre_ = it + 1;
    if ((it + 1) % cfg_.log_every == 0 || it == 0 || it + 1 == cfg_.iters_pretrain)
      log_.push_back({"pretrain", it + 1, lr, total, bd.recon.item(), bd.guide.item(),
                      bd.distr.item()});
    checkpoint_if_due(it + 1);
  }
  return true;
}

bool Trainer::run_finetune() {
  IRN_REQUIRE(data_.size() > 0, "finetune: empty dataset");
  const Schedule sched = cfg_.finetune_schedule();
  auto& disc = discriminator();
  auto disc_params = disc.params();
  auto params = model_.params();
  const int p = cfg_.patch_size;
  bool disc_magnitude_warned = false;

  // discriminator warmup: the model is frozen (no graph is recorded for it)
  for (int64_t w = warmup_done_; w < cfg_.disc_warmup; ++w) {
    auto [x, guide] = make_batch();
    (void)guide;
    auto z_draw = sample_latent<float>(model_.z_shape(cfg_.batch_size, p, p), 1.0f, rng_latent_);
    Tensor xhat;
    {
      NoGradGuard ng;
      xhat = generate_pass(model_, x, z_draw, true).xhat;
    }
    auto d_loss = adversarial_d_loss(disc.forward(x), disc.forward(xhat));
    if (!std::isfinite(static_cast<double>(d_loss.item()))) {
      abort_ = detail::concat("finetune warmup: non-finite discriminator loss at iteration ", w);
      return false;
    }
    backward(d_loss);
    try {
      adam_step(disc_params, disc_opt_, static_cast<float>(lr_at(sched, 0)));
    } catch (const ContractViolation& e) {
      abort_ = detail::concat("finetune warmup: ", e.what(), " at iteration ", w);
      return false;
    }
    disc.zero_grad();
    warmup_done_ = w + 1;
  }

  // alternating 1:1 discriminator / generator steps
  for (int64_t it = iter_ft_; it < cfg_.iters_finetune; ++it) {
    const double lr = lr_at(sched, it);
    auto [x, guide] = make_batch();
    auto z_draw = sample_latent<float>(model_.z_shape(cfg_.batch_size, p, p), 1.0f, rng_latent_);
    auto pass = generate_pass(model_, x, z_draw, true);

    // discriminator step on the detached reconstruction
    auto t_real = disc.forward(x);
    auto t_fake = disc.forward(pass.xhat.detach());
    double t_max = 0;
    for (float v : t_real.data()) t_max = std::max(t_max, std::abs(static_cast<double>(v)));
    for (float v : t_fake.data()) t_max = std::max(t_max, std::abs(static_cast<double>(v)));
    if (t_max > 50 && !disc_magnitude_warned) {
      std::cerr << "warning: discriminator logit magnitude " << t_max << " at iteration " << it
                << " (possible collapse)\n";
      disc_magnitude_warned = true;
    }
    auto d_loss = adversarial_d_loss(t_real, t_fake);
    const double d_val = d_loss.item();
    backward(d_loss);
    try {
      adam_step(disc_params, disc_opt_, static_cast<float>(lr));
    } catch (const ContractViolation& e) {
      abort_ = detail::concat("finetune: ", e.what(), " at iteration ", it);
      return false;
    }
    disc.zero_grad();

    // generator step against the updated discriminator
    auto recon = hr_recon_loss(x, pass.xhat, cfg_.lambdas_finetune.recon_metric);
    auto guide_l = lr_guide_loss(pass.y, guide, cfg_.lambdas_finetune.guide_metric);
    auto js = generator_js_loss(disc, pass.xhat);
    auto total = add(add(mul(recon, cfg_.lambdas_finetune.recon),
                         mul(guide_l, cfg_.lambdas_finetune.guide)),
                     mul(js, cfg_.lambdas_finetune.distr));
    const double total_val = total.item();
    if (!std::isfinite(total_val) || !std::isfinite(d_val)) {
      abort_ = detail::concat("finetune: non-finite loss at iteration ", it);
      return false;
    }
    backward(total);
    try {
      adam_step(params, opt_, static_cast<float>(lr));
    } catch (const ContractViolation& e) {
      abort_ = detail::concat("finetune: ", e.what(), " at iteration ", it);
      return false;
    }
    model_.zero_grad();
    iter_ft_ = it + 1;
    if ((it + 1) % cfg_.log_every == 0 || it == 0 || it + 1 == cfg_.iters_finetune)
      log_.push_back({"finetune", cfg_.iters_pretrain + it + 1, lr, total_val,
                      static_cast<double>(recon.item()), static_cast<double>(guide_l.item()),
                      static_cast<double>(js.item())});
    checkpoint_if_due(it + 1);
  }
  return true;
}

void Trainer::write_log_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write log: " + path);
  out << log_to_csv(log_);
}

}  // namespace irn
