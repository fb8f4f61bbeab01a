// Command-line surface: train, downscale, upscale, roundtrip, eval, selfcheck.
// Exit codes: 0 success, 1 usage/input error, 2 training aborted, 3 selfcheck
// failure. IRN_THREADS caps kernel parallelism.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "irn/losses.hpp"
#include "irn/metrics.hpp"
#include "irn/training.hpp"

namespace fs = std::filesystem;
using namespace irn;

namespace {

void dump_latent(const Tensor& z, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write latent file: " + path);
  out.write("IRNLATNT", 8);
  const int32_t nd = z.ndim();
  out.write(reinterpret_cast<const char*>(&nd), 4);
  for (int i = 0; i < nd; ++i) {
    const int64_t d = z.dim(i);
    out.write(reinterpret_cast<const char*>(&d), 8);
  }
  out.write(reinterpret_cast<const char*>(z.data().data()),
            static_cast<std::streamsize>(z.numel() * sizeof(float)));
}

int run_train(const std::string& config_path, const std::string& resume) {
  TrainConfig cfg = config_from_json_file(config_path);
  Trainer trainer(cfg);
  if (!resume.empty()) trainer.restore(resume);
  fs::create_directories(cfg.out_dir);

  bool ok = trainer.run_pretrain();
  if (ok && (cfg.disc_warmup > 0 || cfg.iters_finetune > 0)) ok = trainer.run_finetune();
  trainer.write_log_csv(cfg.out_dir + "/train_log.csv");
  if (!ok) {
    std::cerr << "training aborted: " << trainer.abort_reason()
              << " (last periodic checkpoint retained)\n";
    return 2;
  }
  trainer.save(cfg.out_dir + "/checkpoint.irn");
  std::cout << "done; checkpoint at " << cfg.out_dir << "/checkpoint.irn\n";
  return 0;
}

int run_downscale(const std::string& model_path, const std::string& in_path,
                  const std::string& out_path, const std::string& latent_path) {
  auto lm = load_checkpoint_model(model_path);
  ImageF hr = to_float(load_png(in_path));
  if (hr.height % lm.config.scale != 0 || hr.width % lm.config.scale != 0) {
    std::cerr << "input " << hr.width << "x" << hr.height
              << " must have dimensions divisible by the model scale " << lm.config.scale
              << "\n";
    return 1;
  }
  NoGradGuard ng;
  auto [y, z] = lm.model.forward(image_to_tensor<float>(hr));
  save_png(from_float(tensor_to_image(y)), out_path);
  if (!latent_path.empty()) dump_latent(z, latent_path);
  std::cout << "wrote " << out_path << " (" << y.dim(3) << "x" << y.dim(2) << ")\n";
  return 0;
}

int run_upscale(const std::string& model_path, const std::string& in_path,
                const std::string& out_path, uint64_t seed, double alpha) {
  auto lm = load_checkpoint_model(model_path);
  ImageF lr = to_float(load_png(in_path));
  NoGradGuard ng;
  auto y = image_to_tensor<float>(lr);
  Rng rng(seed, 7);
  auto z = sample_latent<float>(
      lm.model.z_shape(1, int64_t(lr.height) * lm.config.scale,
                       int64_t(lr.width) * lm.config.scale),
      static_cast<float>(alpha), rng);
  auto xhat = lm.model.inverse(y, z);
  save_png(from_float(tensor_to_image(xhat)), out_path);
  std::cout << "wrote " << out_path << " (" << xhat.dim(3) << "x" << xhat.dim(2) << ")\n";
  return 0;
}

int run_roundtrip(const std::string& model_path, const std::string& in_path,
                  const std::string& report, uint64_t seed, double alpha) {
  auto lm = load_checkpoint_model(model_path);
  ImageF hr = to_float(load_png(in_path));
  if (hr.height % lm.config.scale != 0 || hr.width % lm.config.scale != 0) {
    std::cerr << "input " << hr.width << "x" << hr.height
              << " must have dimensions divisible by the model scale " << lm.config.scale
              << "\n";
    return 1;
  }
  NoGradGuard ng;
  auto [y, zf] = lm.model.forward(image_to_tensor<float>(hr));
  // through the 8-bit LR exactly as a stored PNG would carry it
  auto y_q = image_to_tensor<float>(to_float(from_float(tensor_to_image(y))));
  Rng rng(seed, 7);
  auto z = sample_latent<float>(lm.model.z_shape(1, hr.height, hr.width),
                                static_cast<float>(alpha), rng);
  ImageF xhat = tensor_to_image(lm.model.inverse(y_q, z));
  const double p = psnr(hr, xhat);
  const double s = ssim(hr, xhat);
  std::cout << "file=" << in_path << " psnr_db=" << p << " ssim=" << s << "\n";
  if (!report.empty()) {
    const bool fresh = !fs::exists(report);
    std::ofstream out(report, std::ios::app);
    if (!out) throw IoError("cannot write report: " + report);
    if (fresh) out << "file,psnr_db,ssim\n";
    out << fs::path(in_path).filename().string() << ","
        << (std::isinf(p) ? "inf" : std::to_string(p)) << "," << s << "\n";
  }
  return 0;
}

int run_eval(const std::string& dir_a, const std::string& dir_b, const std::string& channel,
             int border_crop, const std::string& csv) {
  MetricConfig cfg;
  cfg.channel = channel == "RGB" ? MetricConfig::Channel::RGB : MetricConfig::Channel::Y;
  cfg.border_crop = border_crop;
  PairReport report = evaluate_pair_set(dir_a, dir_b, cfg);
  std::cout << report.to_text();
  if (!csv.empty()) {
    std::ofstream out(csv);
    if (!out) throw IoError("cannot write csv: " + csv);
    out << report.to_csv();
  }
  return 0;
}

int run_selfcheck(double tol32) {
  int failures = 0;
  auto check = [&](const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << name << ": " << detail << "\n";
    if (!ok) ++failures;
  };

  {  // Haar: worked block and energy conservation
    auto x = Tensor64::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
    auto h = haar_forward(x);
    bool exact = h.data()[0] == 5.0 && h.data()[1] == -1.0 && h.data()[2] == -2.0 &&
                 h.data()[3] == 0.0;
    Rng rng(1);
    auto big = Tensor64::zeros({2, 3, 16, 16});
    for (auto& v : big.mut_data()) v = rng.uniform(-1, 1);
    double ein = 0, eout = 0;
    for (double v : big.data()) ein += v * v;
    auto hb = haar_forward(big);
    for (double v : hb.data()) eout += v * v;
    const double rel = std::abs(ein - eout) / ein;
    check("haar", exact && rel < 1e-10,
          detail::concat("worked block ", exact ? "exact" : "WRONG", ", energy drift ", rel));
  }
  {  // bijectivity in both precisions
    Rng rng(2);
    IrnModelT<float> m32(2, 3, 8, rng);
    m32.randomize_all(rng, 0.1f);
    auto x32 = Tensor::zeros({4, 3, 32, 32});
    for (auto& v : x32.mut_data()) v = static_cast<float>(rng.uniform());
    NoGradGuard ng;
    auto [y32, z32] = m32.forward(x32);
    auto back32 = m32.inverse(y32, z32);
    double err32 = 0;
    for (int64_t i = 0; i < x32.numel(); ++i)
      err32 = std::max(err32, std::abs(double(back32.data()[i]) - double(x32.data()[i])));
    check("bijectivity float32", err32 < tol32,
          detail::concat("max |inv(fwd(x)) - x| = ", err32, " (tol ", tol32, ")"));

    IrnModelT<double> m64(4, 2, 8, rng);
    m64.randomize_all(rng, 0.1);
    auto x64 = Tensor64::zeros({2, 3, 32, 32});
    for (auto& v : x64.mut_data()) v = rng.uniform();
    auto [y64, z64] = m64.forward(x64);
    auto back64 = m64.inverse(y64, z64);
    double err64 = 0;
    for (int64_t i = 0; i < x64.numel(); ++i)
      err64 = std::max(err64, std::abs(back64.data()[i] - x64.data()[i]));
    check("bijectivity float64", err64 < 1e-9,
          detail::concat("max |inv(fwd(x)) - x| = ", err64, " (tol 1e-9)"));
  }
  {  // gradient oracle on a tiny model
    Rng rng(3);
    IrnModelT<double> model(2, 2, 4, rng);
    model.randomize_all(rng, 0.2);
    auto x = Tensor64::zeros({1, 3, 16, 16});
    for (auto& v : x.mut_data()) v = rng.uniform();
    ImageF img = tensor_to_image(x);
    auto guide = image_to_tensor<double>(bicubic_resize(img, 8, 8, true));
    Rng zr(4);
    auto z = sample_latent<double>(model.z_shape(1, 16, 16), 1.0, zr);
    LossWeightsT<double> w{1, 16, 1, 0, Metric::L1, Metric::L2};
    auto f = [&] { return total_loss_pretrain(x, guide, model, z, w, false).total; };
    std::vector<TensorT<double>*> params;
    for (auto& p : model.params()) params.push_back(p.tensor);
    GradCheckOptions opts;
    opts.max_coords_per_param = 4;
    const double err = grad_check<double>(f, params, opts);
    check("gradient oracle", err < 1e-3, detail::concat("max rel err ", err, " (tol 1e-3)"));
  }
  {  // quantization round trip
    bool ok = true;
    ImageU8 all;
    all.height = 16;
    all.width = 16;
    all.data.resize(16 * 16 * 3);
    for (int i = 0; i < 256; ++i)
      for (int c = 0; c < 3; ++c) all.data[i * 3 + c] = static_cast<uint8_t>(i);
    ok = ok && from_float(to_float(all)).data == all.data;
    auto q = quantize_ste(Tensor::from_vector({2}, {0.5f, 1.2f}));
    ok = ok && q.data()[0] == 128.0f / 255.0f && q.data()[1] == 1.0f;
    check("quantization", ok, "8-bit round trip identity, rounding half away from zero");
  }
  {  // deterministic sampling
    Rng a(5), b(5);
    auto za = sample_latent<float>({64}, 1.0f, a);
    auto zb = sample_latent<float>({64}, 1.0f, b);
    bool same = std::equal(za.data().begin(), za.data().end(), zb.data().begin());
    DatasetSpec spec;
    spec.patch_size = 16;
    auto src = PatchSource::from_images({synth_texture(9, 32, 32)}, spec);
    Rng c(6), d(6);
    same = same && src.sample_patch(0, c).data == src.sample_patch(0, d).data;
    check("deterministic sampling", same, "latent and patch draws repeat under a fixed seed");
  }
  {  // fresh coupling block is the identity
    Rng rng(7);
    InvBlockT<float> block(3, 9, 4, rng);
    auto h1 = Tensor::zeros({1, 3, 8, 8});
    auto h2 = Tensor::zeros({1, 9, 8, 8});
    for (auto& v : h1.mut_data()) v = static_cast<float>(rng.uniform());
    for (auto& v : h2.mut_data()) v = static_cast<float>(rng.uniform());
    auto [o1, o2] = block.forward(h1, h2);
    bool ident = std::equal(o1.data().begin(), o1.data().end(), h1.data().begin()) &&
                 std::equal(o2.data().begin(), o2.data().end(), h2.data().begin());
    check("zero-init identity", ident, "fresh coupling block maps inputs to themselves");
  }

  if (failures) {
    std::cout << failures << " check(s) failed\n";
    return 3;
  }
  std::cout << "all checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invertible image rescaling: bijective downscale/upscale with a "
               "Gaussian latent for the lost high-frequency content"};
  app.require_subcommand(1);

  std::string config_path, resume, model_path, in_path, out_path, latent_path, report;
  std::string dir_a, dir_b, channel = "Y", csv;
  uint64_t seed = 0;
  double alpha = 1.0, tol32 = 1e-4;
  int border_crop = 0;

  auto* train = app.add_subcommand("train", "run the two-stage training loop");
  train->add_option("--config", config_path, "JSON config file")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* down = app.add_subcommand("downscale", "HR image -> LR PNG (latent discarded)");
  down->add_option("--model", model_path, "checkpoint")->required();
  down->add_option("--in", in_path, "HR PNG")->required();
  down->add_option("--out", out_path, "LR PNG")->required();
  down->add_option("--latent", latent_path, "debug dump of z");

  auto* up = app.add_subcommand("upscale", "LR PNG -> HR image with a fresh latent");
  up->add_option("--model", model_path, "checkpoint")->required();
  up->add_option("--in", in_path, "LR PNG")->required();
  up->add_option("--out", out_path, "HR PNG")->required();
  up->add_option("--seed", seed, "latent seed (default 0)");
  up->add_option("--alpha", alpha, "latent scale (default 1.0)");

  auto* rt = app.add_subcommand("roundtrip", "downscale + upscale, report PSNR/SSIM");
  rt->add_option("--model", model_path, "checkpoint")->required();
  rt->add_option("--in", in_path, "HR PNG")->required();
  rt->add_option("--report", report, "append a CSV row here");
  rt->add_option("--seed", seed, "latent seed (default 0)");
  rt->add_option("--alpha", alpha, "latent scale (default 1.0)");

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM over paired directories");
  ev->add_option("--dir-a", dir_a, "first directory")->required();
  ev->add_option("--dir-b", dir_b, "second directory")->required();
  ev->add_option("--channel", channel, "Y or RGB (default Y)");
  ev->add_option("--border-crop", border_crop, "pixels cropped from each edge");
  ev->add_option("--csv", csv, "write the CSV report here");

  auto* sc = app.add_subcommand("selfcheck", "run the embedded verification battery");
  sc->add_option("--tol32", tol32, "float32 bijectivity tolerance (debug)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(config_path, resume);
    if (*down) return run_downscale(model_path, in_path, out_path, latent_path);
    if (*up) return run_upscale(model_path, in_path, out_path, seed, alpha);
    if (*rt) return run_roundtrip(model_path, in_path, report, seed, alpha);
    if (*ev) return run_eval(dir_a, dir_b, channel, border_crop, csv);
    if (*sc) return run_selfcheck(tol32);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
