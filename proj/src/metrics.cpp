#include "irn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>

namespace irn {

namespace {

Plane crop_plane(const Plane& p, int border) {
  if (border == 0) return p;
  Plane out;
  out.height = p.height - 2 * border;
  out.width = p.width - 2 * border;
  out.v.resize(static_cast<size_t>(out.height) * out.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.v[y * out.width + x] = p.at(y + border, x + border);
  return out;
}

// channel planes on the 0-255 scale, after border crop
std::vector<Plane> metric_planes(const ImageF& img, const MetricConfig& cfg) {
  IRN_REQUIRE(cfg.border_crop >= 0 &&
                  2 * cfg.border_crop < std::min(img.height, img.width),
              "border_crop ", cfg.border_crop, " too large for ", img.width, "x", img.height);
  std::vector<Plane> planes;
  if (cfg.channel == MetricConfig::Channel::Y) {
    planes.push_back(crop_plane(rgb_to_y(img), cfg.border_crop));
  } else {
    for (int c = 0; c < 3; ++c) {
      Plane p;
      p.height = img.height;
      p.width = img.width;
      p.v.resize(static_cast<size_t>(img.height) * img.width);
      for (size_t i = 0; i < p.v.size(); ++i) p.v[i] = 255.0 * img.data[3 * i + c];
      planes.push_back(crop_plane(p, cfg.border_crop));
    }
  }
  return planes;
}

void check_same_dims(const ImageF& a, const ImageF& b, const char* what) {
  IRN_REQUIRE(a.height == b.height && a.width == b.width, what, ": size mismatch ", a.width,
              "x", a.height, " vs ", b.width, "x", b.height);
}

// 11x11 Gaussian window, sigma 1.5, normalized
const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> win(11 * 11);
    double total = 0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 11; ++x) {
        double dy = y - 5, dx = x - 5;
        win[y * 11 + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
        total += win[y * 11 + x];
      }
    for (auto& v : win) v /= total;
    return win;
  }();
  return w;
}

double ssim_plane(const Plane& a, const Plane& b) {
  constexpr double C1 = (0.01 * 255) * (0.01 * 255);
  constexpr double C2 = (0.03 * 255) * (0.03 * 255);
  const auto& win = ssim_window();
  const int H = a.height, W = a.width;
  const int oh = H - 10, ow = W - 10;  // valid positions
  double acc = 0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double mu1 = 0, mu2 = 0, s11 = 0, s22 = 0, s12 = 0;
      for (int wy = 0; wy < 11; ++wy)
        for (int wx = 0; wx < 11; ++wx) {
          const double wv = win[wy * 11 + wx];
          const double va = a.at(y + wy, x + wx);
          const double vb = b.at(y + wy, x + wx);
          mu1 += wv * va;
          mu2 += wv * vb;
          s11 += wv * va * va;
          s22 += wv * vb * vb;
          s12 += wv * va * vb;
        }
      const double var1 = s11 - mu1 * mu1;
      const double var2 = s22 - mu2 * mu2;
      const double cov = s12 - mu1 * mu2;
      acc += ((2 * mu1 * mu2 + C1) * (2 * cov + C2)) /
             ((mu1 * mu1 + mu2 * mu2 + C1) * (var1 + var2 + C2));
    }
  return acc / (static_cast<double>(oh) * ow);
}

}  // namespace

double psnr(const ImageF& a, const ImageF& b, const MetricConfig& cfg) {
  check_same_dims(a, b, "psnr");
  const auto pa = metric_planes(a, cfg);
  const auto pb = metric_planes(b, cfg);
  double se = 0;
  size_t n = 0;
  for (size_t p = 0; p < pa.size(); ++p) {
    for (size_t i = 0; i < pa[p].v.size(); ++i) {
      const double d = pa[p].v[i] - pb[p].v[i];
      se += d * d;
    }
    n += pa[p].v.size();
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(n);
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const ImageF& a, const ImageF& b, const MetricConfig& cfg) {
  check_same_dims(a, b, "ssim");
  const auto pa = metric_planes(a, cfg);
  const auto pb = metric_planes(b, cfg);
  IRN_REQUIRE(pa[0].height >= 11 && pa[0].width >= 11, "ssim: image too small (",
              pa[0].width, "x", pa[0].height, " after crop), need at least 11x11");
  double acc = 0;
  for (size_t p = 0; p < pa.size(); ++p) acc += ssim_plane(pa[p], pb[p]);
  return acc / static_cast<double>(pa.size());
}

namespace {

std::string fmt_metric(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::string PairReport::to_csv() const {
  std::ostringstream os;
  os << "file,psnr_db,ssim\n";
  for (const auto& r : rows)
    os << r.file << "," << fmt_metric(r.psnr_db) << "," << fmt_metric(r.ssim) << "\n";
  if (!rows.empty()) os << "MEAN," << fmt_metric(mean_psnr) << "," << fmt_metric(mean_ssim) << "\n";
  return os.str();
}

std::string PairReport::to_text() const {
  std::ostringstream os;
  for (const auto& r : rows)
    os << r.file << "  psnr=" << fmt_metric(r.psnr_db) << " dB  ssim=" << fmt_metric(r.ssim)
       << "\n";
  if (!rows.empty())
    os << "mean over " << rows.size() << " image(s): psnr=" << fmt_metric(mean_psnr)
       << " dB  ssim=" << fmt_metric(mean_ssim) << "\n";
  else
    os << "no matched image pairs\n";
  for (const auto& m : missing) os << "warning: unmatched file " << m << "\n";
  return os.str();
}

PairReport evaluate_pair_set(const std::string& dir_a, const std::string& dir_b,
                             const MetricConfig& cfg) {
  namespace fs = std::filesystem;
  IRN_REQUIRE(fs::is_directory(dir_a), "not a directory: ", dir_a);
  IRN_REQUIRE(fs::is_directory(dir_b), "not a directory: ", dir_b);
  auto list_pngs = [](const std::string& dir) {
    std::map<std::string, std::string> out;  // filename -> path
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".png")
        out[e.path().filename().string()] = e.path().string();
    return out;
  };
  const auto fa = list_pngs(dir_a);
  const auto fb = list_pngs(dir_b);

  PairReport report;
  double sum_psnr = 0, sum_ssim = 0;
  for (const auto& [name, path_a] : fa) {
    auto it = fb.find(name);
    if (it == fb.end()) {
      report.missing.push_back(name + " (only in " + dir_a + ")");
      continue;
    }
    const ImageF a = to_float(load_png(path_a));
    const ImageF b = to_float(load_png(it->second));
    PairRow row;
    row.file = name;
    row.psnr_db = psnr(a, b, cfg);
    row.ssim = ssim(a, b, cfg);
    sum_psnr += row.psnr_db;
    sum_ssim += row.ssim;
    report.rows.push_back(std::move(row));
  }
  for (const auto& [name, path_b] : fb)
    if (!fa.count(name)) report.missing.push_back(name + " (only in " + dir_b + ")");
  if (!report.rows.empty()) {
    report.mean_psnr = sum_psnr / static_cast<double>(report.rows.size());
    report.mean_ssim = sum_ssim / static_cast<double>(report.rows.size());
  }
  return report;
}

}  // namespace irn
