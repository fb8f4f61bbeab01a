#ifndef IRN_METRICS_HPP
#define IRN_METRICS_HPP

#include <string>
#include <vector>

#include "irn/image.hpp"

namespace irn {

// Evaluation protocol: PSNR/SSIM on the BT.601 Y channel by default, with an
// optional border crop. SSIM uses the standard 11x11 Gaussian window
// (sigma 1.5), K1=0.01, K2=0.03, dynamic range 255.
struct MetricConfig {
  enum class Channel { Y, RGB };
  Channel channel = Channel::Y;
  int border_crop = 0;  // pixels removed from each edge before computing
};

// 10*log10(255^2 / MSE) on the configured channel; +infinity when MSE is 0.
double psnr(const ImageF& a, const ImageF& b, const MetricConfig& cfg = {});

// Mean local structural similarity over the valid window positions; in [-1,1],
// exactly 1 iff the evaluated channels are identical. Inputs must be at least
// 11x11 after the border crop.
double ssim(const ImageF& a, const ImageF& b, const MetricConfig& cfg = {});

struct PairRow {
  std::string file;
  double psnr_db = 0;
  double ssim = 0;
};

struct PairReport {
  std::vector<PairRow> rows;       // matched pairs, sorted by filename
  std::vector<std::string> missing;  // files present in only one directory
  double mean_psnr = 0;
  double mean_ssim = 0;

  size_t warning_count() const { return missing.size(); }
  // columns file,psnr_db,ssim; "inf" literal for the PSNR sentinel; final MEAN row
  std::string to_csv() const;
  std::string to_text() const;
};

// Pairs PNG files by filename across two directories and reports per-image
// and mean PSNR/SSIM. Unmatched files are listed and excluded from the means.
PairReport evaluate_pair_set(const std::string& dir_a, const std::string& dir_b,
                             const MetricConfig& cfg = {});

}  // namespace irn

#endif
