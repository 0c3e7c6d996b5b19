#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lumen/histogram.hpp"
#include "lumen/image.hpp"

namespace lumen::metrics {

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// 10·log10(1 / MSE) at peak 1; kPsnrCap when the images are identical.
double psnr(const Image& a, const Image& b);

/// Mean SSIM of the channel-mean luminance with an 11-tap Gaussian window
/// (σ = 1.5), C1 = 0.01², C2 = 0.03², over all fully covered windows.
double ssim(const Image& a, const Image& b);

/// KL(hist(illumination), prior) with hard binning; RGB images are
/// decomposed first, single-channel images are taken as the illumination.
double illumination_kl(const Image& img, const hist::HistogramPrior& prior);

struct MetricsRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    double hist_kl = 0.0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;
    MetricsRow mean;  // name "mean"
};

/// Pairs files with the same name in both directories (sorted order) and
/// scores restored against reference; hist_kl is KL(hist(illum), prior)
/// of the restored image. Error(Corpus) when no names match.
MetricsReport evaluate(const std::filesystem::path& restored_dir,
                       const std::filesystem::path& reference_dir,
                       const hist::HistogramPrior& prior);

/// Header `name,psnr,ssim,hist_kl`, one row per image, then the mean row;
/// reals printed with 6 significant digits.
void write_report(const MetricsReport& report, const std::filesystem::path& path);

}  // namespace lumen::metrics
