#include "lumen/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "lumen/errors.hpp"
#include "lumen/retinex.hpp"

namespace lumen::metrics {

namespace fs = std::filesystem;

namespace {

void same_shape(const Image& a, const Image& b) {
    require(a.tensor().sizes() == b.tensor().sizes(), ErrorKind::Dimension,
            "images differ in shape");
}

std::vector<double> luminance(const Image& img) {
    auto lum = img.tensor().to(torch::kFloat64).mean(0).contiguous();
    return {lum.data_ptr<double>(), lum.data_ptr<double>() + lum.numel()};
}

std::vector<double> gaussian_taps() {
    std::vector<double> taps(kSsimWindow);
    const int half = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - half;
        taps[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += taps[i];
    }
    for (auto& t : taps) t /= sum;
    return taps;
}

// Separable 'valid' filtering of an h×w plane.
std::vector<double> filter_valid(const std::vector<double>& src, int64_t h, int64_t w,
                                 const std::vector<double>& taps) {
    const int64_t k = static_cast<int64_t>(taps.size());
    const int64_t ow = w - k + 1, oh = h - k + 1;
    std::vector<double> rows(static_cast<size_t>(h * ow));
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int64_t i = 0; i < k; ++i) s += taps[i] * src[y * w + x + i];
            rows[y * ow + x] = s;
        }
    std::vector<double> out(static_cast<size_t>(oh * ow));
    for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int64_t i = 0; i < k; ++i) s += taps[i] * rows[(y + i) * ow + x];
            out[y * ow + x] = s;
        }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    same_shape(a, b);
    const double mse =
        (a.tensor().to(torch::kFloat64) - b.tensor().to(torch::kFloat64)).square().mean().item<double>();
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
    same_shape(a, b);
    const int64_t h = a.height(), w = a.width();
    require(h >= kSsimWindow && w >= kSsimWindow, ErrorKind::Dimension,
            "image smaller than the SSIM window");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto x = luminance(a), y = luminance(b);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto taps = gaussian_taps();
    const auto mx = filter_valid(x, h, w, taps), my = filter_valid(y, h, w, taps);
    const auto sxx = filter_valid(xx, h, w, taps), syy = filter_valid(yy, h, w, taps),
               sxy = filter_valid(xy, h, w, taps);
    double total = 0.0;
    for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

double illumination_kl(const Image& img, const hist::HistogramPrior& prior) {
    const auto illum = img.channels() == 3 ? retinex::decompose(img).illumination : img;
    return hist::kl_divergence(hist::hard_histogram(illum, prior.bin_count()), prior);
}

MetricsReport evaluate(const fs::path& restored_dir, const fs::path& reference_dir,
                       const hist::HistogramPrior& prior) {
    std::map<std::string, fs::path> refs;
    for (const auto& p : list_images(reference_dir)) refs.emplace(p.filename().string(), p);

    MetricsReport report;
    for (const auto& path : list_images(restored_dir)) {
        const auto name = path.filename().string();
        auto it = refs.find(name);
        if (it == refs.end()) continue;
        const auto restored = load_image(path);
        const auto reference = load_image(it->second);
        MetricsRow row;
        row.name = name;
        row.psnr = psnr(restored, reference);
        row.ssim = ssim(restored, reference);
        row.hist_kl = illumination_kl(restored, prior);
        report.rows.push_back(row);
    }
    require(!report.rows.empty(), ErrorKind::Corpus,
            "no matching image names between " + restored_dir.string() + " and " +
                reference_dir.string());

    report.mean.name = "mean";
    for (const auto& r : report.rows) {
        report.mean.psnr += r.psnr;
        report.mean.ssim += r.ssim;
        report.mean.hist_kl += r.hist_kl;
    }
    const double n = static_cast<double>(report.rows.size());
    report.mean.psnr /= n;
    report.mean.ssim /= n;
    report.mean.hist_kl /= n;
    return report;
}

void write_report(const MetricsReport& report, const fs::path& path) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::Io, "cannot write " + path.string());
    out << "name,psnr,ssim,hist_kl\n";
    char buf[128];
    auto emit = [&](const MetricsRow& r) {
        std::snprintf(buf, sizeof buf, ",%.6g,%.6g,%.6g\n", r.psnr, r.ssim, r.hist_kl);
        out << r.name << buf;
    };
    for (const auto& r : report.rows) emit(r);
    emit(report.mean);
    require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace lumen::metrics
