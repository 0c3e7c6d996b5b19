#include "lumen/histogram.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "lumen/errors.hpp"
#include "lumen/retinex.hpp"

namespace lumen::hist {

namespace fs = std::filesystem;

namespace {

void check_bins(int bin_count, double smoothing) {
    require(bin_count >= 2, ErrorKind::Domain, "bin count must be at least 2");
    require(smoothing >= 0.0 && smoothing * bin_count < 1.0, ErrorKind::Domain,
            "smoothing epsilon must satisfy 0 <= eps < 1/B");
}

std::vector<double> to_vector(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat64).contiguous();
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

std::vector<double> Histogram::edges() const {
    std::vector<double> e(bins.size() + 1);
    for (size_t i = 0; i < e.size(); ++i) e[i] = static_cast<double>(i) / bins.size();
    return e;
}

torch::Tensor HistogramPrior::tensor() const {
    return torch::tensor(bins, torch::kFloat64);
}

Histogram hard_histogram(const Image& illum, int bin_count, double smoothing) {
    check_bins(bin_count, smoothing);
    require(illum.channels() == 1, ErrorKind::Dimension, "histogram expects a single channel");
    const auto values = illum.tensor().contiguous();
    const float* v = values.data_ptr<float>();
    const int64_t n = values.numel();

    std::vector<double> counts(bin_count, 0.0);
    for (int64_t i = 0; i < n; ++i) {
        auto idx = static_cast<int>(std::floor(static_cast<double>(v[i]) * bin_count));
        counts[std::clamp(idx, 0, bin_count - 1)] += 1.0;
    }
    Histogram h;
    h.bins.resize(bin_count);
    const double mix = 1.0 - bin_count * smoothing;
    for (int i = 0; i < bin_count; ++i) h.bins[i] = mix * counts[i] / n + smoothing;
    return h;
}

torch::Tensor soft_histogram(const torch::Tensor& values, int bin_count, double bandwidth,
                             double smoothing) {
    check_bins(bin_count, smoothing);
    require(bandwidth > 0.0, ErrorKind::Domain, "bandwidth must be positive");
    require(values.dim() >= 2 && values.numel() > 0, ErrorKind::Dimension,
            "histogram of an empty image");
    require(values.dim() != 4 || values.size(1) == 1, ErrorKind::Dimension,
            "histogram expects a single channel");

    const auto n = values.size(0);
    const double width = 1.0 / bin_count;
    auto flat = values.reshape({n, -1, 1});
    auto centers = (torch::arange(bin_count, values.options()) + 0.5) * width;
    auto v = flat.clamp(0.5 * width, 1.0 - 0.5 * width);
    auto weights = torch::relu(1.0 - (v - centers.view({1, 1, bin_count})).abs() / bandwidth);
    auto mass = weights.sum(1);  // [N,B]
    auto p = mass / mass.sum(1, true);
    return (1.0 - bin_count * smoothing) * p + smoothing;
}

Histogram soft_histogram(const Image& illum, int bin_count, double bandwidth, double smoothing) {
    require(illum.channels() == 1, ErrorKind::Dimension, "histogram expects a single channel");
    auto p = soft_histogram(illum.batched().to(torch::kFloat64), bin_count, bandwidth, smoothing);
    return Histogram{to_vector(p[0])};
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    require(p.size() == q.size(), ErrorKind::Dimension, "histogram bin counts differ");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        require(q[i] > 0.0, ErrorKind::Domain, "reference histogram has an empty bin");
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

double kl_divergence(const Histogram& p, const HistogramPrior& q) {
    return kl_divergence(p.bins, q.bins);
}

torch::Tensor kl_divergence(const torch::Tensor& p, const torch::Tensor& q) {
    require(p.dim() == 2 && q.dim() == 1 && p.size(1) == q.size(0), ErrorKind::Dimension,
            "histogram bin counts differ");
    auto qq = q.to(p.dtype()).unsqueeze(0);
    return (p * (p.log() - qq.log())).sum(1);
}

torch::Tensor hic_loss(const torch::Tensor& corrected_illum, const HistogramPrior& prior,
                       double bandwidth, double smoothing) {
    const int bins = prior.bin_count();
    if (bandwidth <= 0.0) bandwidth = 1.0 / bins;
    auto p = soft_histogram(corrected_illum, bins, bandwidth, smoothing);
    return kl_divergence(p, prior.tensor().to(p.dtype())).mean();
}

double hic_loss(const Image& corrected_illum, const HistogramPrior& prior) {
    require(corrected_illum.channels() == 1, ErrorKind::Dimension,
            "histogram expects a single channel");
    return hic_loss(corrected_illum.batched().to(torch::kFloat64), prior).item<double>();
}

HistogramPrior average_histograms(const std::vector<Histogram>& hists) {
    require(!hists.empty(), ErrorKind::Corpus, "no histograms to average");
    const int bins = hists.front().bin_count();
    std::vector<double> sum(bins, 0.0);
    for (const auto& h : hists) {
        require(h.bin_count() == bins, ErrorKind::Dimension, "histogram bin counts differ");
        for (int i = 0; i < bins; ++i) sum[i] += h.bins[i];
    }
    const double total = std::accumulate(sum.begin(), sum.end(), 0.0);
    HistogramPrior prior;
    prior.corpus_size = static_cast<int64_t>(hists.size());
    prior.bins.resize(bins);
    for (int i = 0; i < bins; ++i) prior.bins[i] = sum[i] / total;
    return prior;
}

PriorBuildResult build_prior(const fs::path& corpus_dir, int bin_count) {
    require(fs::is_directory(corpus_dir), ErrorKind::Corpus,
            "corpus directory not found: " + corpus_dir.string());
    const auto files = list_images(corpus_dir);
    require(!files.empty(), ErrorKind::Corpus, "no images in " + corpus_dir.string());

    PriorBuildResult result;
    std::vector<Histogram> hists;
    for (const auto& file : files) {
        try {
            const auto pair = retinex::decompose(load_image(file));
            hists.push_back(hard_histogram(pair.illumination, bin_count));
        } catch (const Error& e) {
            std::cerr << "warning: skipping " << file.string() << ": " << e.what() << "\n";
            result.skipped.push_back(file.string() + ": " + e.what());
        }
    }
    require(!hists.empty(), ErrorKind::Corpus,
            "every file in " + corpus_dir.string() + " was unreadable");
    result.prior = average_histograms(hists);
    return result;
}

void save_prior(const HistogramPrior& prior, const fs::path& path) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::Io, "cannot write " + path.string());
    out << prior.bin_count() << "\n" << prior.corpus_size << "\n";
    char buf[32];
    for (int i = 0; i < prior.bin_count(); ++i) {
        std::snprintf(buf, sizeof buf, "%.10g", prior.bins[i]);
        out << (i ? " " : "") << buf;
    }
    out << "\n";
    require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

HistogramPrior load_prior(const fs::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Load, "cannot open prior " + path.string());
    HistogramPrior prior;
    int bins = 0;
    in >> bins >> prior.corpus_size;
    require(in.good() && bins >= 2 && prior.corpus_size >= 1, ErrorKind::Format,
            "malformed prior header in " + path.string());
    prior.bins.resize(bins);
    for (auto& b : prior.bins) {
        in >> b;
        require(!in.fail() && b >= 0.0, ErrorKind::Format, "malformed prior bins in " + path.string());
    }
    const double total = std::accumulate(prior.bins.begin(), prior.bins.end(), 0.0);
    require(std::abs(total - 1.0) <= 1e-6, ErrorKind::Format,
            "prior bins do not sum to 1 in " + path.string());
    return prior;
}

}  // namespace lumen::hist
