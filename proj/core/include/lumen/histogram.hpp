#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lumen/image.hpp"

namespace lumen::hist {

inline constexpr int kDefaultBins = 64;
inline constexpr double kDefaultSmoothing = 1e-6;

/// Normalized histogram over B uniform bins partitioning [0, 1].
struct Histogram {
    std::vector<double> bins;

    int bin_count() const { return static_cast<int>(bins.size()); }
    std::vector<double> edges() const;
};

/// Corpus-averaged illumination histogram.
struct HistogramPrior {
    std::vector<double> bins;
    int64_t corpus_size = 0;

    int bin_count() const { return static_cast<int>(bins.size()); }
    torch::Tensor tensor() const;  // float64 [B]
};

/// Hard binning: index = min(floor(v·B), B-1). Mass is normalized, then
/// mixed with the uniform distribution so that every bin is ≥ smoothing:
/// p ← (1 − B·ε)·p + ε.
Histogram hard_histogram(const Image& illum, int bin_count, double smoothing = kDefaultSmoothing);

/// Triangular soft binning, see the tensor overload.
Histogram soft_histogram(const Image& illum, int bin_count, double bandwidth,
                         double smoothing = kDefaultSmoothing);

/// Differentiable soft histogram of [N,1,H,W] (or [N,H,W]) values → [N,B].
///
/// Each value v contributes max(0, 1 − |v − c_i| / bandwidth) to bin centre
/// c_i = (i + ½)/B. Values are first clamped to [c_0, c_{B−1}] so that the
/// outermost bins collect the tails, which matches hard binning at the
/// ends. Totals are normalized and smoothed like hard_histogram.
torch::Tensor soft_histogram(const torch::Tensor& values, int bin_count, double bandwidth,
                             double smoothing = kDefaultSmoothing);

/// Σ p_i ln(p_i / q_i). Throws Error(Dimension) on bin-count mismatch.
double kl_divergence(const Histogram& p, const HistogramPrior& q);
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

/// Row-wise KL of [N,B] against [B]; returns [N].
torch::Tensor kl_divergence(const torch::Tensor& p, const torch::Tensor& q);

/// Histogram-guided illumination loss: batch mean of
/// KL(soft_histogram(L'), prior). Bandwidth defaults to one bin width.
torch::Tensor hic_loss(const torch::Tensor& corrected_illum, const HistogramPrior& prior,
                       double bandwidth = 0.0, double smoothing = kDefaultSmoothing);
double hic_loss(const Image& corrected_illum, const HistogramPrior& prior);

HistogramPrior average_histograms(const std::vector<Histogram>& hists);

struct PriorBuildResult {
    HistogramPrior prior;
    std::vector<std::string> skipped;  // "path: reason" for each unreadable file
};

/// Decomposes every image in `corpus_dir`, bins its illumination and
/// averages the normalized histograms. Unreadable files are skipped and
/// reported; Error(Corpus) if nothing usable remains.
PriorBuildResult build_prior(const std::filesystem::path& corpus_dir, int bin_count = kDefaultBins);

/// Text format: line 1 bin count, line 2 corpus size, line 3 the bins.
void save_prior(const HistogramPrior& prior, const std::filesystem::path& path);
HistogramPrior load_prior(const std::filesystem::path& path);

}  // namespace lumen::hist
