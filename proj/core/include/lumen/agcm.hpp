#pragma once

#include <functional>

#include <torch/torch.h>

#include "lumen/image.hpp"
#include "lumen/retinex.hpp"

namespace lumen::agcm {

inline constexpr double kGammaMin = 0.1;
inline constexpr double kGammaMax = 10.0;
inline constexpr double kTargetExposure = 0.6;
inline constexpr int64_t kExposureRegion = 16;

/// Per-pixel gamma pair and blend weights, each [N,1,H,W].
struct CorrectionMaps {
    torch::Tensor gamma_u;
    torch::Tensor gamma_o;
    torch::Tensor weight_u;
    torch::Tensor weight_o;
};

/// Checks the gamma range and (optionally) W_u + W_o = 1 within `tol`.
bool satisfies_invariants(const CorrectionMaps& maps, bool normalized_weights = true,
                          double gamma_min = kGammaMin, double gamma_max = kGammaMax,
                          double tol = 1e-6);

/// L' = W_u · L^γu + W_o · L^γo, pixel-wise. `illum` may have 1 or C
/// channels; the maps broadcast over them. Throws Error(Domain) when any
/// illumination value is ≤ 0.
torch::Tensor apply_correction(const torch::Tensor& illum, const CorrectionMaps& maps);

/// Maps the (illumination, structure guide) inputs to correction maps.
/// Normally an AgcmNet; tests substitute closed-form stubs.
using MapPredictor =
    std::function<CorrectionMaps(const torch::Tensor& illum, const torch::Tensor& guide)>;

struct Correction {
    torch::Tensor corrected;        // I'_d, [N,3,H,W]
    torch::Tensor corrected_illum;  // L'_d, [N,1,H,W] (or [N,3,H,W] without Retinex)
    CorrectionMaps maps;
    retinex::Decomposition pair;
};

/// Decompose → predict maps → apply_correction → recompose.
///
/// With `use_retinex = false` the correction acts on the image itself:
/// illumination is the RGB image, reflectance is all ones, and the predictor
/// sees (channel-mean intensity, image) as its inputs.
Correction correct_image(const torch::Tensor& images, const MapPredictor& predict,
                         bool use_retinex = true);
Image correct_image(const Image& img, const MapPredictor& predict, bool use_retinex = true);

/// Global gamma baseline: L^γ ⊙ R.
torch::Tensor gamma_correct(const torch::Tensor& images, double gamma);

/// Mean over non-overlapping 16×16 regions of |E_k − target|, where E_k is
/// the region mean of the per-pixel channel mean. Sizes that are not a
/// multiple of the region are centre-cropped.
torch::Tensor exposure_loss(const torch::Tensor& corrected, double target = kTargetExposure,
                            int64_t region = kExposureRegion);

/// Mean region intensity E_k over the batch; used for reporting.
double mean_region_intensity(const torch::Tensor& corrected, int64_t region = kExposureRegion);

/// Edge-aware total variation on both gamma maps.
///
/// For each map the horizontal and vertical forward differences (zero at
/// the last column/row) are weighted by exp(−λ_g·|∇R|), with |∇R| the
/// channel-mean absolute reflectance difference in the same direction. The
/// weighted differences are reduced by root-mean-square per image, summed
/// over the two maps and averaged over the batch.
torch::Tensor eatv_loss(const CorrectionMaps& maps, const torch::Tensor& reflectance,
                        double lambda_g);

/// Forward differences with a zero last column / row; same shape as input.
torch::Tensor diff_x(const torch::Tensor& t);
torch::Tensor diff_y(const torch::Tensor& t);

/// sqrt that returns 0 with a zero gradient at 0.
torch::Tensor safe_sqrt(const torch::Tensor& t);

}  // namespace lumen::agcm
