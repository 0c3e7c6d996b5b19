#pragma once

#include <torch/torch.h>

#include "lumen/image.hpp"

namespace lumen::retinex {

/// Lower bound on illumination; below one 8-bit code value.
inline constexpr double kEpsFloor = 1e-4;

/// Reflectance [N,3,H,W] and illumination [N,1,H,W] of a batch.
struct Decomposition {
    torch::Tensor reflectance;
    torch::Tensor illumination;
};

/// Illumination is the per-pixel channel maximum floored at kEpsFloor;
/// reflectance is image / illumination clamped to [0, 1]. Differentiable.
/// Expects [N,3,H,W].
Decomposition decompose(const torch::Tensor& images);

/// reflectance ⊙ illumination (broadcast over channels), clamped to [0,1].
torch::Tensor recompose(const torch::Tensor& reflectance, const torch::Tensor& illumination);

struct RetinexPair {
    Image reflectance;   // H×W×3
    Image illumination;  // H×W×1, ≥ kEpsFloor
};

RetinexPair decompose(const Image& img);
Image recompose(const Image& reflectance, const Image& illumination);

}  // namespace lumen::retinex
