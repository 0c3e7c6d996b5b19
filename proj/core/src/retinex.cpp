#include "lumen/retinex.hpp"

#include "lumen/errors.hpp"

namespace lumen::retinex {

Decomposition decompose(const torch::Tensor& images) {
    require(images.dim() == 4 && images.size(1) == 3, ErrorKind::Dimension,
            "decomposition needs [N,3,H,W] colour input");
    auto illum = std::get<0>(images.max(1, /*keepdim=*/true)).clamp_min(kEpsFloor);
    auto refl = (images / illum).clamp(0.0, 1.0);
    return {refl, illum};
}

torch::Tensor recompose(const torch::Tensor& reflectance, const torch::Tensor& illumination) {
    require(reflectance.dim() == 4 && illumination.dim() == 4, ErrorKind::Dimension,
            "recompose expects [N,C,H,W] tensors");
    require(reflectance.size(0) == illumination.size(0) &&
                reflectance.size(2) == illumination.size(2) &&
                reflectance.size(3) == illumination.size(3) &&
                (illumination.size(1) == 1 || illumination.size(1) == reflectance.size(1)),
            ErrorKind::Dimension, "reflectance/illumination shape mismatch");
    return (reflectance * illumination).clamp(0.0, 1.0);
}

RetinexPair decompose(const Image& img) {
    require(img.channels() == 3, ErrorKind::Dimension,
            "decomposition is defined for colour images only");
    auto d = decompose(img.batched());
    return {Image(d.reflectance[0]), Image(d.illumination[0])};
}

Image recompose(const Image& reflectance, const Image& illumination) {
    return Image(recompose(reflectance.batched(), illumination.batched())[0]);
}

}  // namespace lumen::retinex
