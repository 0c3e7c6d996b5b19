#include "lumen/agcm.hpp"

#include "lumen/errors.hpp"

namespace lumen::agcm {

using torch::indexing::None;
using torch::indexing::Slice;

namespace {

void check_map_shapes(const CorrectionMaps& maps, const torch::Tensor& ref) {
    for (const auto* m : {&maps.gamma_u, &maps.gamma_o, &maps.weight_u, &maps.weight_o}) {
        require(m->defined() && m->dim() == 4 && m->size(1) == 1, ErrorKind::Dimension,
                "correction maps must be [N,1,H,W]");
        require(m->size(0) == ref.size(0) && m->size(2) == ref.size(2) && m->size(3) == ref.size(3),
                ErrorKind::Dimension, "correction map shape does not match illumination");
    }
}

}  // namespace

bool satisfies_invariants(const CorrectionMaps& maps, bool normalized_weights, double gamma_min,
                          double gamma_max, double tol) {
    torch::NoGradGuard guard;
    for (const auto* g : {&maps.gamma_u, &maps.gamma_o}) {
        if (g->min().item<double>() < gamma_min - tol) return false;
        if (g->max().item<double>() > gamma_max + tol) return false;
    }
    for (const auto* w : {&maps.weight_u, &maps.weight_o}) {
        if (w->min().item<double>() < -tol || w->max().item<double>() > 1.0 + tol) return false;
    }
    if (normalized_weights) {
        auto dev = (maps.weight_u + maps.weight_o - 1.0).abs().max().item<double>();
        if (dev > tol) return false;
    }
    return true;
}

torch::Tensor apply_correction(const torch::Tensor& illum, const CorrectionMaps& maps) {
    require(illum.dim() == 4, ErrorKind::Dimension, "illumination must be [N,C,H,W]");
    check_map_shapes(maps, illum);
    require(illum.min().item<double>() > 0.0, ErrorKind::Domain,
            "illumination must be strictly positive");
    return maps.weight_u * illum.pow(maps.gamma_u) + maps.weight_o * illum.pow(maps.gamma_o);
}

Correction correct_image(const torch::Tensor& images, const MapPredictor& predict,
                         bool use_retinex) {
    require(images.dim() == 4 && images.size(1) == 3, ErrorKind::Dimension,
            "correct_image expects [N,3,H,W]");
    Correction out;
    if (use_retinex) {
        out.pair = retinex::decompose(images);
        out.maps = predict(out.pair.illumination, out.pair.reflectance);
    } else {
        out.pair.illumination = images.clamp_min(retinex::kEpsFloor);
        out.pair.reflectance = torch::ones_like(images);
        out.maps = predict(images.mean(1, true).clamp_min(retinex::kEpsFloor), images);
    }
    out.corrected_illum = apply_correction(out.pair.illumination, out.maps);
    out.corrected = retinex::recompose(out.pair.reflectance, out.corrected_illum);
    return out;
}

Image correct_image(const Image& img, const MapPredictor& predict, bool use_retinex) {
    torch::NoGradGuard guard;
    return Image::clamped(correct_image(img.batched(), predict, use_retinex).corrected[0]);
}

torch::Tensor gamma_correct(const torch::Tensor& images, double gamma) {
    require(gamma > 0.0, ErrorKind::Domain, "gamma must be positive");
    auto pair = retinex::decompose(images);
    return retinex::recompose(pair.reflectance, pair.illumination.pow(gamma));
}

namespace {

torch::Tensor region_means(const torch::Tensor& corrected, int64_t region) {
    require(corrected.dim() == 4, ErrorKind::Dimension, "exposure loss expects [N,C,H,W]");
    require(region >= 1, ErrorKind::Domain, "region size must be positive");
    const auto h = corrected.size(2), w = corrected.size(3);
    require(h >= region && w >= region, ErrorKind::Dimension,
            "image smaller than one exposure region");
    const auto ch = (h / region) * region, cw = (w / region) * region;
    const auto y0 = (h - ch) / 2, x0 = (w - cw) / 2;
    auto cropped = corrected.index({Slice(), Slice(), Slice(y0, y0 + ch), Slice(x0, x0 + cw)});
    return torch::avg_pool2d(cropped.mean(1, true), {region, region}, {region, region});
}

}  // namespace

torch::Tensor exposure_loss(const torch::Tensor& corrected, double target, int64_t region) {
    return (region_means(corrected, region) - target).abs().mean();
}

double mean_region_intensity(const torch::Tensor& corrected, int64_t region) {
    torch::NoGradGuard guard;
    return region_means(corrected, region).mean().item<double>();
}

torch::Tensor diff_x(const torch::Tensor& t) {
    auto d = t.index({"...", Slice(1, None)}) - t.index({"...", Slice(None, -1)});
    return torch::constant_pad_nd(d, {0, 1});
}

torch::Tensor diff_y(const torch::Tensor& t) {
    auto d = t.index({"...", Slice(1, None), Slice()}) - t.index({"...", Slice(None, -1), Slice()});
    return torch::constant_pad_nd(d, {0, 0, 0, 1});
}

torch::Tensor safe_sqrt(const torch::Tensor& t) {
    auto positive = t > 0;
    return torch::where(positive, t.clamp_min(1e-30).sqrt(), torch::zeros_like(t));
}

torch::Tensor eatv_loss(const CorrectionMaps& maps, const torch::Tensor& reflectance,
                        double lambda_g) {
    require(lambda_g >= 0.0, ErrorKind::Domain, "lambda_g must be non-negative");
    require(reflectance.dim() == 4, ErrorKind::Dimension, "reflectance must be [N,C,H,W]");
    check_map_shapes(maps, reflectance);

    auto wx = torch::exp(-lambda_g * diff_x(reflectance).abs().mean(1, true));
    auto wy = torch::exp(-lambda_g * diff_y(reflectance).abs().mean(1, true));

    torch::Tensor total;
    for (const auto* gamma : {&maps.gamma_u, &maps.gamma_o}) {
        auto gx = diff_x(*gamma) * wx;
        auto gy = diff_y(*gamma) * wy;
        auto ms = (gx.square().mean({1, 2, 3}) + gy.square().mean({1, 2, 3})) / 2.0;
        auto term = safe_sqrt(ms);
        total = total.defined() ? total + term : term;
    }
    return total.mean();
}

}  // namespace lumen::agcm
