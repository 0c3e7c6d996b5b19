#include "lumen/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "lumen/errors.hpp"
#include "lumen/retinex.hpp"

namespace lumen::datagen {

namespace fs = std::filesystem;
using torch::indexing::None;
using torch::indexing::Slice;

namespace {

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, const Interval& iv) {
    return iv.lo + (iv.hi - iv.lo) * unit(rng);
}

torch::Generator make_gen(uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

}  // namespace

DegradeMode parse_degrade_mode(const std::string& s) {
    if (s == "under") return DegradeMode::Under;
    if (s == "over") return DegradeMode::Over;
    if (s == "mixed") return DegradeMode::Mixed;
    fail(ErrorKind::Config, "unknown degradation mode '" + s + "'");
}

std::string to_string(DegradeMode mode) {
    switch (mode) {
        case DegradeMode::Under: return "under";
        case DegradeMode::Over: return "over";
        case DegradeMode::Mixed: return "mixed";
    }
    return "under";
}

void DegradeSpec::validate() const {
    for (const auto* iv : {&gamma_under, &gamma_over}) {
        require(iv->lo > 0.0 && iv->lo <= iv->hi, ErrorKind::Config,
                "gamma intervals must be positive and ordered");
    }
    require(noise_sigma.lo >= 0.0 && noise_sigma.lo <= noise_sigma.hi, ErrorKind::Config,
            "noise sigma interval must be non-negative and ordered");
}

std::string DegradeParams::gamma_field() const {
    char buf[64];
    switch (mode) {
        case DegradeMode::Under: std::snprintf(buf, sizeof buf, "%.6g", gamma_under); break;
        case DegradeMode::Over: std::snprintf(buf, sizeof buf, "%.6g", gamma_over); break;
        case DegradeMode::Mixed:
            std::snprintf(buf, sizeof buf, "%.6g:%.6g", gamma_under, gamma_over);
            break;
    }
    return buf;
}

DegradeParams sample_params(const DegradeSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.rng_seed);
    DegradeParams p;
    p.mode = spec.mode;
    p.seed = spec.rng_seed;
    p.gamma_under = uniform(rng, spec.gamma_under);
    p.gamma_over = uniform(rng, spec.gamma_over);
    p.sigma = uniform(rng, spec.noise_sigma);
    if (spec.mode == DegradeMode::Under) p.gamma_over = 1.0;
    if (spec.mode == DegradeMode::Over) p.gamma_under = 1.0;
    return p;
}

Image degrade_with(const Image& clean, const DegradeParams& params) {
    require(params.gamma_under > 0.0 && params.gamma_over > 0.0 && params.sigma >= 0.0,
            ErrorKind::Domain, "degradation parameters out of range");
    torch::NoGradGuard guard;
    auto pair = retinex::decompose(clean.batched());
    auto illum = pair.illumination;
    switch (params.mode) {
        case DegradeMode::Under: illum = illum.pow(params.gamma_under); break;
        case DegradeMode::Over: illum = illum.pow(params.gamma_over); break;
        case DegradeMode::Mixed: {
            const auto half = illum.size(3) / 2;
            illum = torch::cat({illum.index({"...", Slice(0, half)}).pow(params.gamma_under),
                                illum.index({"...", Slice(half, None)}).pow(params.gamma_over)},
                               3);
            break;
        }
    }
    auto out = retinex::recompose(pair.reflectance, illum)[0];
    if (params.sigma > 0.0) {
        auto gen = make_gen(params.seed);
        out = out + params.sigma * torch::randn(out.sizes(), gen, torch::kFloat32);
    }
    return Image::clamped(out);
}

std::pair<Image, DegradeParams> degrade(const Image& clean, const DegradeSpec& spec) {
    auto params = sample_params(spec);
    return {degrade_with(clean, params), params};
}

std::string corpus_name(int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "deg_%05lld.png", static_cast<long long>(index));
    return buf;
}

Manifest make_corpus(const fs::path& clean_dir, const fs::path& out_dir, const DegradeSpec& spec,
                     int64_t n) {
    spec.validate();
    require(n >= 0, ErrorKind::Config, "corpus size must be non-negative");
    const auto sources = list_images(clean_dir);
    require(!sources.empty(), ErrorKind::Corpus, "no clean images in " + clean_dir.string());
    fs::create_directories(out_dir);

    Manifest manifest;
    std::vector<Image> cache(sources.size());
    for (int64_t i = 0; i < n; ++i) {
        const size_t src = static_cast<size_t>(i) % sources.size();
        if (cache[src].empty()) cache[src] = load_image(sources[src]);
        DegradeSpec item = spec;
        item.rng_seed = spec.rng_seed + static_cast<uint64_t>(i);
        auto [img, params] = degrade(cache[src], item);
        const auto name = corpus_name(i);
        save_image(img, out_dir / name);
        manifest.entries.push_back({sources[src].string(), name, params});
    }

    std::ofstream out(out_dir / kManifestName);
    require(out.good(), ErrorKind::Io, "cannot write manifest in " + out_dir.string());
    char sigma[32];
    for (const auto& e : manifest.entries) {
        std::snprintf(sigma, sizeof sigma, "%.6g", e.params.sigma);
        out << e.source_path << '\t' << e.params.gamma_field() << '\t' << sigma << '\t'
            << e.params.seed << '\n';
    }
    require(out.good(), ErrorKind::Io, "failed writing manifest");
    return manifest;
}

void write_references(const Manifest& manifest, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    for (const auto& e : manifest.entries) save_image(load_image(e.source_path), out_dir / e.output_name);
}

Image synthesize_scene(int64_t height, int64_t width, uint64_t seed) {
    require(height >= 1 && width >= 1, ErrorKind::Dimension, "scene must be non-empty");
    torch::NoGradGuard guard;
    std::mt19937_64 rng(seed);
    auto gen = make_gen(seed ^ 0x9E3779B97F4A7C15ull);
    const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
    auto ys = torch::linspace(0.0, 1.0, height, opts).view({height, 1}).expand({height, width});
    auto xs = torch::linspace(0.0, 1.0, width, opts).view({1, width}).expand({height, width});

    auto tint = [&](double saturation) {
        const double hue[3] = {unit(rng), unit(rng), unit(rng)};
        const double peak = std::max({hue[0], hue[1], hue[2], 1e-6});
        return torch::tensor({1.0 - saturation + saturation * hue[0] / peak,
                              1.0 - saturation + saturation * hue[1] / peak,
                              1.0 - saturation + saturation * hue[2] / peak},
                             opts)
            .view({3, 1, 1});
    };

    // Smooth background shading.
    auto shade = torch::full({height, width}, 0.62 + 0.1 * (unit(rng) - 0.5), opts);
    for (int k = 0; k < 3; ++k) {
        const double fx = 0.5 + 2.0 * unit(rng), fy = 0.5 + 2.0 * unit(rng);
        const double phase = 2.0 * M_PI * unit(rng), amp = 0.04 + 0.06 * unit(rng);
        shade = shade + amp * torch::sin(2.0 * M_PI * (fx * xs + fy * ys) + phase);
    }
    auto img = shade.unsqueeze(0) * tint(0.1 + 0.2 * unit(rng));

    // Soft-edged ellipses and rectangles.
    const int shapes = 4 + static_cast<int>(rng() % 5);
    for (int s = 0; s < shapes; ++s) {
        const double cx = unit(rng), cy = unit(rng);
        const double rx = 0.08 + 0.25 * unit(rng), ry = 0.08 + 0.25 * unit(rng);
        torch::Tensor inside;
        if (rng() % 2 == 0) {
            auto d = ((xs - cx) / rx).square() + ((ys - cy) / ry).square();
            inside = torch::sigmoid((1.0 - d) * 12.0);
        } else {
            auto d = torch::maximum(((xs - cx) / rx).abs(), ((ys - cy) / ry).abs());
            inside = torch::sigmoid((1.0 - d) * 25.0);
        }
        const double level = 0.4 + 0.5 * unit(rng);
        auto colour = level * tint(0.1 + 0.3 * unit(rng));
        img = img * (1.0 - inside.unsqueeze(0)) + colour * inside.unsqueeze(0);
    }

    // Fine texture so restorations have detail to preserve.
    auto texture = torch::randn({1, 1, height, width}, gen, torch::kFloat32);
    texture = torch::avg_pool2d(texture, 3, 1, 1, false, true)[0];
    img = img * (1.0 + 0.04 * texture);
    return Image::clamped(img);
}

void make_synthetic_corpus(const fs::path& out_dir, int64_t n, int64_t height, int64_t width,
                           uint64_t seed) {
    fs::create_directories(out_dir);
    for (int64_t i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%05lld.png", static_cast<long long>(i));
        save_image(synthesize_scene(height, width, seed + static_cast<uint64_t>(i)), out_dir / name);
    }
}

}  // namespace lumen::datagen
