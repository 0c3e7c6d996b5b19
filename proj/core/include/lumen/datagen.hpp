#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "lumen/image.hpp"

namespace lumen::datagen {

enum class DegradeMode { Under, Over, Mixed };

DegradeMode parse_degrade_mode(const std::string& s);
std::string to_string(DegradeMode mode);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Illumination is raised to a sampled γ (γ > 1 darkens, γ < 1 brightens),
/// then zero-mean Gaussian noise with a sampled σ is added and clipped.
struct DegradeSpec {
    Interval gamma_under{2.0, 5.0};
    Interval gamma_over{0.2, 0.5};
    Interval noise_sigma{0.0, 0.05};
    DegradeMode mode = DegradeMode::Under;
    uint64_t rng_seed = 0;

    void validate() const;
};

struct DegradeParams {
    double gamma_under = 1.0;  // left half in mixed mode
    double gamma_over = 1.0;   // right half in mixed mode
    double sigma = 0.0;
    uint64_t seed = 0;
    DegradeMode mode = DegradeMode::Under;

    /// γ actually applied in under/over modes; mixed reports "u:o".
    std::string gamma_field() const;
};

/// Samples γ and σ from `spec` with its seed.
DegradeParams sample_params(const DegradeSpec& spec);

/// Deterministic degradation with explicit parameters.
Image degrade_with(const Image& clean, const DegradeParams& params);

/// Samples parameters then degrades; same (clean, spec) → same bytes.
std::pair<Image, DegradeParams> degrade(const Image& clean, const DegradeSpec& spec);

struct ManifestEntry {
    std::string source_path;
    std::string output_name;
    DegradeParams params;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
};

/// Writes `n` degraded images (cycling through the sorted sources) and
/// `manifest.tsv` with one `source<TAB>gamma<TAB>sigma<TAB>seed` line each.
/// Item i uses seed spec.rng_seed + i.
Manifest make_corpus(const std::filesystem::path& clean_dir, const std::filesystem::path& out_dir,
                     const DegradeSpec& spec, int64_t n);

/// Copies each entry's clean source into `out_dir` under the entry's output
/// name, so degraded and reference directories pair by file name.
void write_references(const Manifest& manifest, const std::filesystem::path& out_dir);

inline constexpr const char* kManifestName = "manifest.tsv";

/// Output file name for corpus item `index` (deg_00000.png, ...).
std::string corpus_name(int64_t index);

/// Procedural well-lit RGB scene: smooth shading, soft-edged shapes and
/// fine texture, with low-saturation colours. Deterministic in `seed`.
Image synthesize_scene(int64_t height, int64_t width, uint64_t seed);

/// Writes `n` synthetic scenes scene_00000.png … into `out_dir`.
void make_synthetic_corpus(const std::filesystem::path& out_dir, int64_t n, int64_t height,
                           int64_t width, uint64_t seed);

}  // namespace lumen::datagen
