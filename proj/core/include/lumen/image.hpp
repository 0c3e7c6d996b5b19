#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <torch/torch.h>

namespace lumen {

/// An image with intensities in [0, 1].
///
/// Stored planar as a float32 tensor of shape [channels, height, width]
/// (channels is 1 or 3, RGB order). The tensor is cloned on construction
/// and never handed out mutably, so an Image can be shared freely between
/// readers.
class Image {
public:
    Image() = default;

    /// Validates shape and range; throws Error(Dimension) / Error(Domain).
    explicit Image(const torch::Tensor& chw);

    /// Clamps an arbitrary real tensor into [0, 1] first.
    static Image clamped(const torch::Tensor& chw);

    static Image filled(int64_t channels, int64_t height, int64_t width, float value);

    int64_t channels() const { return data_.size(0); }
    int64_t height() const { return data_.size(1); }
    int64_t width() const { return data_.size(2); }
    bool empty() const { return !data_.defined(); }

    float at(int64_t y, int64_t x, int64_t c = 0) const;

    const torch::Tensor& tensor() const { return data_; }
    /// [1, C, H, W] view for batched network code.
    torch::Tensor batched() const { return data_.unsqueeze(0); }

private:
    torch::Tensor data_;
};

struct PatchSpec {
    int64_t patch_size = 64;
    int64_t stride = 1;
};

/// Reads 8- or 16-bit PNG, binary PPM (P6) or PGM (P5).
Image load_image(const std::filesystem::path& path);

/// Writes 8-bit PNG or PPM/PGM depending on the extension. Values are
/// clamped and rounded half-up to the nearest code value.
void save_image(const Image& img, const std::filesystem::path& path);

/// Quantizes to 8-bit codes exactly as save_image does.
std::vector<uint8_t> quantize8(const Image& img);

/// `count` randomly positioned square patches; positions are snapped to the
/// PatchSpec stride grid. Deterministic in `rng_seed`.
std::vector<Image> extract_patches(const Image& img, const PatchSpec& spec, int64_t count,
                                   uint64_t rng_seed);

/// True for file extensions load_image understands.
bool is_image_file(const std::filesystem::path& path);

/// Sorted list of image files directly inside `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Stacks same-shaped images into [N, C, H, W].
torch::Tensor stack_images(const std::vector<Image>& images);

}  // namespace lumen
