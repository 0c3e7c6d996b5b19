#include "lumen/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <string>

#include "lumen/errors.hpp"

namespace lumen {

namespace fs = std::filesystem;

Image::Image(const torch::Tensor& chw) {
    require(chw.defined() && chw.dim() == 3, ErrorKind::Dimension, "image tensor must be [C,H,W]");
    require(chw.size(0) == 1 || chw.size(0) == 3, ErrorKind::Dimension,
            "image must have 1 or 3 channels, got " + std::to_string(chw.size(0)));
    require(chw.size(1) >= 1 && chw.size(2) >= 1, ErrorKind::Dimension, "image has zero extent");
    data_ = chw.detach().to(torch::kFloat32).contiguous().clone();
    require(!torch::isnan(data_).any().item<bool>(), ErrorKind::Domain, "image contains NaN");
    require(data_.min().item<float>() >= 0.0f && data_.max().item<float>() <= 1.0f,
            ErrorKind::Domain, "image values must lie in [0,1]");
}

Image Image::clamped(const torch::Tensor& chw) {
    return Image(chw.detach().to(torch::kFloat32).nan_to_num(0.0).clamp(0.0, 1.0));
}

Image Image::filled(int64_t channels, int64_t height, int64_t width, float value) {
    return Image(torch::full({channels, height, width}, value, torch::kFloat32));
}

float Image::at(int64_t y, int64_t x, int64_t c) const {
    return data_.accessor<float, 3>()[c][y][x];
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string lower_ext(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

// Interleaved HWC samples → planar CHW image.
Image from_interleaved(const std::vector<float>& hwc, int64_t h, int64_t w, int64_t c) {
    auto t = torch::from_blob(const_cast<float*>(hwc.data()), {h, w, c}, torch::kFloat32);
    return Image(t.permute({2, 0, 1}).contiguous());
}

Image load_png(const fs::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    require(fp != nullptr, ErrorKind::Load, "cannot open " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorKind::Load, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        fail(ErrorKind::Load, "libpng init failed");
    }

    std::vector<float> samples;
    int64_t h = 0, w = 0, c = 0;
    bool ok = false;
    if (setjmp(png_jmpbuf(png)) == 0) {
        png_init_io(png, fp.get());
        png_read_info(png, info);
        w = png_get_image_width(png, info);
        h = png_get_image_height(png, info);
        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);

        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
            png_set_strip_alpha(png);
        if (depth == 16) png_set_swap(png);  // native little-endian uint16
        png_read_update_info(png, info);

        c = png_get_channels(png, info);
        const int out_depth = png_get_bit_depth(png, info);
        if (w > 0 && h > 0 && (c == 1 || c == 3)) {
            const size_t rowbytes = png_get_rowbytes(png, info);
            std::vector<png_byte> raw(rowbytes * static_cast<size_t>(h));
            std::vector<png_bytep> rows(static_cast<size_t>(h));
            for (int64_t y = 0; y < h; ++y) rows[y] = raw.data() + y * rowbytes;
            png_read_image(png, rows.data());

            const size_t n = static_cast<size_t>(h * w * c);
            samples.resize(n);
            if (out_depth == 16) {
                for (size_t i = 0; i < n; ++i) {
                    uint16_t v;
                    std::memcpy(&v, raw.data() + 2 * i, 2);
                    samples[i] = static_cast<float>(v) / 65535.0f;
                }
            } else {
                for (size_t i = 0; i < n; ++i) samples[i] = static_cast<float>(raw[i]) / 255.0f;
            }
            ok = true;
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    require(ok, ErrorKind::Format, "unsupported or malformed PNG: " + path.string());
    return from_interleaved(samples, h, w, c);
}

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

Image load_pnm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Load, "cannot open " + path.string());
    const std::string magic = pnm_token(in);
    require(magic == "P6" || magic == "P5", ErrorKind::Format,
            "only binary P6/P5 PNM is supported: " + path.string());
    const int64_t c = magic == "P6" ? 3 : 1;
    int64_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoll(pnm_token(in));
        h = std::stoll(pnm_token(in));
        maxval = std::stoll(pnm_token(in));
    } catch (const std::exception&) {
        fail(ErrorKind::Format, "malformed PNM header: " + path.string());
    }
    require(w > 0 && h > 0, ErrorKind::Format, "zero-dimension image: " + path.string());
    require(maxval > 0 && maxval < 65536, ErrorKind::Format, "bad PNM maxval: " + path.string());

    const size_t n = static_cast<size_t>(w * h * c);
    const size_t bytes_per = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(n * bytes_per);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    require(static_cast<size_t>(in.gcount()) == raw.size(), ErrorKind::Format,
            "truncated PNM data: " + path.string());

    std::vector<float> samples(n);
    const auto maxf = static_cast<float>(maxval);
    for (size_t i = 0; i < n; ++i) {
        const unsigned v = bytes_per == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
        samples[i] = std::min(1.0f, static_cast<float>(v) / maxf);
    }
    return from_interleaved(samples, h, w, c);
}

void save_png(const std::vector<uint8_t>& hwc, int64_t h, int64_t w, int64_t c,
              const fs::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    require(fp != nullptr, ErrorKind::Io, "cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    require(png != nullptr, ErrorKind::Io, "libpng init failed");
    png_infop info = png_create_info_struct(png);
    bool ok = false;
    if (info && setjmp(png_jmpbuf(png)) == 0) {
        png_init_io(png, fp.get());
        png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                     c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int64_t y = 0; y < h; ++y)
            png_write_row(png, const_cast<png_bytep>(hwc.data() + y * w * c));
        png_write_end(png, nullptr);
        ok = true;
    }
    png_destroy_write_struct(&png, &info);
    require(ok, ErrorKind::Io, "failed writing PNG " + path.string());
}

void save_pnm(const std::vector<uint8_t>& hwc, int64_t h, int64_t w, int64_t c,
              const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::Io, "cannot write " + path.string());
    out << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(hwc.data()), static_cast<std::streamsize>(hwc.size()));
    require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace

bool is_image_file(const fs::path& path) {
    const auto ext = lower_ext(path);
    return ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm";
}

Image load_image(const fs::path& path) {
    require(fs::exists(path), ErrorKind::Load, "no such file: " + path.string());
    unsigned char sig[8] = {};
    {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), ErrorKind::Load, "cannot open " + path.string());
        in.read(reinterpret_cast<char*>(sig), 8);
        require(in.gcount() >= 2, ErrorKind::Format, "file too short: " + path.string());
    }
    if (png_sig_cmp(sig, 0, 8) == 0) return load_png(path);
    if (sig[0] == 'P' && (sig[1] == '6' || sig[1] == '5')) return load_pnm(path);
    fail(ErrorKind::Format, "unsupported image format: " + path.string());
}

std::vector<uint8_t> quantize8(const Image& img) {
    auto hwc = img.tensor().clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
    const float* src = hwc.data_ptr<float>();
    std::vector<uint8_t> out(static_cast<size_t>(hwc.numel()));
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<uint8_t>(std::floor(src[i] * 255.0f + 0.5f));
    return out;
}

void save_image(const Image& img, const fs::path& path) {
    require(!img.empty(), ErrorKind::Dimension, "cannot save an empty image");
    const auto codes = quantize8(img);
    const auto ext = lower_ext(path);
    if (ext == ".png") {
        save_png(codes, img.height(), img.width(), img.channels(), path);
    } else if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") {
        save_pnm(codes, img.height(), img.width(), img.channels(), path);
    } else {
        fail(ErrorKind::Format, "unsupported output extension: " + path.string());
    }
}

std::vector<Image> extract_patches(const Image& img, const PatchSpec& spec, int64_t count,
                                   uint64_t rng_seed) {
    require(spec.patch_size > 0 && spec.stride > 0, ErrorKind::Domain,
            "patch size and stride must be positive");
    require(spec.patch_size <= std::min(img.height(), img.width()), ErrorKind::Dimension,
            "patch larger than image");
    require(count >= 0, ErrorKind::Domain, "negative patch count");

    std::mt19937_64 rng(rng_seed);
    const int64_t ny = (img.height() - spec.patch_size) / spec.stride + 1;
    const int64_t nx = (img.width() - spec.patch_size) / spec.stride + 1;
    std::vector<Image> out;
    out.reserve(static_cast<size_t>(count));
    using torch::indexing::Slice;
    for (int64_t i = 0; i < count; ++i) {
        const int64_t y0 = static_cast<int64_t>(rng() % static_cast<uint64_t>(ny)) * spec.stride;
        const int64_t x0 = static_cast<int64_t>(rng() % static_cast<uint64_t>(nx)) * spec.stride;
        out.emplace_back(img.tensor().index(
            {Slice(), Slice(y0, y0 + spec.patch_size), Slice(x0, x0 + spec.patch_size)}));
    }
    return out;
}

std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return files;
}

torch::Tensor stack_images(const std::vector<Image>& images) {
    require(!images.empty(), ErrorKind::Dimension, "cannot stack zero images");
    std::vector<torch::Tensor> ts;
    ts.reserve(images.size());
    for (const auto& im : images) ts.push_back(im.tensor());
    return torch::stack(ts);
}

}  // namespace lumen
