#include "lumen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "lumen/errors.hpp"

namespace lumen::ckpt {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    require(in.good(), ErrorKind::Format, "truncated checkpoint " + path.string());
    return value;
}

}  // namespace

void save_tensors(const NamedTensors& tensors, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::Io, "cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<uint32_t>(out, kVersion);
    put<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        auto data = tensor.detach().to(torch::kFloat32).contiguous();
        put<uint32_t>(out, static_cast<uint32_t>(data.dim()));
        for (auto d : data.sizes()) put<int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
                  static_cast<std::streamsize>(data.numel() * sizeof(float)));
    }
    require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

NamedTensors load_tensors(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Load, "cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    require(in.good() && std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorKind::Format,
            "not a lumen checkpoint: " + path.string());
    const auto version = get<uint32_t>(in, path);
    require(version == kVersion, ErrorKind::Format,
            "unsupported checkpoint version " + std::to_string(version));
    const auto count = get<uint32_t>(in, path);

    NamedTensors tensors;
    for (uint32_t i = 0; i < count; ++i) {
        const auto len = get<uint32_t>(in, path);
        require(len < (1u << 16), ErrorKind::Format, "corrupt tensor name in " + path.string());
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto ndim = get<uint32_t>(in, path);
        require(ndim <= 8, ErrorKind::Format, "corrupt tensor rank in " + path.string());
        std::vector<int64_t> dims(ndim);
        int64_t numel = 1;
        for (auto& d : dims) {
            d = get<int64_t>(in, path);
            require(d >= 0, ErrorKind::Format, "negative dimension in " + path.string());
            numel *= d;
        }
        auto t = torch::empty(dims, torch::kFloat32);
        in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        require(in.good() || (numel == 0 && !in.bad()), ErrorKind::Format,
                "truncated checkpoint " + path.string());
        tensors.emplace_back(std::move(name), std::move(t));
    }
    return tensors;
}

NamedTensors module_state(const torch::nn::Module& module) {
    NamedTensors state;
    for (const auto& p : module.named_parameters(/*recurse=*/true)) state.emplace_back(p.key(), p.value());
    for (const auto& b : module.named_buffers(/*recurse=*/true)) state.emplace_back(b.key(), b.value());
    return state;
}

void save_module(const torch::nn::Module& module, const fs::path& path) {
    save_tensors(module_state(module), path);
}

void load_module(torch::nn::Module& module, const fs::path& path) {
    std::map<std::string, torch::Tensor> stored;
    for (auto& [name, t] : load_tensors(path)) stored.emplace(name, t);

    torch::NoGradGuard guard;
    for (auto& [name, target] : module_state(module)) {
        auto it = stored.find(name);
        require(it != stored.end(), ErrorKind::Format,
                "checkpoint " + path.string() + " lacks '" + name + "'");
        require(it->second.sizes() == target.sizes(), ErrorKind::Dimension,
                "shape mismatch for '" + name + "' in " + path.string());
        target.copy_(it->second);
    }
}

}  // namespace lumen::ckpt
