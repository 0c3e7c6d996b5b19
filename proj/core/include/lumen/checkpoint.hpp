#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace lumen::ckpt {

/// Flat container of named float32 arrays.
///
///   magic    8 bytes  "LUMNCKPT"
///   version  uint32   (currently 1)
///   count    uint32
///   count × { name_len uint32, name bytes,
///             ndim uint32, dims int64[ndim],
///             data float32[prod(dims)] }
///
/// All integers and floats are little-endian.
inline constexpr char kMagic[8] = {'L', 'U', 'M', 'N', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

void save_tensors(const NamedTensors& tensors, const std::filesystem::path& path);
NamedTensors load_tensors(const std::filesystem::path& path);

/// Parameters and buffers of a module, in registration order.
NamedTensors module_state(const torch::nn::Module& module);

void save_module(const torch::nn::Module& module, const std::filesystem::path& path);

/// Copies stored values into the module; every parameter/buffer must be
/// present with a matching shape.
void load_module(torch::nn::Module& module, const std::filesystem::path& path);

}  // namespace lumen::ckpt
