#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "lumen/agcm.hpp"

namespace lumen::nets {

// ---------------------------------------------------------------------------
// Adaptive gamma correction predictor
// ---------------------------------------------------------------------------

struct AgcmNetOptions {
    int64_t width = 16;
    double gamma_min = agcm::kGammaMin;
    double gamma_max = agcm::kGammaMax;
    /// Two-way softmax over the weight logits; off means independent sigmoids.
    bool normalize_weights = true;
};

/// Squeeze-excite gate: global average pool → bottleneck → sigmoid scale.
class ChannelAttentionImpl : public torch::nn::Module {
public:
    ChannelAttentionImpl(int64_t channels, int64_t reduction);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Linear squeeze_{nullptr}, excite_{nullptr};
};
TORCH_MODULE(ChannelAttention);

/// Two-branch map predictor.
///
/// The structure branch turns concat(L, guide) into a feature F_s. The gamma
/// branch embeds L, fuses it with F_s through channel attention and predicts
/// two gamma maps; the weight branch predicts two blend weights from F_s.
/// Both heads are zero-initialized, so an untrained net emits γ = 1 and
/// weights (½, ½).
class AgcmNetImpl : public torch::nn::Module {
public:
    explicit AgcmNetImpl(AgcmNetOptions options = {});

    /// illum [N,1,H,W], guide [N,3,H,W] → maps satisfying the gamma range and
    /// (when normalized) W_u + W_o = 1 for any parameter values.
    agcm::CorrectionMaps forward(const torch::Tensor& illum, const torch::Tensor& guide);

    const AgcmNetOptions& options() const { return options_; }

private:
    AgcmNetOptions options_;
    torch::nn::Sequential structure_{nullptr};
    torch::nn::Sequential illum_embed_{nullptr};
    ChannelAttention attention_{nullptr};
    torch::nn::Sequential gamma_body_{nullptr};
    torch::nn::Conv2d gamma_head_{nullptr};
    torch::nn::Sequential weight_body_{nullptr};
    torch::nn::Conv2d weight_head_{nullptr};
};
TORCH_MODULE(AgcmNet);

/// Adapts an AgcmNet to the agcm::MapPredictor signature.
agcm::MapPredictor as_predictor(AgcmNet net);

// ---------------------------------------------------------------------------
// Conditional noise predictor
// ---------------------------------------------------------------------------

struct UNetOptions {
    int64_t channels = 3;       // x_t and y each
    int64_t base_width = 16;
    int64_t inner_width = 32;
    int64_t time_dim = 32;      // sinusoidal embedding size, even
    int64_t total_steps = 1000; // t is normalized by this before embedding
    int64_t groups = 4;         // group-norm groups; 0 disables normalization
};

/// sin/cos features of t / total_steps; frequencies geometric in [1, 1000].
torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim, int64_t total_steps);

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int64_t in, int64_t out, int64_t emb_dim, int64_t groups);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

private:
    torch::nn::AnyModule norm1_, norm2_;
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
    torch::nn::Linear emb_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Two-level U-Net ε_θ(x_t, t, y) with y concatenated at the input.
/// Odd spatial sizes are replicate-padded to even and cropped back.
class NoisePredictorImpl : public torch::nn::Module {
public:
    explicit NoisePredictorImpl(UNetOptions options = {});

    /// x_t, y [N,C,H,W]; t int64 [N] (or scalar) in [0, total_steps].
    torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& y);

    const UNetOptions& options() const { return options_; }

private:
    UNetOptions options_;
    torch::nn::Sequential time_mlp_{nullptr};
    torch::nn::Conv2d in_conv_{nullptr}, down_{nullptr}, up_{nullptr}, out_conv_{nullptr};
    ResBlock enc1_{nullptr}, enc2_{nullptr}, mid_{nullptr}, dec1_{nullptr};
    torch::nn::AnyModule out_norm_;
};
TORCH_MODULE(NoisePredictor);

// ---------------------------------------------------------------------------
// Frozen feature extractor φ
// ---------------------------------------------------------------------------

enum class FeatureMode { Identity, RandomCnn, Pretrained };

FeatureMode parse_feature_mode(const std::string& s);
std::string to_string(FeatureMode mode);

/// Frozen φ for the consistency loss. Parameters never receive gradients;
/// gradients do flow to the input.
///
///  - Identity: φ(x) = x.
///  - RandomCnn: three stride-2 3×3 conv + ReLU stages (3→16→32→64) drawn
///    from a fixed seed; all three activations are concatenated.
///  - Pretrained: VGG-16 conv1_1 … conv3_3 loaded from a checkpoint with
///    torchvision names (features.0, features.2, …); relu1_2, relu2_2 and
///    relu3_3 are concatenated. Inputs are ImageNet-normalized.
class FeatureExtractor {
public:
    static FeatureExtractor identity();
    static FeatureExtractor random_cnn(uint64_t seed = 1234);
    static FeatureExtractor pretrained(const std::filesystem::path& weights);

    FeatureMode mode() const { return mode_; }

    /// img [N,3,H,W] → [N,F].
    torch::Tensor extract(const torch::Tensor& img) const;

    /// Flat copy of every frozen parameter (empty for identity).
    std::vector<torch::Tensor> parameters() const { return weights_; }

private:
    FeatureMode mode_ = FeatureMode::Identity;
    std::vector<torch::Tensor> weights_;  // conv weight/bias pairs
};

/// The VGG-16 parameter names Pretrained mode expects, with shapes.
std::vector<std::pair<std::string, std::vector<int64_t>>> vgg16_feature_layout();

}  // namespace lumen::nets
