#include "lumen/nets.hpp"

#include <cmath>

#include "lumen/checkpoint.hpp"
#include "lumen/errors.hpp"

namespace lumen::nets {

namespace nn = torch::nn;
using torch::indexing::Slice;

namespace {

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

// conv3x3 + LeakyReLU for each consecutive width pair.
nn::Sequential conv_stack(std::initializer_list<int64_t> widths) {
    nn::Sequential seq;
    const std::vector<int64_t> w(widths);
    for (size_t i = 0; i + 1 < w.size(); ++i) {
        seq->push_back(conv3x3(w[i], w[i + 1]));
        seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    }
    return seq;
}

void zero_init(nn::Conv2d& conv) {
    torch::NoGradGuard guard;
    conv->weight.zero_();
    conv->bias.zero_();
}

nn::AnyModule make_norm(int64_t groups, int64_t channels) {
    if (groups > 0 && channels % groups == 0)
        return nn::AnyModule(nn::GroupNorm(nn::GroupNormOptions(groups, channels)));
    return nn::AnyModule(nn::Identity());
}

}  // namespace

// --- AGCM ------------------------------------------------------------------

ChannelAttentionImpl::ChannelAttentionImpl(int64_t channels, int64_t reduction) {
    const int64_t hidden = std::max<int64_t>(1, channels / reduction);
    squeeze_ = register_module("squeeze", nn::Linear(channels, hidden));
    excite_ = register_module("excite", nn::Linear(hidden, channels));
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& x) {
    auto pooled = x.mean({2, 3});
    auto gate = torch::sigmoid(excite_->forward(torch::relu(squeeze_->forward(pooled))));
    return x * gate.unsqueeze(-1).unsqueeze(-1);
}

AgcmNetImpl::AgcmNetImpl(AgcmNetOptions options) : options_(options) {
    require(options_.gamma_min > 0.0 && options_.gamma_min < options_.gamma_max, ErrorKind::Config,
            "gamma bounds must satisfy 0 < min < max");
    const int64_t w = options_.width;
    structure_ = register_module(
        "structure", conv_stack({4, w, w, w}));
    illum_embed_ = register_module("illum_embed", conv_stack({1, w}));
    attention_ = register_module("attention", ChannelAttention(2 * w, 4));
    gamma_body_ = register_module("gamma_body", conv_stack({2 * w, w}));
    gamma_head_ = register_module("gamma_head", conv3x3(w, 2));
    weight_body_ = register_module("weight_body", conv_stack({w, w}));
    weight_head_ = register_module("weight_head", conv3x3(w, 2));
    zero_init(gamma_head_);
    zero_init(weight_head_);
}

agcm::CorrectionMaps AgcmNetImpl::forward(const torch::Tensor& illum, const torch::Tensor& guide) {
    require(illum.dim() == 4 && illum.size(1) == 1 && guide.dim() == 4 && guide.size(1) == 3,
            ErrorKind::Dimension, "AGCM expects illumination [N,1,H,W] and guide [N,3,H,W]");
    require(illum.size(0) == guide.size(0) && illum.size(2) == guide.size(2) &&
                illum.size(3) == guide.size(3),
            ErrorKind::Dimension, "illumination and guide shapes differ");

    auto features = structure_->forward(torch::cat({illum, guide}, 1));
    auto fused = attention_->forward(torch::cat({illum_embed_->forward(illum), features}, 1));
    auto gamma_raw = gamma_head_->forward(gamma_body_->forward(fused));
    auto weight_raw = weight_head_->forward(weight_body_->forward(features));

    // log γ = centre + half-range · tanh(z); z = 0 sits at the geometric mean
    // of the bounds (γ = 1 for the default [0.1, 10]).
    const double lo = std::log(options_.gamma_min), hi = std::log(options_.gamma_max);
    auto gammas = torch::exp(0.5 * (lo + hi) + 0.5 * (hi - lo) * torch::tanh(gamma_raw));
    auto weights = options_.normalize_weights ? torch::softmax(weight_raw, 1)
                                              : torch::sigmoid(weight_raw);

    agcm::CorrectionMaps maps;
    maps.gamma_u = gammas.index({Slice(), Slice(0, 1)});
    maps.gamma_o = gammas.index({Slice(), Slice(1, 2)});
    maps.weight_u = weights.index({Slice(), Slice(0, 1)});
    maps.weight_o = weights.index({Slice(), Slice(1, 2)});
    return maps;
}

agcm::MapPredictor as_predictor(AgcmNet net) {
    return [net](const torch::Tensor& illum, const torch::Tensor& guide) mutable {
        return net->forward(illum, guide);
    };
}

// --- noise predictor ---------------------------------------------------------

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim, int64_t total_steps) {
    require(dim >= 2 && dim % 2 == 0, ErrorKind::Config, "time embedding dim must be even");
    const int64_t half = dim / 2;
    auto s = t.to(torch::kFloat32).reshape({-1, 1}) / static_cast<double>(total_steps);
    auto exponents = torch::arange(half, torch::kFloat32) / std::max<int64_t>(1, half - 1);
    auto freqs = torch::exp(exponents * std::log(1000.0)).unsqueeze(0);
    auto args = s * freqs;
    return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

ResBlockImpl::ResBlockImpl(int64_t in, int64_t out, int64_t emb_dim, int64_t groups) {
    norm1_ = make_norm(groups, in);
    norm2_ = make_norm(groups, out);
    register_module("norm1", norm1_.ptr());
    register_module("norm2", norm2_.ptr());
    conv1_ = register_module("conv1", conv3x3(in, out));
    conv2_ = register_module("conv2", conv3x3(out, out));
    emb_proj_ = register_module("emb_proj", nn::Linear(emb_dim, out));
    if (in != out) skip_ = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
    auto h = conv1_->forward(torch::silu(norm1_.forward(x)));
    h = h + emb_proj_->forward(emb).unsqueeze(-1).unsqueeze(-1);
    h = conv2_->forward(torch::silu(norm2_.forward(h)));
    return (skip_ ? skip_->forward(x) : x) + h;
}

NoisePredictorImpl::NoisePredictorImpl(UNetOptions options) : options_(options) {
    const auto c = options_.channels, b = options_.base_width, m = options_.inner_width;
    const auto td = options_.time_dim, ed = 2 * options_.time_dim, g = options_.groups;
    time_mlp_ = register_module("time_mlp", nn::Sequential(nn::Linear(td, ed), nn::SiLU(),
                                                           nn::Linear(ed, ed)));
    in_conv_ = register_module("in_conv", conv3x3(2 * c, b));
    enc1_ = register_module("enc1", ResBlock(b, b, ed, g));
    down_ = register_module("down", conv3x3(b, b, 2));
    enc2_ = register_module("enc2", ResBlock(b, m, ed, g));
    mid_ = register_module("mid", ResBlock(m, m, ed, g));
    up_ = register_module("up", conv3x3(m, b));
    dec1_ = register_module("dec1", ResBlock(2 * b, b, ed, g));
    out_norm_ = make_norm(g, b);
    register_module("out_norm", out_norm_.ptr());
    out_conv_ = register_module("out_conv", conv3x3(b, c));
}

torch::Tensor NoisePredictorImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t,
                                          const torch::Tensor& y) {
    require(x_t.dim() == 4 && x_t.sizes() == y.sizes(), ErrorKind::Dimension,
            "x_t and condition must share a [N,C,H,W] shape");
    require(x_t.size(1) == options_.channels, ErrorKind::Dimension, "unexpected channel count");
    auto steps = t.to(torch::kInt64).reshape({-1});
    if (steps.numel() == 1 && x_t.size(0) > 1) steps = steps.expand({x_t.size(0)});
    require(steps.numel() == x_t.size(0), ErrorKind::Dimension, "one timestep per batch item");
    require(steps.min().item<int64_t>() >= 0 && steps.max().item<int64_t>() <= options_.total_steps,
            ErrorKind::Domain, "timestep out of range");

    const auto h = x_t.size(2), w = x_t.size(3);
    const auto ph = h % 2, pw = w % 2;
    auto input = torch::cat({x_t, y}, 1);
    if (ph || pw) input = torch::replication_pad2d(input, {0, pw, 0, ph});

    auto emb = timestep_embedding(steps, options_.time_dim, options_.total_steps).to(x_t.dtype());
    emb = time_mlp_->forward(emb);

    auto h1 = enc1_->forward(in_conv_->forward(input), emb);
    auto h2 = enc2_->forward(down_->forward(h1), emb);
    h2 = mid_->forward(h2, emb);
    auto up = nn::functional::interpolate(
        up_->forward(h2), nn::functional::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{h1.size(2), h1.size(3)})
                              .mode(torch::kNearest));
    auto d1 = dec1_->forward(torch::cat({up, h1}, 1), emb);
    auto out = out_conv_->forward(torch::silu(out_norm_.forward(d1)));
    if (ph || pw) out = out.index({Slice(), Slice(), Slice(0, h), Slice(0, w)});
    return out;
}

// --- feature extractor ---------------------------------------------------------

FeatureMode parse_feature_mode(const std::string& s) {
    if (s == "identity") return FeatureMode::Identity;
    if (s == "random-cnn" || s == "random_cnn") return FeatureMode::RandomCnn;
    if (s == "pretrained" || s == "vgg16") return FeatureMode::Pretrained;
    fail(ErrorKind::Config, "unknown feature extractor '" + s + "'");
}

std::string to_string(FeatureMode mode) {
    switch (mode) {
        case FeatureMode::Identity: return "identity";
        case FeatureMode::RandomCnn: return "random-cnn";
        case FeatureMode::Pretrained: return "pretrained";
    }
    return "identity";
}

FeatureExtractor FeatureExtractor::identity() { return {}; }

FeatureExtractor FeatureExtractor::random_cnn(uint64_t seed) {
    FeatureExtractor phi;
    phi.mode_ = FeatureMode::RandomCnn;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    const int64_t widths[] = {3, 16, 32, 64};
    for (int i = 0; i < 3; ++i) {
        const double std = std::sqrt(2.0 / (widths[i] * 9.0));
        phi.weights_.push_back(
            torch::randn({widths[i + 1], widths[i], 3, 3}, gen, torch::kFloat32) * std);
        phi.weights_.push_back(torch::zeros({widths[i + 1]}, torch::kFloat32));
    }
    return phi;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> vgg16_feature_layout() {
    const std::pair<int, std::pair<int64_t, int64_t>> convs[] = {
        {0, {3, 64}},    {2, {64, 64}},    {5, {64, 128}},   {7, {128, 128}},
        {10, {128, 256}}, {12, {256, 256}}, {14, {256, 256}}};
    std::vector<std::pair<std::string, std::vector<int64_t>>> layout;
    for (const auto& [idx, io] : convs) {
        const std::string base = "features." + std::to_string(idx);
        layout.push_back({base + ".weight", {io.second, io.first, 3, 3}});
        layout.push_back({base + ".bias", {io.second}});
    }
    return layout;
}

FeatureExtractor FeatureExtractor::pretrained(const std::filesystem::path& weights) {
    const auto tensors = ckpt::load_tensors(weights);
    FeatureExtractor phi;
    phi.mode_ = FeatureMode::Pretrained;
    for (const auto& [name, shape] : vgg16_feature_layout()) {
        auto it = std::find_if(tensors.begin(), tensors.end(),
                               [&](const auto& nt) { return nt.first == name; });
        require(it != tensors.end(), ErrorKind::Format, "VGG-16 weights missing " + name);
        require(it->second.sizes().vec() == shape, ErrorKind::Format,
                "VGG-16 weight " + name + " has the wrong shape");
        phi.weights_.push_back(it->second.to(torch::kFloat32).contiguous());
    }
    return phi;
}

torch::Tensor FeatureExtractor::extract(const torch::Tensor& img) const {
    require(img.dim() == 4 && img.size(1) == 3, ErrorKind::Dimension,
            "feature extractor expects [N,3,H,W]");
    const auto n = img.size(0);
    if (mode_ == FeatureMode::Identity) return img.reshape({n, -1});

    auto param = [&](size_t i) { return weights_[i].to(img.dtype()); };
    std::vector<torch::Tensor> feats;
    if (mode_ == FeatureMode::RandomCnn) {
        auto x = img;
        for (size_t s = 0; s < 3; ++s) {
            x = torch::relu(torch::conv2d(x, param(2 * s), param(2 * s + 1), 2, 1));
            feats.push_back(x.reshape({n, -1}));
        }
        return torch::cat(feats, 1);
    }

    auto mean = torch::tensor({0.485, 0.456, 0.406}, img.options()).view({1, 3, 1, 1});
    auto stdv = torch::tensor({0.229, 0.224, 0.225}, img.options()).view({1, 3, 1, 1});
    auto x = (img - mean) / stdv;
    auto conv = [&](size_t layer) {
        x = torch::relu(torch::conv2d(x, param(2 * layer), param(2 * layer + 1), 1, 1));
    };
    conv(0);
    conv(1);
    feats.push_back(x.reshape({n, -1}));
    x = torch::max_pool2d(x, 2);
    conv(2);
    conv(3);
    feats.push_back(x.reshape({n, -1}));
    x = torch::max_pool2d(x, 2);
    conv(4);
    conv(5);
    conv(6);
    feats.push_back(x.reshape({n, -1}));
    return torch::cat(feats, 1);
}

}  // namespace lumen::nets
