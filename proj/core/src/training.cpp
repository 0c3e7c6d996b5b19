#include "lumen/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "lumen/checkpoint.hpp"
#include "lumen/errors.hpp"
#include "lumen/retinex.hpp"

namespace lumen::training {

namespace fs = std::filesystem;
using torch::indexing::Slice;

std::string LossBreakdown::csv() const {
    char buf[64];
    std::string line = std::to_string(iter) + "," + std::to_string(stage);
    std::snprintf(buf, sizeof buf, ",%.9g", total);
    line += buf;
    for (double t : terms) {
        std::snprintf(buf, sizeof buf, ",%.9g", t);
        line += buf;
    }
    return line;
}

TrainState::TrainState(const TrainConfig& cfg)
    : phi(cfg.feature_extractor()),
      sched(cfg.schedule()),
      rng(cfg.rng_seed),
      noise_gen(at::make_generator<at::CPUGeneratorImpl>(cfg.rng_seed + 1)) {
    cfg.validate();
    torch::manual_seed(cfg.rng_seed);
    agcm = nets::AgcmNet(cfg.agcm_options());
    unet = nets::NoisePredictor(cfg.unet_options());
}

void TrainState::begin_stage(int which, const TrainConfig& cfg) {
    require(which == 1 || which == 2, ErrorKind::Config, "stage must be 1 or 2");
    stage = which;
    const bool first = which == 1;
    for (auto& p : agcm->parameters()) p.set_requires_grad(first);
    for (auto& p : unet->parameters()) p.set_requires_grad(!first);
    auto params = first ? agcm->parameters() : unet->parameters();
    optimizer_ = std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(first ? cfg.lr_stage1 : cfg.lr_stage2));
}

torch::optim::Adam& TrainState::optimizer() {
    require(optimizer_ != nullptr, ErrorKind::Config, "begin_stage() was not called");
    return *optimizer_;
}

void TrainState::set_learning_rate(double lr) {
    for (auto& group : optimizer().param_groups())
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

double TrainState::learning_rate() const {
    require(optimizer_ != nullptr, ErrorKind::Config, "begin_stage() was not called");
    return static_cast<const torch::optim::AdamOptions&>(optimizer_->param_groups().front().options())
        .lr();
}

// --- stage 1 -----------------------------------------------------------------

Stage1Terms stage1_losses(const agcm::MapPredictor& predict, const torch::Tensor& batch,
                          const hist::HistogramPrior& prior, const TrainConfig& cfg) {
    auto c = agcm::correct_image(batch, predict, cfg.use_retinex);
    Stage1Terms t;
    t.exposure = agcm::exposure_loss(c.corrected, cfg.target_E);
    // Without Retinex the histogram is taken over the corrected image's
    // channel maximum, which is what the prior was built from.
    auto illum = cfg.use_retinex ? c.corrected_illum
                                 : std::get<0>(c.corrected.max(1, true)).clamp_min(retinex::kEpsFloor);
    t.hic = hist::hic_loss(illum, prior);
    t.eatv = agcm::eatv_loss(c.maps, cfg.use_retinex ? c.pair.reflectance : batch, cfg.lambda_g);
    t.total = t.exposure + cfg.lambda1 * t.hic.to(t.exposure.dtype()) + cfg.lambda2 * t.eatv;
    return t;
}

LossBreakdown stage1_step(TrainState& state, const torch::Tensor& batch,
                          const hist::HistogramPrior& prior, const TrainConfig& cfg) {
    require(batch.dim() == 4 && batch.size(0) >= 1, ErrorKind::Dimension, "empty stage-1 batch");
    if (state.stage != 1) state.begin_stage(1, cfg);
    auto& opt = state.optimizer();
    opt.zero_grad();
    auto terms = stage1_losses(nets::as_predictor(state.agcm), batch, prior, cfg);
    terms.total.backward();
    opt.step();
    ++state.iteration;
    const double e = terms.exposure.item<double>(), h = terms.hic.item<double>(),
                 v = terms.eatv.item<double>();
    return {state.iteration, 1, e + cfg.lambda1 * h + cfg.lambda2 * v, {e, h, v}};
}

double stage1_learning_rate(const TrainConfig& cfg, int64_t i) {
    if (cfg.lr_milestones <= 0 || cfg.stage1_iters <= 0) return cfg.lr_stage1;
    const int64_t period = std::max<int64_t>(1, cfg.stage1_iters / cfg.lr_milestones);
    return cfg.lr_stage1 * std::pow(cfg.lr_decay, static_cast<double>(i / period));
}

// --- stage 2 -----------------------------------------------------------------

Stage2Draw draw_stage2(TrainState& state, const torch::Tensor& like, const TrainConfig& cfg) {
    const auto n = like.size(0);
    const auto T = state.sched.total_steps();
    std::vector<int64_t> t_star(n), t(n);
    for (int64_t i = 0; i < n; ++i) {
        t_star[i] = static_cast<int64_t>(state.rng() % static_cast<uint64_t>(cfg.t_star_max + 1));
        const int64_t lo = cfg.delta_lower == DeltaLower::TStar ? t_star[i] : 0;
        const int64_t hi = T - t_star[i];
        const int64_t delta = lo + static_cast<int64_t>(state.rng() % static_cast<uint64_t>(hi - lo + 1));
        t[i] = t_star[i] + delta;
    }
    Stage2Draw d;
    d.t_star = torch::tensor(t_star, torch::kInt64);
    d.t = torch::tensor(t, torch::kInt64);
    d.eps_t = torch::randn(like.sizes(), state.noise_gen, like.options());
    d.eps_star = torch::randn(like.sizes(), state.noise_gen, like.options());
    return d;
}

Stage2Terms stage2_losses(const pcdm::NoiseFn& net, const nets::FeatureExtractor& phi,
                          const torch::Tensor& x_tstar, const torch::Tensor& y,
                          const Stage2Draw& draw, const pcdm::NoiseSchedule& sched,
                          double lambda3) {
    auto x_t = pcdm::perturb_from_state(x_tstar, draw.t_star, draw.t, draw.eps_t, sched);
    auto eps_pred = net(x_t, draw.t, y);
    Stage2Terms terms;
    terms.diffusion = pcdm::noise_residual_loss(draw.eps_t, eps_pred);
    if (lambda3 > 0.0) {
        auto x0_hat = pcdm::estimate_x0(x_t, draw.t, eps_pred, sched);
        terms.pdc = pcdm::pdc_loss(phi, x_tstar, x0_hat, draw.t_star, draw.eps_star, sched);
    } else {
        terms.pdc = torch::zeros({}, terms.diffusion.options());
    }
    terms.total = terms.diffusion + lambda3 * terms.pdc;
    return terms;
}

torch::Tensor corrected_batch(nets::AgcmNet& agcm, const torch::Tensor& batch,
                              const TrainConfig& cfg) {
    torch::NoGradGuard guard;
    if (cfg.correction == CorrectionSource::Gamma) return agcm::gamma_correct(batch, cfg.gc_gamma);
    return agcm::correct_image(batch, nets::as_predictor(agcm), cfg.use_retinex).corrected;
}

LossBreakdown stage2_step(TrainState& state, const torch::Tensor& batch, const TrainConfig& cfg) {
    require(batch.dim() == 4 && batch.size(0) >= 1, ErrorKind::Dimension, "empty stage-2 batch");
    if (state.stage != 2) state.begin_stage(2, cfg);
    auto x_tstar = corrected_batch(state.agcm, batch, cfg);
    auto y = cfg.condition == ConditionSource::Corrected ? x_tstar : batch;
    auto draw = draw_stage2(state, x_tstar, cfg);
    auto net = pcdm::as_noise_fn(state.unet);
    auto& opt = state.optimizer();

    LossBreakdown out{0, 2, 0.0, {}};
    if (cfg.stage2_mode == Stage2Mode::Combined) {
        opt.zero_grad();
        auto terms = stage2_losses(net, state.phi, x_tstar, y, draw, state.sched, cfg.lambda3);
        terms.total.backward();
        opt.step();
        out.terms = {terms.diffusion.item<double>(), terms.pdc.item<double>()};
        out.total = out.terms[0] + cfg.lambda3 * out.terms[1];
    } else {
        // Diffusion step first, then the consistency step with the updated θ.
        opt.zero_grad();
        auto first = stage2_losses(net, state.phi, x_tstar, y, draw, state.sched, 0.0);
        first.diffusion.backward();
        opt.step();
        double pdc = 0.0;
        if (cfg.lambda3 > 0.0) {
            opt.zero_grad();
            auto second = stage2_losses(net, state.phi, x_tstar, y, draw, state.sched, cfg.lambda3);
            (cfg.lambda3 * second.pdc).backward();
            opt.step();
            pdc = second.pdc.item<double>();
        }
        const double diff = first.diffusion.item<double>();
        out.total = diff + cfg.lambda3 * pdc;
        out.terms = {diff, pdc};
    }
    out.iter = ++state.iteration;
    return out;
}

// --- driver ------------------------------------------------------------------

torch::Tensor sample_batch(const std::vector<Image>& corpus, TrainState& state,
                           const TrainConfig& cfg) {
    require(!corpus.empty(), ErrorKind::Corpus, "training corpus is empty");
    const auto p = cfg.patch_size;
    std::vector<torch::Tensor> items;
    items.reserve(static_cast<size_t>(cfg.batch_size));
    for (int64_t b = 0; b < cfg.batch_size; ++b) {
        const auto& img = corpus[state.rng() % corpus.size()];
        const auto y0 = static_cast<int64_t>(state.rng() % static_cast<uint64_t>(img.height() - p + 1));
        const auto x0 = static_cast<int64_t>(state.rng() % static_cast<uint64_t>(img.width() - p + 1));
        items.push_back(img.tensor().index({Slice(), Slice(y0, y0 + p), Slice(x0, x0 + p)}));
    }
    return torch::stack(items);
}

void run_training(const fs::path& corpus_dir, const hist::HistogramPrior& prior,
                  const TrainConfig& cfg, const fs::path& out_dir, const StepCallback& on_step) {
    cfg.validate();
    require(prior.bin_count() == cfg.bins, ErrorKind::Config,
            "prior has " + std::to_string(prior.bin_count()) + " bins, config expects " +
                std::to_string(cfg.bins));
    const auto files = list_images(corpus_dir);
    require(!files.empty(), ErrorKind::Corpus, "no training images in " + corpus_dir.string());
    std::vector<Image> corpus;
    for (const auto& f : files) {
        auto img = load_image(f);
        require(img.channels() == 3, ErrorKind::Dimension, f.string() + " is not an RGB image");
        require(img.height() >= cfg.patch_size && img.width() >= cfg.patch_size,
                ErrorKind::Dimension, f.string() + " is smaller than the patch size");
        corpus.push_back(std::move(img));
    }

    fs::create_directories(out_dir);
    save_config(cfg, out_dir / kConfigName);
    std::ofstream log(out_dir / kLossLog);
    require(log.good(), ErrorKind::Io, "cannot write loss log in " + out_dir.string());

    TrainState state(cfg);
    if (cfg.stage1_iters > 0) state.begin_stage(1, cfg);
    for (int64_t i = 0; i < cfg.stage1_iters; ++i) {
        state.set_learning_rate(stage1_learning_rate(cfg, i));
        auto row = stage1_step(state, sample_batch(corpus, state, cfg), prior, cfg);
        log << row.csv() << "\n";
        if (on_step) on_step(row);
    }
    ckpt::save_module(*state.agcm, out_dir / kAgcmCheckpoint);

    if (cfg.stage2_iters > 0) state.begin_stage(2, cfg);
    for (int64_t i = 0; i < cfg.stage2_iters; ++i) {
        auto row = stage2_step(state, sample_batch(corpus, state, cfg), cfg);
        log << row.csv() << "\n";
        if (on_step) on_step(row);
    }
    ckpt::save_module(*state.unet, out_dir / kPcdmCheckpoint);
    require(log.good(), ErrorKind::Io, "failed writing loss log");
}

Pipeline Pipeline::load(const fs::path& dir) {
    Pipeline p;
    p.cfg = load_config(dir / kConfigName);
    p.agcm = nets::AgcmNet(p.cfg.agcm_options());
    p.unet = nets::NoisePredictor(p.cfg.unet_options());
    ckpt::load_module(*p.agcm, dir / kAgcmCheckpoint);
    ckpt::load_module(*p.unet, dir / kPcdmCheckpoint);
    p.agcm->eval();
    p.unet->eval();
    return p;
}

Image Pipeline::correct(const Image& degraded) {
    require(degraded.channels() == 3, ErrorKind::Dimension, "restoration expects an RGB image");
    return Image::clamped(corrected_batch(agcm, degraded.batched(), cfg)[0]);
}

Image Pipeline::restore(const Image& degraded, const pcdm::PerturbConfig& perturb, uint64_t seed) {
    const auto corrected = correct(degraded);
    const auto& condition = cfg.condition == ConditionSource::Corrected ? corrected : degraded;
    return pcdm::restore(pcdm::as_noise_fn(unet), corrected, condition, perturb, cfg.schedule(), seed);
}

}  // namespace lumen::training
