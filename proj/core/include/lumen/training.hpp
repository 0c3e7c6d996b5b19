#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lumen/agcm.hpp"
#include "lumen/config.hpp"
#include "lumen/histogram.hpp"
#include "lumen/image.hpp"
#include "lumen/nets.hpp"
#include "lumen/pcdm.hpp"

namespace lumen::training {

/// One loss-log row. Stage 1 terms: exp, hic, eatv. Stage 2: diff, pdc.
/// `total` is the λ-weighted sum of `terms`.
struct LossBreakdown {
    int64_t iter = 0;
    int stage = 1;
    double total = 0.0;
    std::vector<double> terms;

    std::string csv() const;
};

/// Networks, optimizers and random streams of a training run.
///
/// Each stage owns its own Adam instance over its own network only, so the
/// other network's parameters are never touched by an update; moments start
/// fresh when a stage begins.
class TrainState {
public:
    explicit TrainState(const TrainConfig& cfg);

    nets::AgcmNet agcm{nullptr};
    nets::NoisePredictor unet{nullptr};
    nets::FeatureExtractor phi;
    pcdm::NoiseSchedule sched;

    int64_t iteration = 0;
    int stage = 0;

    std::mt19937_64 rng;          // patch positions, t*, Δt
    torch::Generator noise_gen;   // ε draws

    /// Switches stage, resets that stage's optimizer and freezes the other net.
    void begin_stage(int stage, const TrainConfig& cfg);
    void set_learning_rate(double lr);
    double learning_rate() const;

    torch::optim::Adam& optimizer();

private:
    std::unique_ptr<torch::optim::Adam> optimizer_;
};

struct Stage1Terms {
    torch::Tensor total, exposure, hic, eatv;
};

/// L_exp + λ1·L_hic + λ2·L_eatv on a degraded batch [N,3,H,W].
Stage1Terms stage1_losses(const agcm::MapPredictor& predict, const torch::Tensor& batch,
                          const hist::HistogramPrior& prior, const TrainConfig& cfg);

LossBreakdown stage1_step(TrainState& state, const torch::Tensor& batch,
                          const hist::HistogramPrior& prior, const TrainConfig& cfg);

/// Per-item random draws of one stage-2 step.
struct Stage2Draw {
    torch::Tensor t_star;    // int64 [N]
    torch::Tensor t;         // int64 [N], t = t* + Δt
    torch::Tensor eps_t;     // noise for x_t
    torch::Tensor eps_star;  // noise for re-diffusing x̂_0 to t*
};

Stage2Draw draw_stage2(TrainState& state, const torch::Tensor& like, const TrainConfig& cfg);

struct Stage2Terms {
    torch::Tensor total, diffusion, pdc;
};

/// L_diff + λ3·L_pdc for x_t* and condition y under the given draw.
Stage2Terms stage2_losses(const pcdm::NoiseFn& net, const nets::FeatureExtractor& phi,
                          const torch::Tensor& x_tstar, const torch::Tensor& y,
                          const Stage2Draw& draw, const pcdm::NoiseSchedule& sched,
                          double lambda3);

/// Frozen stage-1 output for a degraded batch, per the config's
/// correction source (AGCM or global gamma) and Retinex switch.
torch::Tensor corrected_batch(nets::AgcmNet& agcm, const torch::Tensor& batch,
                              const TrainConfig& cfg);

LossBreakdown stage2_step(TrainState& state, const torch::Tensor& batch, const TrainConfig& cfg);

/// Random patches from an in-memory corpus, [batch_size, 3, P, P].
torch::Tensor sample_batch(const std::vector<Image>& corpus, TrainState& state,
                           const TrainConfig& cfg);

inline constexpr const char* kAgcmCheckpoint = "agcm.ckpt";
inline constexpr const char* kPcdmCheckpoint = "pcdm.ckpt";
inline constexpr const char* kConfigName = "config.txt";
inline constexpr const char* kLossLog = "loss_log.csv";

using StepCallback = std::function<void(const LossBreakdown&)>;

/// Stage 1 for stage1_iters (learning rate decayed by lr_decay at
/// lr_milestones even milestones), then stage 2 for stage2_iters at
/// lr_stage2. Writes both checkpoints, the config and a header-less loss
/// log with one `iter,stage,total,term…` line per iteration.
void run_training(const std::filesystem::path& corpus_dir, const hist::HistogramPrior& prior,
                  const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  const StepCallback& on_step = {});

/// Learning rate for stage-1 iteration `i` (0-based).
double stage1_learning_rate(const TrainConfig& cfg, int64_t i);

/// Trained networks loaded back from a run_training output directory.
struct Pipeline {
    TrainConfig cfg;
    nets::AgcmNet agcm{nullptr};
    nets::NoisePredictor unet{nullptr};

    static Pipeline load(const std::filesystem::path& dir);

    /// I'_d for a degraded image.
    Image correct(const Image& degraded);
    /// Full restoration; `cfg` supplies t*, steps and the condition switch.
    Image restore(const Image& degraded, const pcdm::PerturbConfig& perturb, uint64_t seed);
};

}  // namespace lumen::training
