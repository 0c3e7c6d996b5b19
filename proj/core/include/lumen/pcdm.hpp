#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "lumen/image.hpp"
#include "lumen/nets.hpp"

namespace lumen::pcdm {

inline constexpr int64_t kDefaultSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

/// Linear β schedule with ᾱ_0 = 1 and ᾱ_t = Π_{s≤t} (1 − β_s).
class NoiseSchedule {
public:
    static NoiseSchedule linear(int64_t total_steps = kDefaultSteps,
                                double beta_start = kDefaultBetaStart,
                                double beta_end = kDefaultBetaEnd);

    int64_t total_steps() const { return static_cast<int64_t>(betas_.size()); }
    /// β_t for t in [1, T].
    double beta(int64_t t) const;
    /// ᾱ_t for t in [0, T].
    double alpha_bar(int64_t t) const;
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }

    /// ᾱ gathered at integer timesteps `t`, returned in `dtype` with t's shape.
    torch::Tensor alpha_bar(const torch::Tensor& t, torch::Dtype dtype) const;

    void check_timestep(int64_t t) const;

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

struct PerturbConfig {
    int64_t t_star_max = 50;
    int64_t t_star_infer = 50;
    int64_t sample_steps = 20;

    void validate(int64_t total_steps) const;
};

/// ε_θ(x_t, t, y); t is an int64 tensor with one entry per batch item.
using NoiseFn = std::function<torch::Tensor(const torch::Tensor& x_t, const torch::Tensor& t,
                                            const torch::Tensor& y)>;

NoiseFn as_noise_fn(nets::NoisePredictor net);

/// x_t = √ᾱ_t x_0 + √(1−ᾱ_t) ε.
torch::Tensor forward_diffuse(const torch::Tensor& x0, int64_t t, const torch::Tensor& eps,
                              const NoiseSchedule& sched);
/// Per-item timesteps, t int64 [N].
torch::Tensor forward_diffuse(const torch::Tensor& x0, const torch::Tensor& t,
                              const torch::Tensor& eps, const NoiseSchedule& sched);

/// Continue diffusing an intermediate state from t* to t ≥ t*:
/// x_t = √(ᾱ_t/ᾱ_t*) x_t* + √(1 − ᾱ_t/ᾱ_t*) ε.
torch::Tensor perturb_from_state(const torch::Tensor& x_tstar, int64_t t_star, int64_t t,
                                 const torch::Tensor& eps, const NoiseSchedule& sched);
torch::Tensor perturb_from_state(const torch::Tensor& x_tstar, const torch::Tensor& t_star,
                                 const torch::Tensor& t, const torch::Tensor& eps,
                                 const NoiseSchedule& sched);

/// x̂_0 = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t.
torch::Tensor estimate_x0(const torch::Tensor& x_t, int64_t t, const torch::Tensor& eps_pred,
                          const NoiseSchedule& sched);
torch::Tensor estimate_x0(const torch::Tensor& x_t, const torch::Tensor& t,
                          const torch::Tensor& eps_pred, const NoiseSchedule& sched);

/// Root-mean-square of each batch item, [N]. Zero items have zero gradient.
torch::Tensor rms_per_item(const torch::Tensor& diff);

/// Batch mean of RMS(ε − ε̂).
torch::Tensor noise_residual_loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pred);

/// Batch mean of RMS(ε − ε_θ(x_t, t, y)).
torch::Tensor diffusion_loss(const NoiseFn& net, const torch::Tensor& x_t, const torch::Tensor& t,
                             const torch::Tensor& y, const torch::Tensor& eps_true);

/// Batch mean of RMS(φ(x_t*) − φ(√ᾱ_t* x̂_0 + √(1−ᾱ_t*) ε_new)).
torch::Tensor pdc_loss(const nets::FeatureExtractor& phi, const torch::Tensor& x_tstar,
                       const torch::Tensor& x0_hat, const torch::Tensor& t_star,
                       const torch::Tensor& eps_new, const NoiseSchedule& sched);
torch::Tensor pdc_loss(const nets::FeatureExtractor& phi, const torch::Tensor& x_tstar,
                       const torch::Tensor& x0_hat, int64_t t_star, const torch::Tensor& eps_new,
                       const NoiseSchedule& sched);

/// Descending timesteps t*, …, 0 for an implicit sampler with `steps`
/// uniformly spaced jumps (duplicates removed when t* < steps).
std::vector<int64_t> sampling_timesteps(int64_t t_star, int64_t steps);

/// Deterministic (η = 0) reverse recursion from x_t* = start down to 0,
/// conditioned on `condition`. Returns the unclamped x̂_0.
torch::Tensor restore_tensor(const NoiseFn& net, const torch::Tensor& start,
                             const torch::Tensor& condition, int64_t t_star, int64_t steps,
                             const NoiseSchedule& sched);

/// Restores a corrected image: x_t* = y = corrected, t* = cfg.t_star_infer,
/// output clamped to [0, 1]. The η = 0 sampler draws no noise, so the
/// output does not depend on `rng_seed`; the seed is part of the signature
/// so stochastic samplers can slot in without changing callers.
Image restore(const NoiseFn& net, const Image& corrected, const PerturbConfig& cfg,
              const NoiseSchedule& sched, uint64_t rng_seed);
/// Same with an explicit condition image (the y = I_d ablation).
Image restore(const NoiseFn& net, const Image& corrected, const Image& condition,
              const PerturbConfig& cfg, const NoiseSchedule& sched, uint64_t rng_seed);

}  // namespace lumen::pcdm
