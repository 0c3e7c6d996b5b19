#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "lumen/nets.hpp"
#include "lumen/pcdm.hpp"

namespace lumen {

/// What feeds the diffusion stage as x_t* (and, by default, y).
enum class CorrectionSource {
    Agcm,   // learned adaptive gamma correction
    Gamma,  // global gamma baseline L^γ ⊙ R with `gc_gamma`
};

/// Condition image y for the noise predictor.
enum class ConditionSource {
    Corrected,  // y = I'_d
    Degraded,   // y = I_d
};

/// Lower end of the Δt draw in stage 2.
enum class DeltaLower {
    TStar,  // Δt ~ U{t*, …, T − t*}
    Zero,   // Δt ~ U{0, …, T − t*}
};

enum class Stage2Mode {
    Combined,  // one optimizer step on L_diff + λ3·L_pdc
    TwoStep,   // a step on L_diff, then a step on λ3·L_pdc
};

/// Every tunable of the pipeline. Serialized as flat `key=value` lines.
struct TrainConfig {
    // stage-1 objective
    double lambda1 = 0.5;
    double lambda2 = 0.1;
    double lambda_g = 20.0;
    double target_E = 0.6;
    int bins = 64;
    // stage-2 objective
    double lambda3 = 1.0;

    int64_t batch_size = 4;
    int64_t patch_size = 64;
    int64_t stage1_iters = 2000;
    int64_t stage2_iters = 10000;
    double lr_stage1 = 1e-4;
    double lr_stage2 = 8e-5;
    double lr_decay = 0.8;
    int64_t lr_milestones = 5;

    // diffusion
    int64_t total_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int64_t t_star_max = 50;
    int64_t t_star_infer = 50;
    int64_t sample_steps = 20;
    DeltaLower delta_lower = DeltaLower::TStar;
    Stage2Mode stage2_mode = Stage2Mode::Combined;

    // architecture
    int64_t agcm_width = 16;
    bool normalize_weights = true;
    int64_t unet_base = 16;
    int64_t unet_inner = 32;
    int64_t time_dim = 32;
    nets::FeatureMode phi = nets::FeatureMode::RandomCnn;
    std::string phi_weights;
    uint64_t phi_seed = 1234;

    // ablations
    bool use_retinex = true;
    CorrectionSource correction = CorrectionSource::Agcm;
    double gc_gamma = 0.2;
    ConditionSource condition = ConditionSource::Corrected;

    uint64_t rng_seed = 0;

    void validate() const;

    pcdm::NoiseSchedule schedule() const;
    pcdm::PerturbConfig perturb() const;
    nets::AgcmNetOptions agcm_options() const;
    nets::UNetOptions unet_options() const;
    nets::FeatureExtractor feature_extractor() const;

    /// Applies one key; throws Error(Config) for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    std::map<std::string, std::string> to_map() const;

    /// The settings used at full scale: 256² patches, 1e5 / 1e6 iterations.
    static TrainConfig full_profile();
    /// Desk-scale defaults (the default-constructed config).
    static TrainConfig desk_profile();
};

/// Reads `key=value` lines; `#` starts a comment. A `profile=full|desk`
/// line resets to that profile before later keys apply.
TrainConfig load_config(const std::filesystem::path& path);
TrainConfig parse_config(const std::string& text);
void save_config(const TrainConfig& cfg, const std::filesystem::path& path);

}  // namespace lumen
