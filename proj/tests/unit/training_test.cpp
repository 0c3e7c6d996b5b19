#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "lumen/checkpoint.hpp"
#include "lumen/config.hpp"
#include "lumen/datagen.hpp"
#include "lumen/errors.hpp"
#include "lumen/training.hpp"
#include "lumen_test_support.hpp"

using namespace lumen;
using lumen::testing::TempDir;
using lumen::testing::uniform;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.patch_size = 16;
    cfg.stage1_iters = 3;
    cfg.stage2_iters = 3;
    cfg.agcm_width = 4;
    cfg.unet_base = 4;
    cfg.unet_inner = 8;
    cfg.time_dim = 8;
    cfg.bins = 16;
    cfg.rng_seed = 3;
    return cfg;
}

hist::HistogramPrior mid_prior(int bins) {
    hist::HistogramPrior p;
    p.bins.assign(static_cast<size_t>(bins), 0.0);
    double total = 0.0;
    for (int i = 0; i < bins; ++i) total += (p.bins[i] = std::exp(-std::pow((i + 0.5) / bins - 0.6, 2) / 0.02));
    for (auto& b : p.bins) b /= total;
    p.corpus_size = 1;
    return p;
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

bool bitwise_equal(const std::vector<torch::Tensor>& a, torch::nn::Module& m) {
    auto b = m.parameters();
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!torch::equal(a[i], b[i])) return false;
    return true;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

torch::Tensor dark_batch(uint64_t seed) {
    return uniform({2, 3, 16, 16}, 0.01, 0.3, seed, torch::kFloat32);
}

}  // namespace

TEST(Config, ParseSaveRoundTrip) {
    TempDir dir("cfg");
    auto cfg = parse_config("# comment\nlambda1 = 0.25\nstage2_mode=two_step\ndelta_lower=zero\nphi=identity\n");
    EXPECT_EQ(cfg.lambda1, 0.25);
    EXPECT_EQ(cfg.stage2_mode, Stage2Mode::TwoStep);
    EXPECT_EQ(cfg.delta_lower, DeltaLower::Zero);
    EXPECT_EQ(cfg.phi, nets::FeatureMode::Identity);
    save_config(cfg, dir / "c.txt");
    EXPECT_EQ(load_config(dir / "c.txt").to_map(), cfg.to_map());
}

TEST(Config, ProfilesAndErrors) {
    auto full = parse_config("profile=full\n");
    EXPECT_EQ(full.patch_size, 256);
    EXPECT_EQ(full.stage1_iters, 100000);
    EXPECT_EQ(full.stage2_iters, 1000000);
    EXPECT_EQ(TrainConfig::desk_profile().to_map(), TrainConfig{}.to_map());
    for (const char* bad : {"nonsense=1\n", "lambda1=-1\n", "lr_stage1=0\n", "batch_size=abc\n", "profile=huge\n"}) {
        try {
            parse_config(bad);
            FAIL() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Config) << bad;
        }
    }
}

TEST(Config, DefaultsFollowThePublishedSettings) {
    TrainConfig cfg;
    EXPECT_EQ(cfg.lambda1, 0.5);
    EXPECT_EQ(cfg.lambda2, 0.1);
    EXPECT_EQ(cfg.lambda3, 1.0);
    EXPECT_EQ(cfg.lambda_g, 20.0);
    EXPECT_EQ(cfg.target_E, 0.6);
    EXPECT_EQ(cfg.lr_stage1, 1e-4);
    EXPECT_EQ(cfg.lr_stage2, 8e-5);
    EXPECT_EQ(cfg.lr_decay, 0.8);
    EXPECT_EQ(cfg.sample_steps, 20);
}

TEST(Training, LearningRateMilestones) {
    TrainConfig cfg;
    cfg.stage1_iters = 100;
    EXPECT_DOUBLE_EQ(training::stage1_learning_rate(cfg, 0), 1e-4);
    EXPECT_DOUBLE_EQ(training::stage1_learning_rate(cfg, 19), 1e-4);
    EXPECT_DOUBLE_EQ(training::stage1_learning_rate(cfg, 20), 0.8e-4);
    EXPECT_NEAR(training::stage1_learning_rate(cfg, 99), 1e-4 * std::pow(0.8, 4), 1e-18);
}

TEST(Training, Stage1ZeroObjective) {
    auto cfg = tiny_config();
    cfg.lambda1 = cfg.lambda2 = 0.0;
    // Stub correction that lands every region exactly on the target.
    agcm::MapPredictor stub = [](const torch::Tensor& illum, const torch::Tensor&) {
        auto g = (std::log(0.6) / illum.log()).clamp(0.1, 10.0);
        return agcm::CorrectionMaps{g, g, torch::full_like(g, 0.5), torch::full_like(g, 0.5)};
    };
    auto batch = torch::full({2, 3, 16, 16}, 0.2, torch::kFloat64);
    auto terms = training::stage1_losses(stub, batch, mid_prior(16), cfg);
    EXPECT_NEAR(terms.total.item<double>(), 0.0, 1e-12);

    // A fresh net is the identity; an input already at the target leaves nothing to learn.
    cfg.target_E = 0.5;
    training::TrainState state(cfg);
    state.begin_stage(1, cfg);
    auto net_terms = training::stage1_losses(nets::as_predictor(state.agcm),
                                             torch::full({2, 3, 16, 16}, 0.5f), mid_prior(16), cfg);
    net_terms.total.backward();
    for (const auto& p : state.agcm->parameters())
        if (p.grad().defined()) EXPECT_EQ(p.grad().abs().max().item<float>(), 0.0f);
}

TEST(Training, Stage1TotalIsWeightedSumAndFreezesPcdm) {
    auto cfg = tiny_config();
    training::TrainState state(cfg);
    auto before = snapshot(*state.unet);
    auto batch = dark_batch(1);
    auto direct = training::stage1_losses(nets::as_predictor(state.agcm), batch, mid_prior(16), cfg);
    auto row = training::stage1_step(state, batch, mid_prior(16), cfg);
    ASSERT_EQ(row.terms.size(), 3u);
    EXPECT_NEAR(direct.total.item<double>(), row.total, 1e-6 * std::abs(row.total));
    EXPECT_NEAR(row.total, row.terms[0] + 0.5 * row.terms[1] + 0.1 * row.terms[2], 1e-6);
    EXPECT_TRUE(bitwise_equal(before, *state.unet));
    EXPECT_EQ(row.stage, 1);
}

TEST(Training, Stage2FreezesAgcmAndIsLinearInLambda3) {
    auto cfg = tiny_config();
    training::TrainState state(cfg);
    training::stage1_step(state, dark_batch(2), mid_prior(16), cfg);
    auto before = snapshot(*state.agcm);
    for (int i = 0; i < 3; ++i) {
        auto row = training::stage2_step(state, dark_batch(3 + i), cfg);
        ASSERT_EQ(row.terms.size(), 2u);
        EXPECT_NEAR(row.total, row.terms[0] + cfg.lambda3 * row.terms[1], 1e-6);
    }
    EXPECT_TRUE(bitwise_equal(before, *state.agcm));

    cfg.stage2_mode = Stage2Mode::TwoStep;
    auto row = training::stage2_step(state, dark_batch(9), cfg);
    EXPECT_NEAR(row.total, row.terms[0] + cfg.lambda3 * row.terms[1], 1e-6);
    EXPECT_TRUE(bitwise_equal(before, *state.agcm));
}

TEST(Training, Stage2ZeroLambdaIsPlainDiffusion) {
    auto cfg = tiny_config();
    cfg.lambda3 = 0.0;
    training::TrainState state(cfg);
    auto row = training::stage2_step(state, dark_batch(4), cfg);
    EXPECT_EQ(row.terms[1], 0.0);
    EXPECT_DOUBLE_EQ(row.total, row.terms[0]);
}

TEST(Training, Stage2ComposedZeroCase) {
    const auto sched = pcdm::NoiseSchedule::linear();
    auto phi = nets::FeatureExtractor::identity();
    auto x0 = uniform({2, 3, 8, 8}, 0, 1, 5);
    auto e = lumen::testing::gaussian({2, 3, 8, 8}, 6);

    // t* = 0: x_t* is the clean image, the stub returns the true ε_t.
    training::Stage2Draw draw{torch::tensor({0, 0}, torch::kInt64), torch::tensor({300, 800}, torch::kInt64), e,
                              lumen::testing::gaussian({2, 3, 8, 8}, 7)};
    pcdm::NoiseFn oracle = [&](const torch::Tensor&, const torch::Tensor&, const torch::Tensor&) { return e; };
    auto terms = training::stage2_losses(oracle, phi, x0, x0, draw, sched, 1.0);
    EXPECT_NEAR(terms.diffusion.item<double>(), 0.0, 1e-12);
    EXPECT_NEAR(terms.pdc.item<double>(), 0.0, 1e-12);

    // Δt = 0 with the renoising ε matched to the one that built x_t*.
    auto ts = torch::tensor({20, 45}, torch::kInt64);
    auto xs = pcdm::forward_diffuse(x0, ts, e, sched);
    training::Stage2Draw same{ts, ts, e, e};
    auto terms2 = training::stage2_losses(oracle, phi, xs, xs, same, sched, 1.0);
    EXPECT_NEAR(terms2.diffusion.item<double>(), 0.0, 1e-12);
    EXPECT_NEAR(terms2.pdc.item<double>(), 0.0, 1e-12);
}

TEST(Training, DrawsRespectRanges) {
    auto cfg = tiny_config();
    training::TrainState state(cfg);
    auto like = torch::zeros({64, 3, 2, 2});
    for (auto lower : {DeltaLower::TStar, DeltaLower::Zero}) {
        cfg.delta_lower = lower;
        auto d = training::draw_stage2(state, like, cfg);
        for (int64_t i = 0; i < 64; ++i) {
            const auto ts = d.t_star[i].item<int64_t>(), t = d.t[i].item<int64_t>();
            EXPECT_GE(ts, 0);
            EXPECT_LE(ts, cfg.t_star_max);
            EXPECT_GE(t - ts, lower == DeltaLower::TStar ? ts : 0);
            EXPECT_LE(t, 1000);
        }
    }
}

TEST(Training, DescentOnAFixedBatch) {
    auto cfg = tiny_config();
    cfg.agcm_width = 8;
    training::TrainState state(cfg);
    auto batch = dark_batch(11);
    auto prior = mid_prior(16);
    std::vector<double> losses;
    for (int i = 0; i < 50; ++i) losses.push_back(training::stage1_step(state, batch, prior, cfg).total);
    std::vector<double> smooth;
    for (size_t i = 0; i + 5 <= losses.size(); ++i) {
        double s = 0.0;
        for (size_t k = i; k < i + 5; ++k) s += losses[k];
        smooth.push_back(s / 5);
    }
    for (size_t i = 1; i < smooth.size(); ++i) EXPECT_LE(smooth[i], smooth[i - 1] + 1e-9) << i;
}

class TrainingRun : public ::testing::Test {
protected:
    void SetUp() override {
        datagen::make_synthetic_corpus(clean_.path(), 3, 24, 24, 1);
        datagen::DegradeSpec spec;
        spec.rng_seed = 2;
        datagen::make_corpus(clean_.path(), corpus_.path(), spec, 3);
    }
    TempDir clean_{"tr_clean"}, corpus_{"tr_corpus"};
};

TEST_F(TrainingRun, LogLinesAndDeterminism) {
    TempDir a("tr_a"), b("tr_b");
    auto cfg = tiny_config();
    training::run_training(corpus_.path(), mid_prior(16), cfg, a.path());
    training::run_training(corpus_.path(), mid_prior(16), cfg, b.path());
    const auto log = slurp(a / training::kLossLog);
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), cfg.stage1_iters + cfg.stage2_iters);
    EXPECT_EQ(log, slurp(b / training::kLossLog));
    EXPECT_EQ(slurp(a / training::kAgcmCheckpoint), slurp(b / training::kAgcmCheckpoint));
    EXPECT_EQ(slurp(a / training::kPcdmCheckpoint), slurp(b / training::kPcdmCheckpoint));
}

TEST_F(TrainingRun, ZeroIterationsKeepInitialization) {
    TempDir out("tr_zero");
    auto cfg = tiny_config();
    cfg.stage1_iters = cfg.stage2_iters = 0;
    training::run_training(corpus_.path(), mid_prior(16), cfg, out.path());
    training::TrainState fresh(cfg);
    auto stored = ckpt::load_tensors(out / training::kAgcmCheckpoint);
    auto init = ckpt::module_state(*fresh.agcm);
    ASSERT_EQ(stored.size(), init.size());
    for (size_t i = 0; i < init.size(); ++i) EXPECT_TRUE(torch::equal(stored[i].second, init[i].second));
    auto stored_u = ckpt::load_tensors(out / training::kPcdmCheckpoint);
    auto init_u = ckpt::module_state(*fresh.unet);
    for (size_t i = 0; i < init_u.size(); ++i) EXPECT_TRUE(torch::equal(stored_u[i].second, init_u[i].second));
    EXPECT_TRUE(slurp(out / training::kLossLog).empty());
}

TEST_F(TrainingRun, PipelineLoadsAndRestores) {
    TempDir out("tr_pipe");
    auto cfg = tiny_config();
    training::run_training(corpus_.path(), mid_prior(16), cfg, out.path());
    auto pipe = training::Pipeline::load(out.path());
    auto img = load_image(list_images(corpus_.path()).front());
    auto perturb = pipe.cfg.perturb();
    perturb.sample_steps = 4;
    auto a = pipe.restore(img, perturb, 0), b = pipe.restore(img, perturb, 0);
    EXPECT_TRUE(torch::equal(a.tensor(), b.tensor()));
    EXPECT_EQ(pipe.correct(img).tensor().sizes(), img.tensor().sizes());
}

TEST_F(TrainingRun, Errors) {
    TempDir out("tr_err"), empty("tr_empty");
    auto cfg = tiny_config();
    EXPECT_THROW(training::run_training(empty.path(), mid_prior(16), cfg, out.path()), Error);
    try {
        training::run_training(corpus_.path(), mid_prior(8), cfg, out.path());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
}
