#include <gtest/gtest.h>

#include "lumen/errors.hpp"
#include "lumen/pcdm.hpp"
#include "lumen_test_support.hpp"

using namespace lumen;
using lumen::testing::gaussian;
using lumen::testing::max_abs;
using lumen::testing::uniform;

namespace {

const pcdm::NoiseSchedule& sched() {
    static const auto s = pcdm::NoiseSchedule::linear();
    return s;
}

/// ε that exactly explains x_t given the known clean x0.
pcdm::NoiseFn exact_noise(const torch::Tensor& x0, const pcdm::NoiseSchedule& s) {
    return [x0, &s](const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor&) {
        auto ab = s.alpha_bar(t, x_t.scalar_type()).view({-1, 1, 1, 1});
        return (x_t - ab.sqrt() * x0) / (1.0 - ab).sqrt();
    };
}

pcdm::NoiseFn constant_noise(const torch::Tensor& value) {
    return [value](const torch::Tensor&, const torch::Tensor&, const torch::Tensor&) { return value; };
}

}  // namespace

TEST(Schedule, Values) {
    EXPECT_EQ(sched().alpha_bar(0), 1.0);
    auto one = pcdm::NoiseSchedule::linear(1, 0.5, 0.5);
    EXPECT_DOUBLE_EQ(one.alpha_bar(1), 0.5);
    EXPECT_NEAR(sched().alpha_bar(1000), 4.0e-5, 0.1e-5);
    long double direct = 1.0L;
    for (int t = 1; t <= 1000; ++t) direct *= 1.0L - (1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L);
    EXPECT_NEAR(sched().alpha_bar(1000), static_cast<double>(direct), 1e-15);
    for (int t = 1; t <= 1000; ++t) EXPECT_LT(sched().alpha_bar(t), sched().alpha_bar(t - 1));
}

TEST(Schedule, InvalidBoundsAreDomainErrors) {
    for (auto [b0, b1] : {std::pair{0.0, 0.02}, std::pair{0.03, 0.02}, std::pair{1e-4, 1.0}}) {
        try {
            pcdm::NoiseSchedule::linear(1000, b0, b1);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Domain);
        }
    }
    EXPECT_THROW(pcdm::NoiseSchedule::linear(0), Error);
    EXPECT_THROW(sched().alpha_bar(1001), Error);
}

TEST(Schedule, CompositionIdentitiesForAllPairs) {
    double worst = 0.0;
    for (int64_t ts = 0; ts <= 50; ++ts) {
        for (int64_t t = ts; t <= 1000; ++t) {
            const double a = sched().alpha_bar(t), as = sched().alpha_bar(ts), r = a / as;
            worst = std::max(worst, std::abs(std::sqrt(r) * std::sqrt(as) - std::sqrt(a)));
            worst = std::max(worst, std::abs(r * (1 - as) + (1 - r) - (1 - a)));
        }
    }
    EXPECT_LT(worst, 1e-10);
}

TEST(ForwardDiffuse, Cases) {
    auto x0 = uniform({2, 3, 4, 4}, 0, 1, 1);
    auto eps = gaussian({2, 3, 4, 4}, 2);
    EXPECT_TRUE(torch::equal(pcdm::forward_diffuse(x0, 0, eps, sched()), x0));
    EXPECT_LE(max_abs(pcdm::forward_diffuse(x0, 300, torch::zeros_like(x0), sched()),
                      std::sqrt(sched().alpha_bar(300)) * x0),
              1e-15);
    EXPECT_THROW(pcdm::forward_diffuse(x0, 1001, eps, sched()), Error);
    EXPECT_THROW(pcdm::forward_diffuse(x0, -1, eps, sched()), Error);
    try {
        pcdm::forward_diffuse(x0, 5, gaussian({2, 3, 4, 5}, 2), sched());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Dimension);
    }
}

TEST(ForwardDiffuse, PerItemTimesteps) {
    auto x0 = uniform({3, 1, 2, 2}, 0, 1, 3);
    auto eps = gaussian({3, 1, 2, 2}, 4);
    auto t = torch::tensor({0, 10, 999}, torch::kInt64);
    auto batched = pcdm::forward_diffuse(x0, t, eps, sched());
    for (int i = 0; i < 3; ++i)
        EXPECT_LE(max_abs(batched[i], pcdm::forward_diffuse(x0.slice(0, i, i + 1), t[i].item<int64_t>(),
                                                            eps.slice(0, i, i + 1), sched())[0]),
                  1e-15);
}

TEST(ForwardDiffuse, MonteCarloMoments) {
    const int64_t draws = 100000, t = 100;
    auto x0 = torch::tensor({0.9, 0.7, 0.5}, torch::kFloat64);
    auto samples = pcdm::forward_diffuse(x0.view({1, 3, 1, 1}).expand({draws, 3, 1, 1}).contiguous(), t,
                                         gaussian({draws, 3, 1, 1}, 7), sched())
                       .view({draws, 3});
    auto mean = samples.mean(0), var = samples.var(0);
    const double a = sched().alpha_bar(t);
    for (int i = 0; i < 3; ++i) {
        const double m = std::sqrt(a) * x0[i].item<double>();
        EXPECT_NEAR(mean[i].item<double>(), m, 0.01 * m);
        EXPECT_NEAR(var[i].item<double>(), 1 - a, 0.01 * (1 - a));
    }
}

TEST(Perturb, Cases) {
    auto x = uniform({2, 3, 4, 4}, 0, 1, 5);
    auto eps = gaussian({2, 3, 4, 4}, 6);
    EXPECT_TRUE(torch::equal(pcdm::perturb_from_state(x, 30, 30, eps, sched()), x));
    EXPECT_LE(max_abs(pcdm::perturb_from_state(x, 0, 400, eps, sched()), pcdm::forward_diffuse(x, 400, eps, sched())),
              1e-15);
    try {
        pcdm::perturb_from_state(x, 40, 39, eps, sched());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Domain);
    }
}

TEST(Perturb, CompositionMatchesDirectMarginal) {
    const int64_t draws = 100000, ts = 20, t = 150;
    auto x0 = torch::full({draws, 1, 1, 1}, 0.7, torch::kFloat64);
    auto xs = pcdm::forward_diffuse(x0, ts, gaussian({draws, 1, 1, 1}, 8), sched());
    auto composed = pcdm::perturb_from_state(xs, ts, t, gaussian({draws, 1, 1, 1}, 9), sched());
    const double a = sched().alpha_bar(t);
    EXPECT_NEAR(composed.mean().item<double>(), std::sqrt(a) * 0.7, 0.01 * std::sqrt(a) * 0.7);
    EXPECT_NEAR(composed.var().item<double>(), 1 - a, 0.01 * (1 - a));
}

TEST(EstimateX0, Inversion) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto x0 = uniform({1, 3, 8, 8}, 0, 1, seed);
        auto eps = gaussian({1, 3, 8, 8}, seed + 100);
        const int64_t t = static_cast<int64_t>(seed * 50);
        auto xt = pcdm::forward_diffuse(x0, t, eps, sched());
        EXPECT_LT(max_abs(pcdm::estimate_x0(xt, t, eps, sched()), x0), 1e-5);
    }
    auto xt = uniform({1, 3, 2, 2}, 0, 1, 3);
    EXPECT_TRUE(torch::equal(pcdm::estimate_x0(xt, 0, gaussian({1, 3, 2, 2}, 1), sched()), xt));
    EXPECT_LE(max_abs(pcdm::estimate_x0(xt, 77, torch::zeros_like(xt), sched()), xt / std::sqrt(sched().alpha_bar(77))),
              1e-14);
}

TEST(Losses, DiffusionLossStubs) {
    auto xt = gaussian({2, 3, 4, 4}, 1), y = uniform({2, 3, 4, 4}, 0, 1, 2), eps = gaussian({2, 3, 4, 4}, 3);
    auto t = torch::tensor({5, 9}, torch::kInt64);
    EXPECT_EQ(pcdm::diffusion_loss(constant_noise(eps), xt, t, y, eps).item<double>(), 0.0);
    auto rms = eps.square().mean({1, 2, 3}).sqrt().mean().item<double>();
    EXPECT_NEAR(pcdm::diffusion_loss(constant_noise(torch::zeros_like(eps)), xt, t, y, eps).item<double>(), rms,
                1e-14);
    try {
        pcdm::noise_residual_loss(eps, eps.slice(3, 0, 3));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Dimension);
    }
}

TEST(Losses, PdcZeroCases) {
    auto phi = nets::FeatureExtractor::identity();
    auto x0 = uniform({2, 3, 4, 4}, 0, 1, 4);
    auto eps = gaussian({2, 3, 4, 4}, 5);
    const int64_t ts = 30;
    auto xs = pcdm::forward_diffuse(x0, ts, eps, sched());
    auto back = xs / std::sqrt(sched().alpha_bar(ts));
    EXPECT_NEAR(pcdm::pdc_loss(phi, xs, back, ts, torch::zeros_like(xs), sched()).item<double>(), 0.0, 1e-12);
    EXPECT_NEAR(pcdm::pdc_loss(phi, xs, x0, ts, eps, sched()).item<double>(), 0.0, 1e-12);
    EXPECT_THROW(pcdm::pdc_loss(phi, xs, x0.slice(2, 0, 3), ts, eps, sched()), Error);
}

TEST(Losses, PdcGradientWrtEstimate) {
    auto phi = nets::FeatureExtractor::identity();
    auto xs = uniform({2, 3, 8, 8}, 0, 1, 6);
    auto eps = gaussian({2, 3, 8, 8}, 7);
    auto check = lumen::testing::check_gradient(
        [&](const torch::Tensor& x0) { return pcdm::pdc_loss(phi, xs, x0, 25, eps, sched()); },
        uniform({2, 3, 8, 8}, 0, 1, 8), 20, 9);
    EXPECT_LT(check.worst_relative, 1e-3);
}

TEST(Losses, GradientsThroughTinyNet) {
    torch::manual_seed(12);
    lumen::testing::TinyNoiseNet net;
    ASSERT_LE(lumen::testing::parameter_count(*net), 1000);
    auto fn = [&](const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& c) {
        return net->forward(a, b, c);
    };
    auto y = uniform({2, 3, 8, 8}, 0, 1, 1);
    auto eps = gaussian({2, 3, 8, 8}, 2), eps_star = gaussian({2, 3, 8, 8}, 3);
    auto ts = torch::tensor({10, 40}, torch::kInt64), t = torch::tensor({200, 700}, torch::kInt64);
    auto xt = pcdm::perturb_from_state(y, ts, t, eps, sched());
    auto phi = nets::FeatureExtractor::random_cnn();

    auto diff = lumen::testing::check_parameter_gradient(
        *net, [&] { return pcdm::diffusion_loss(fn, xt, t, y, eps); }, 20, 4);
    EXPECT_LT(diff.worst_relative, 1e-2);
    auto pdc = lumen::testing::check_parameter_gradient(
        *net,
        [&] {
            auto x0 = pcdm::estimate_x0(xt, t, fn(xt, t, y), sched());
            return pcdm::pdc_loss(phi, y, x0, ts, eps_star, sched());
        },
        20, 5);
    EXPECT_LT(pdc.worst_relative, 1e-2);
}

TEST(Sampler, Timesteps) {
    auto ts = pcdm::sampling_timesteps(50, 20);
    EXPECT_EQ(ts.front(), 50);
    EXPECT_EQ(ts.back(), 0);
    EXPECT_EQ(ts.size(), 21u);
    for (size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
    auto few = pcdm::sampling_timesteps(5, 20);
    EXPECT_EQ(few, (std::vector<int64_t>{5, 4, 3, 2, 1, 0}));
    EXPECT_EQ(pcdm::sampling_timesteps(0, 20), (std::vector<int64_t>{0}));
}

TEST(Sampler, ZeroTStarIsIdentity) {
    auto img = lumen::testing::random_image(3, 8, 8, 1);
    pcdm::PerturbConfig cfg{50, 0, 20};
    auto out = pcdm::restore(constant_noise(torch::ones({1, 3, 8, 8})), img, cfg, sched(), 0);
    EXPECT_TRUE(torch::equal(out.tensor(), img.tensor()));
}

TEST(Sampler, ExactNoiseOracleRecoversX0) {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto x0 = uniform({1, 3, 8, 8}, 0, 1, seed);
        auto xs = pcdm::forward_diffuse(x0, 50, gaussian({1, 3, 8, 8}, seed + 50), sched());
        auto out = pcdm::restore_tensor(exact_noise(x0, sched()), xs, xs, 50, 20, sched());
        EXPECT_LT(max_abs(out, x0), 1e-4);
    }
}

TEST(Sampler, MoreStepsNeverHurtWithExactNoise) {
    auto x0 = uniform({1, 3, 6, 6}, 0, 1, 21);
    auto xs = pcdm::forward_diffuse(x0, 50, gaussian({1, 3, 6, 6}, 22), sched());
    double prev = std::numeric_limits<double>::infinity();
    for (int64_t steps : {1, 2, 4, 8, 16, 32, 64}) {
        const double err = max_abs(pcdm::restore_tensor(exact_noise(x0, sched()), xs, xs, 50, steps, sched()), x0);
        EXPECT_LE(err, prev + 1e-12);
        prev = err;
    }
}

TEST(Sampler, DeterministicAndRangeChecked) {
    torch::manual_seed(3);
    nets::NoisePredictor net;
    auto fn = pcdm::as_noise_fn(net);
    auto img = lumen::testing::random_image(3, 12, 12, 4);
    pcdm::PerturbConfig cfg;
    auto a = pcdm::restore(fn, img, cfg, sched(), 1);
    auto b = pcdm::restore(fn, img, cfg, sched(), 1);
    EXPECT_TRUE(torch::equal(a.tensor(), b.tensor()));
    cfg.t_star_infer = 1001;
    try {
        pcdm::restore(fn, img, cfg, sched(), 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Domain);
    }
}
