#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "lumen/datagen.hpp"
#include "lumen/errors.hpp"
#include "lumen/retinex.hpp"
#include "lumen_test_support.hpp"

using namespace lumen;
using lumen::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

datagen::DegradeParams fixed(double gamma, double sigma, uint64_t seed = 0) {
    datagen::DegradeParams p;
    p.gamma_under = gamma;
    p.sigma = sigma;
    p.seed = seed;
    return p;
}

void write_sources(const std::filesystem::path& dir, int n) {
    for (int i = 0; i < n; ++i)
        save_image(datagen::synthesize_scene(24, 24, static_cast<uint64_t>(i)),
                   dir / ("src_" + std::to_string(i) + ".png"));
}

}  // namespace

TEST(Datagen, IdentityParameters) {
    auto img = lumen::testing::random_image(3, 10, 10, 1);
    EXPECT_LE(lumen::testing::max_abs(datagen::degrade_with(img, fixed(1.0, 0.0)).tensor(), img.tensor()), 1e-6);
}

TEST(Datagen, GrayPowerArithmetic) {
    auto out = datagen::degrade_with(Image::filled(3, 4, 4, 0.5f), fixed(2.0, 0.0));
    EXPECT_LE(lumen::testing::max_abs(out.tensor(), torch::full({3, 4, 4}, 0.25)), 1e-6);
}

TEST(Datagen, NoiseStandardDeviation) {
    auto clean = Image::filled(3, 128, 128, 0.5f);
    auto noiseless = datagen::degrade_with(clean, fixed(1.0, 0.0));
    auto noisy = datagen::degrade_with(clean, fixed(1.0, 0.05, 77));
    const double sd = (noisy.tensor() - noiseless.tensor()).std().item<double>();
    EXPECT_NEAR(sd, 0.05, 0.05 * 0.05);
}

TEST(Datagen, UnderExposureNeverBrightens) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto img = lumen::testing::random_image(3, 16, 16, seed);
        datagen::DegradeSpec spec;
        spec.noise_sigma = {0.0, 0.0};
        spec.rng_seed = seed;
        auto [out, params] = datagen::degrade(img, spec);
        EXPECT_TRUE(spec.gamma_under.contains(params.gamma_under));
        auto before = retinex::decompose(img).illumination.tensor();
        auto after = retinex::decompose(out).illumination.tensor();
        EXPECT_TRUE((after <= before + 1e-6).all().item<bool>());
    }
}

TEST(Datagen, OverAndMixedModes) {
    auto img = Image::filled(3, 8, 8, 0.25f);
    datagen::DegradeParams over = fixed(1.0, 0.0);
    over.mode = datagen::DegradeMode::Over;
    over.gamma_over = 0.5;
    EXPECT_NEAR(datagen::degrade_with(img, over).tensor().mean().item<float>(), 0.5f, 1e-6);

    datagen::DegradeParams mixed = fixed(2.0, 0.0);
    mixed.mode = datagen::DegradeMode::Mixed;
    mixed.gamma_over = 0.5;
    auto out = datagen::degrade_with(img, mixed);
    EXPECT_NEAR(out.at(3, 0), 0.0625f, 1e-6);
    EXPECT_NEAR(out.at(3, 7), 0.5f, 1e-6);
    EXPECT_NE(mixed.gamma_field().find(':'), std::string::npos);
}

TEST(Datagen, SpecValidation) {
    datagen::DegradeSpec spec;
    spec.noise_sigma = {-0.1, 0.0};
    EXPECT_THROW(spec.validate(), Error);
    spec = {};
    spec.gamma_under = {0.0, 2.0};
    EXPECT_THROW(spec.validate(), Error);
    EXPECT_THROW(datagen::parse_degrade_mode("sideways"), Error);
}

TEST(Datagen, CorpusIsDeterministicAndManifestConsistent) {
    TempDir src("dg_src"), a("dg_a"), b("dg_b");
    write_sources(src.path(), 3);
    datagen::DegradeSpec spec;
    spec.rng_seed = 5;
    auto ma = datagen::make_corpus(src.path(), a.path(), spec, 5);
    datagen::make_corpus(src.path(), b.path(), spec, 5);
    ASSERT_EQ(ma.entries.size(), 5u);
    for (int i = 0; i < 5; ++i) {
        const auto name = datagen::corpus_name(i);
        EXPECT_EQ(slurp(a / name), slurp(b / name));
        EXPECT_TRUE(spec.gamma_under.contains(ma.entries[i].params.gamma_under));
        EXPECT_TRUE(spec.noise_sigma.contains(ma.entries[i].params.sigma));
        EXPECT_EQ(ma.entries[i].params.seed, 5u + i);
    }
    EXPECT_EQ(slurp(a / datagen::kManifestName), slurp(b / datagen::kManifestName));

    std::ifstream manifest(a / datagen::kManifestName);
    std::string line;
    int lines = 0;
    while (std::getline(manifest, line)) {
        std::istringstream fields(line);
        std::string source, gamma, sigma, seed;
        ASSERT_TRUE(std::getline(fields, source, '\t') && std::getline(fields, gamma, '\t') &&
                    std::getline(fields, sigma, '\t') && std::getline(fields, seed));
        EXPECT_TRUE(spec.gamma_under.contains(std::stod(gamma)));
        ++lines;
    }
    EXPECT_EQ(lines, 5);
}

TEST(Datagen, ManifestReproducesPairs) {
    TempDir src("dg_pair_src"), out("dg_pair_out"), refs("dg_pair_ref");
    write_sources(src.path(), 2);
    datagen::DegradeSpec spec;
    spec.rng_seed = 9;
    auto manifest = datagen::make_corpus(src.path(), out.path(), spec, 3);
    datagen::write_references(manifest, refs.path());
    for (const auto& e : manifest.entries) {
        auto rebuilt = datagen::degrade_with(load_image(refs / e.output_name), e.params);
        auto stored = load_image(out / e.output_name);
        EXPECT_LE(lumen::testing::max_abs(rebuilt.tensor(), stored.tensor()), 0.5 / 255 + 1e-6);
    }
}

TEST(Datagen, EmptyRequestAndEmptySource) {
    TempDir src("dg_empty_src"), out("dg_empty_out");
    write_sources(src.path(), 1);
    auto m = datagen::make_corpus(src.path(), out.path(), {}, 0);
    EXPECT_TRUE(m.entries.empty());
    EXPECT_TRUE(list_images(out.path()).empty());

    TempDir none("dg_none");
    try {
        datagen::make_corpus(none.path(), out.path(), {}, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Corpus);
    }
}

TEST(Datagen, SyntheticScenesAreWellLitAndDeterministic) {
    auto a = datagen::synthesize_scene(64, 64, 3), b = datagen::synthesize_scene(64, 64, 3);
    EXPECT_TRUE(torch::equal(a.tensor(), b.tensor()));
    EXPECT_FALSE(torch::equal(a.tensor(), datagen::synthesize_scene(64, 64, 4).tensor()));
    const double mean_illum = retinex::decompose(a).illumination.tensor().mean().item<double>();
    EXPECT_GT(mean_illum, 0.4);
    EXPECT_LT(mean_illum, 0.9);
}
