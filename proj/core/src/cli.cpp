#include "lumen/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "lumen/config.hpp"
#include "lumen/datagen.hpp"
#include "lumen/errors.hpp"
#include "lumen/histogram.hpp"
#include "lumen/image.hpp"
#include "lumen/metrics.hpp"
#include "lumen/training.hpp"

namespace lumen::cli {

namespace fs = std::filesystem;

namespace {

datagen::Interval parse_interval(const std::string& key, const std::string& text) {
    datagen::Interval iv;
    try {
        const auto comma = text.find(',');
        iv.lo = std::stod(text.substr(0, comma));
        iv.hi = comma == std::string::npos ? iv.lo : std::stod(text.substr(comma + 1));
    } catch (const std::exception&) {
        fail(ErrorKind::Config, key + ": expected 'lo,hi' or a single value, got '" + text + "'");
    }
    return iv;
}

struct DegradeArgs {
    std::string clean, out, references, spec_file, mode, gamma_under, gamma_over, sigma;
    int64_t seed = -1;
    int64_t n = -1;
};

// Spec file keys: mode, gamma_under, gamma_over, sigma, seed, n.
void apply_degrade_spec_file(const fs::path& path, datagen::DegradeSpec& spec, int64_t& n) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Load, "cannot open degradation spec " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto key = line.substr(0, eq), value = line.substr(eq + 1);
        auto strip = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
        };
        strip(key);
        strip(value);
        if (key == "mode") spec.mode = datagen::parse_degrade_mode(value);
        else if (key == "gamma_under") spec.gamma_under = parse_interval(key, value);
        else if (key == "gamma_over") spec.gamma_over = parse_interval(key, value);
        else if (key == "sigma") spec.noise_sigma = parse_interval(key, value);
        else if (key == "seed") spec.rng_seed = std::stoull(value);
        else if (key == "n") n = std::stoll(value);
        else fail(ErrorKind::Config, "unknown degradation key '" + key + "'");
    }
}

int cmd_degrade(const DegradeArgs& a) {
    datagen::DegradeSpec spec;
    int64_t n = -1;
    if (!a.spec_file.empty()) apply_degrade_spec_file(a.spec_file, spec, n);
    if (!a.mode.empty()) spec.mode = datagen::parse_degrade_mode(a.mode);
    if (!a.gamma_under.empty()) spec.gamma_under = parse_interval("gamma-under", a.gamma_under);
    if (!a.gamma_over.empty()) spec.gamma_over = parse_interval("gamma-over", a.gamma_over);
    if (!a.sigma.empty()) spec.noise_sigma = parse_interval("sigma", a.sigma);
    if (a.seed >= 0) spec.rng_seed = static_cast<uint64_t>(a.seed);
    if (a.n >= 0) n = a.n;
    if (n < 0) n = static_cast<int64_t>(list_images(a.clean).size());
    const auto manifest = datagen::make_corpus(a.clean, a.out, spec, n);
    if (!a.references.empty()) datagen::write_references(manifest, a.references);
    std::cout << "wrote " << manifest.entries.size() << " degraded images to " << a.out << "\n";
    return 0;
}

struct RestoreArgs {
    std::string input, checkpoint, out;
    int64_t tstar = -1;
    int64_t steps = -1;
    uint64_t seed = 0;
    bool stage1_only = false;
};

int cmd_restore(const RestoreArgs& a) {
    auto pipeline = training::Pipeline::load(a.checkpoint);
    auto perturb = pipeline.cfg.perturb();
    if (a.tstar >= 0) perturb.t_star_infer = a.tstar;
    if (a.steps >= 0) perturb.sample_steps = a.steps;
    perturb.validate(pipeline.cfg.total_steps);

    auto process = [&](const fs::path& in, const fs::path& out) {
        const auto degraded = load_image(in);
        save_image(a.stage1_only ? pipeline.correct(degraded)
                                 : pipeline.restore(degraded, perturb, a.seed),
                   out);
    };
    if (fs::is_directory(a.input)) {
        fs::create_directories(a.out);
        const auto files = list_images(a.input);
        require(!files.empty(), ErrorKind::Corpus, "no images in " + a.input);
        for (const auto& f : files) process(f, fs::path(a.out) / f.filename());
        std::cout << "restored " << files.size() << " images into " << a.out << "\n";
    } else {
        process(a.input, a.out);
    }
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Zero-reference illumination restoration: adaptive gamma correction followed by "
                 "perturbed-consistency diffusion"};
    app.name("lumen");
    app.require_subcommand(1);

    // build-prior
    std::string prior_corpus, prior_out;
    int prior_bins = hist::kDefaultBins;
    auto* build = app.add_subcommand("build-prior", "Average illumination histograms of a well-lit corpus");
    build->add_option("--corpus", prior_corpus, "Directory of well-lit images")->required();
    build->add_option("--bins", prior_bins, "Histogram bins")->check(CLI::Range(2, 65536));
    build->add_option("--out", prior_out, "Prior file to write")->required();

    // degrade
    DegradeArgs deg;
    auto* degrade = app.add_subcommand("degrade", "Synthesize an illumination-degraded corpus");
    degrade->add_option("--clean", deg.clean, "Directory of clean images")->required();
    degrade->add_option("--out", deg.out, "Output directory")->required();
    degrade->add_option("--references", deg.references, "Also write the clean source of each item under its output name");
    degrade->add_option("--spec", deg.spec_file, "key=value degradation spec file");
    degrade->add_option("--mode", deg.mode, "under | over | mixed");
    degrade->add_option("--gamma-under", deg.gamma_under, "Darkening gamma range lo,hi");
    degrade->add_option("--gamma-over", deg.gamma_over, "Brightening gamma range lo,hi");
    degrade->add_option("--sigma", deg.sigma, "Noise std range lo,hi");
    degrade->add_option("--seed", deg.seed, "Base seed");
    degrade->add_option("--n", deg.n, "Number of images (default: one per source)");

    // synth
    std::string synth_out;
    int64_t synth_n = 16, synth_h = 128, synth_w = 128;
    uint64_t synth_seed = 0;
    auto* synth = app.add_subcommand("synth", "Generate procedural well-lit scenes");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--n", synth_n, "Number of scenes");
    synth->add_option("--height", synth_h, "Scene height");
    synth->add_option("--width", synth_w, "Scene width");
    synth->add_option("--seed", synth_seed, "Base seed");

    // train
    std::string train_corpus, train_prior, train_config, train_out;
    std::vector<std::string> overrides;
    bool quiet = false;
    auto* train = app.add_subcommand("train", "Two-stage training on degraded images only");
    train->add_option("--corpus", train_corpus, "Directory of degraded images")->required();
    train->add_option("--prior", train_prior, "Histogram prior file")->required();
    train->add_option("--config", train_config, "key=value config file");
    train->add_option("--set", overrides, "Config override key=value (repeatable)");
    train->add_option("--out", train_out, "Output directory for checkpoints and loss log")->required();
    train->add_flag("--quiet", quiet, "No progress output");

    // restore
    RestoreArgs rest;
    auto* restore = app.add_subcommand("restore", "Restore an image (or a directory of images)");
    restore->add_option("--input", rest.input, "Degraded image or directory")->required();
    restore->add_option("--checkpoint", rest.checkpoint, "Training output directory")->required();
    restore->add_option("--tstar", rest.tstar, "Intermediate diffusion step t*");
    restore->add_option("--steps", rest.steps, "Sampling steps");
    restore->add_option("--seed", rest.seed, "Sampler seed");
    restore->add_option("--out", rest.out, "Output image or directory")->required();
    restore->add_flag("--stage1-only", rest.stage1_only, "Emit the illumination-corrected image only");

    // evaluate
    std::string eval_restored, eval_reference, eval_prior, eval_out;
    auto* evaluate = app.add_subcommand("evaluate", "PSNR / SSIM / histogram KL report");
    evaluate->add_option("--restored", eval_restored, "Directory of restored images")->required();
    evaluate->add_option("--reference", eval_reference, "Directory of reference images")->required();
    evaluate->add_option("--prior", eval_prior, "Histogram prior file")->required();
    evaluate->add_option("--out", eval_out, "Report CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*build) {
            const auto result = hist::build_prior(prior_corpus, prior_bins);
            hist::save_prior(result.prior, prior_out);
            std::cout << "prior from " << result.prior.corpus_size << " images ("
                      << result.skipped.size() << " skipped) -> " << prior_out << "\n";
        } else if (*degrade) {
            return cmd_degrade(deg);
        } else if (*synth) {
            datagen::make_synthetic_corpus(synth_out, synth_n, synth_h, synth_w, synth_seed);
            std::cout << "wrote " << synth_n << " scenes to " << synth_out << "\n";
        } else if (*train) {
            auto cfg = train_config.empty() ? TrainConfig{} : load_config(train_config);
            for (const auto& kv : overrides) {
                const auto eq = kv.find('=');
                require(eq != std::string::npos, ErrorKind::Config, "--set expects key=value");
                cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
            }
            cfg.validate();
            const auto prior = hist::load_prior(train_prior);
            const int64_t total = cfg.stage1_iters + cfg.stage2_iters;
            training::run_training(train_corpus, prior, cfg, train_out,
                                   [&](const training::LossBreakdown& row) {
                                       if (quiet || (row.iter % 100 != 0 && row.iter != total)) return;
                                       std::cerr << "[" << row.iter << "/" << total << "] stage "
                                                 << row.stage << " loss " << row.total << "\n";
                                   });
        } else if (*restore) {
            return cmd_restore(rest);
        } else if (*evaluate) {
            const auto prior = hist::load_prior(eval_prior);
            const auto report = metrics::evaluate(eval_restored, eval_reference, prior);
            metrics::write_report(report, eval_out);
            std::cout << "mean psnr " << report.mean.psnr << " ssim " << report.mean.ssim
                      << " hist_kl " << report.mean.hist_kl << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "lumen: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("lumen");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace lumen::cli
