#include "lumen/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "lumen/errors.hpp"

namespace lumen {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
}

int64_t to_int(const std::string& key, const std::string& v) {
    int64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec == std::errc() && ptr == v.data() + v.size()) return out;
    // Accept integral values written in scientific notation (1e5).
    const double d = to_double(key, v);
    require(d == static_cast<double>(static_cast<int64_t>(d)), ErrorKind::Config,
            key + ": expected an integer, got '" + v + "'");
    return static_cast<int64_t>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    fail(ErrorKind::Config, key + ": expected a boolean, got '" + v + "'");
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    const char* key;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define LUMEN_REAL(name)                                                                  \
    Field {                                                                               \
        #name, [](TrainConfig& c, const std::string& v) { c.name = to_double(#name, v); }, \
            [](const TrainConfig& c) { return fmt(c.name); }                              \
    }
#define LUMEN_INT(name)                                                                               \
    Field {                                                                                           \
        #name, [](TrainConfig& c, const std::string& v) { c.name = to_int(#name, v); },               \
            [](const TrainConfig& c) { return std::to_string(c.name); }                               \
    }
#define LUMEN_BOOL(name)                                                                 \
    Field {                                                                              \
        #name, [](TrainConfig& c, const std::string& v) { c.name = to_bool(#name, v); }, \
            [](const TrainConfig& c) { return std::string(c.name ? "true" : "false"); }  \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        LUMEN_REAL(lambda1),
        LUMEN_REAL(lambda2),
        LUMEN_REAL(lambda_g),
        LUMEN_REAL(target_E),
        LUMEN_INT(bins),
        LUMEN_REAL(lambda3),
        LUMEN_INT(batch_size),
        LUMEN_INT(patch_size),
        LUMEN_INT(stage1_iters),
        LUMEN_INT(stage2_iters),
        LUMEN_REAL(lr_stage1),
        LUMEN_REAL(lr_stage2),
        LUMEN_REAL(lr_decay),
        LUMEN_INT(lr_milestones),
        LUMEN_INT(total_steps),
        LUMEN_REAL(beta_start),
        LUMEN_REAL(beta_end),
        LUMEN_INT(t_star_max),
        LUMEN_INT(t_star_infer),
        LUMEN_INT(sample_steps),
        Field{"delta_lower",
              [](TrainConfig& c, const std::string& v) {
                  if (v == "tstar") c.delta_lower = DeltaLower::TStar;
                  else if (v == "zero") c.delta_lower = DeltaLower::Zero;
                  else fail(ErrorKind::Config, "delta_lower: expected tstar|zero, got '" + v + "'");
              },
              [](const TrainConfig& c) {
                  return std::string(c.delta_lower == DeltaLower::TStar ? "tstar" : "zero");
              }},
        Field{"stage2_mode",
              [](TrainConfig& c, const std::string& v) {
                  if (v == "combined") c.stage2_mode = Stage2Mode::Combined;
                  else if (v == "two_step") c.stage2_mode = Stage2Mode::TwoStep;
                  else fail(ErrorKind::Config, "stage2_mode: expected combined|two_step, got '" + v + "'");
              },
              [](const TrainConfig& c) {
                  return std::string(c.stage2_mode == Stage2Mode::Combined ? "combined" : "two_step");
              }},
        LUMEN_INT(agcm_width),
        LUMEN_BOOL(normalize_weights),
        LUMEN_INT(unet_base),
        LUMEN_INT(unet_inner),
        LUMEN_INT(time_dim),
        Field{"phi",
              [](TrainConfig& c, const std::string& v) { c.phi = nets::parse_feature_mode(v); },
              [](const TrainConfig& c) { return nets::to_string(c.phi); }},
        Field{"phi_weights", [](TrainConfig& c, const std::string& v) { c.phi_weights = v; },
              [](const TrainConfig& c) { return c.phi_weights; }},
        LUMEN_INT(phi_seed),
        LUMEN_BOOL(use_retinex),
        Field{"correction",
              [](TrainConfig& c, const std::string& v) {
                  if (v == "agcm") c.correction = CorrectionSource::Agcm;
                  else if (v == "gamma") c.correction = CorrectionSource::Gamma;
                  else fail(ErrorKind::Config, "correction: expected agcm|gamma, got '" + v + "'");
              },
              [](const TrainConfig& c) {
                  return std::string(c.correction == CorrectionSource::Agcm ? "agcm" : "gamma");
              }},
        LUMEN_REAL(gc_gamma),
        Field{"condition",
              [](TrainConfig& c, const std::string& v) {
                  if (v == "corrected") c.condition = ConditionSource::Corrected;
                  else if (v == "degraded") c.condition = ConditionSource::Degraded;
                  else fail(ErrorKind::Config, "condition: expected corrected|degraded, got '" + v + "'");
              },
              [](const TrainConfig& c) {
                  return std::string(c.condition == ConditionSource::Corrected ? "corrected"
                                                                               : "degraded");
              }},
        LUMEN_INT(rng_seed),
    };
    return table;
}

#undef LUMEN_REAL
#undef LUMEN_INT
#undef LUMEN_BOOL

}  // namespace

void TrainConfig::validate() const {
    auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::Config, msg); };
    check(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0, "lambda weights must be non-negative");
    check(lambda_g >= 0, "lambda_g must be non-negative");
    check(target_E > 0 && target_E < 1, "target_E must lie in (0,1)");
    check(bins >= 2, "bins must be at least 2");
    check(batch_size >= 1, "batch_size must be positive");
    check(patch_size >= 16 && patch_size % 2 == 0, "patch_size must be an even number >= 16");
    check(stage1_iters >= 0 && stage2_iters >= 0, "iteration counts must be non-negative");
    check(lr_stage1 > 0 && lr_stage2 > 0, "learning rates must be positive");
    check(lr_decay > 0 && lr_decay <= 1, "lr_decay must lie in (0,1]");
    check(lr_milestones >= 0, "lr_milestones must be non-negative");
    check(total_steps >= 1, "total_steps must be positive");
    check(beta_start > 0 && beta_start <= beta_end && beta_end < 1, "beta bounds invalid");
    check(t_star_max >= 0 && t_star_max <= total_steps, "t_star_max must lie in [0, T]");
    check(2 * t_star_max <= total_steps || delta_lower == DeltaLower::Zero,
          "t_star_max > T/2 leaves an empty delta range; use delta_lower=zero");
    check(t_star_infer >= 0 && t_star_infer <= total_steps, "t_star_infer must lie in [0, T]");
    check(sample_steps >= 1, "sample_steps must be positive");
    check(agcm_width >= 1 && unet_base >= 1 && unet_inner >= 1, "network widths must be positive");
    check(time_dim >= 2 && time_dim % 2 == 0, "time_dim must be even");
    check(phi != nets::FeatureMode::Pretrained || !phi_weights.empty(),
          "phi=pretrained needs phi_weights");
    check(gc_gamma > 0, "gc_gamma must be positive");
}

pcdm::NoiseSchedule TrainConfig::schedule() const {
    return pcdm::NoiseSchedule::linear(total_steps, beta_start, beta_end);
}

pcdm::PerturbConfig TrainConfig::perturb() const {
    return {t_star_max, t_star_infer, sample_steps};
}

nets::AgcmNetOptions TrainConfig::agcm_options() const {
    nets::AgcmNetOptions o;
    o.width = agcm_width;
    o.normalize_weights = normalize_weights;
    return o;
}

nets::UNetOptions TrainConfig::unet_options() const {
    nets::UNetOptions o;
    o.base_width = unet_base;
    o.inner_width = unet_inner;
    o.time_dim = time_dim;
    o.total_steps = total_steps;
    return o;
}

nets::FeatureExtractor TrainConfig::feature_extractor() const {
    switch (phi) {
        case nets::FeatureMode::Identity: return nets::FeatureExtractor::identity();
        case nets::FeatureMode::RandomCnn: return nets::FeatureExtractor::random_cnn(phi_seed);
        case nets::FeatureMode::Pretrained: return nets::FeatureExtractor::pretrained(phi_weights);
    }
    return nets::FeatureExtractor::identity();
}

void TrainConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (key == f.key) {
            f.set(*this, value);
            return;
        }
    }
    fail(ErrorKind::Config, "unknown config key '" + key + "'");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
    std::map<std::string, std::string> out;
    for (const auto& f : fields()) out[f.key] = f.get(*this);
    return out;
}

TrainConfig TrainConfig::desk_profile() { return {}; }

TrainConfig TrainConfig::full_profile() {
    TrainConfig c;
    c.patch_size = 256;
    c.stage1_iters = 100000;
    c.stage2_iters = 1000000;
    return c;
}

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::Config,
                "line " + std::to_string(lineno) + ": expected key=value");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key == "profile") {
            if (value == "full") cfg = TrainConfig::full_profile();
            else if (value == "desk") cfg = TrainConfig::desk_profile();
            else fail(ErrorKind::Config, "profile: expected full|desk, got '" + value + "'");
            continue;
        }
        cfg.set(key, value);
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Load, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::Io, "cannot write " + path.string());
    for (const auto& f : fields()) out << f.key << "=" << f.get(cfg) << "\n";
    require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace lumen
