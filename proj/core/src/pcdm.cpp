#include "lumen/pcdm.hpp"

#include <cmath>

#include "lumen/agcm.hpp"
#include "lumen/errors.hpp"

namespace lumen::pcdm {

NoiseSchedule NoiseSchedule::linear(int64_t total_steps, double beta_start, double beta_end) {
    require(total_steps >= 1, ErrorKind::Domain, "schedule needs at least one step");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, ErrorKind::Domain,
            "beta bounds must satisfy 0 < start <= end < 1");
    NoiseSchedule s;
    s.betas_.resize(static_cast<size_t>(total_steps));
    s.alpha_bars_.resize(static_cast<size_t>(total_steps) + 1);
    s.alpha_bars_[0] = 1.0;
    long double prod = 1.0L;
    for (int64_t i = 0; i < total_steps; ++i) {
        const double frac = total_steps == 1 ? 0.0 : static_cast<double>(i) / (total_steps - 1);
        s.betas_[i] = beta_start + (beta_end - beta_start) * frac;
        prod *= 1.0L - static_cast<long double>(s.betas_[i]);
        s.alpha_bars_[i + 1] = static_cast<double>(prod);
    }
    return s;
}

void NoiseSchedule::check_timestep(int64_t t) const {
    require(t >= 0 && t <= total_steps(), ErrorKind::Domain,
            "timestep " + std::to_string(t) + " outside [0, " + std::to_string(total_steps()) + "]");
}

double NoiseSchedule::beta(int64_t t) const {
    require(t >= 1 && t <= total_steps(), ErrorKind::Domain, "beta index outside [1, T]");
    return betas_[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int64_t t) const {
    check_timestep(t);
    return alpha_bars_[static_cast<size_t>(t)];
}

torch::Tensor NoiseSchedule::alpha_bar(const torch::Tensor& t, torch::Dtype dtype) const {
    auto steps = t.to(torch::kInt64);
    if (steps.numel() > 0) {
        check_timestep(steps.min().item<int64_t>());
        check_timestep(steps.max().item<int64_t>());
    }
    auto table = torch::tensor(alpha_bars_, torch::kFloat64);
    return table.index_select(0, steps.reshape({-1})).reshape(steps.sizes()).to(dtype);
}

void PerturbConfig::validate(int64_t total_steps) const {
    require(t_star_infer >= 0 && t_star_infer <= total_steps, ErrorKind::Domain,
            "t* for inference must lie in [0, T]");
    require(t_star_max >= 0 && t_star_max <= total_steps, ErrorKind::Config,
            "t*_max must lie in [0, T]");
    require(sample_steps >= 1, ErrorKind::Config, "sample steps must be at least 1");
}

NoiseFn as_noise_fn(nets::NoisePredictor net) {
    return [net](const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& y) mutable {
        return net->forward(x_t, t, y);
    };
}

namespace {

// [N] per-item coefficient → [N,1,1,...] broadcastable against x.
torch::Tensor per_item(const torch::Tensor& coef, const torch::Tensor& x) {
    std::vector<int64_t> shape(static_cast<size_t>(x.dim()), 1);
    shape[0] = x.size(0);
    return coef.reshape(shape);
}

torch::Tensor item_steps(const torch::Tensor& t, const torch::Tensor& x) {
    auto steps = t.to(torch::kInt64).reshape({-1});
    if (steps.numel() == 1 && x.size(0) != 1) steps = steps.expand({x.size(0)});
    require(steps.numel() == x.size(0), ErrorKind::Dimension, "one timestep per batch item");
    return steps;
}

void same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    require(a.sizes() == b.sizes(), ErrorKind::Dimension, std::string(what) + ": shape mismatch");
}

}  // namespace

torch::Tensor forward_diffuse(const torch::Tensor& x0, int64_t t, const torch::Tensor& eps,
                              const NoiseSchedule& sched) {
    same_shape(x0, eps, "forward_diffuse");
    const double ab = sched.alpha_bar(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor forward_diffuse(const torch::Tensor& x0, const torch::Tensor& t,
                              const torch::Tensor& eps, const NoiseSchedule& sched) {
    same_shape(x0, eps, "forward_diffuse");
    auto ab = per_item(sched.alpha_bar(item_steps(t, x0), torch::kFloat64), x0);
    return ab.sqrt().to(x0.dtype()) * x0 + (1.0 - ab).sqrt().to(x0.dtype()) * eps;
}

torch::Tensor perturb_from_state(const torch::Tensor& x_tstar, int64_t t_star, int64_t t,
                                 const torch::Tensor& eps, const NoiseSchedule& sched) {
    same_shape(x_tstar, eps, "perturb_from_state");
    require(t >= t_star, ErrorKind::Domain, "perturbation target t must not precede t*");
    const double ratio = sched.alpha_bar(t) / sched.alpha_bar(t_star);
    return std::sqrt(ratio) * x_tstar + std::sqrt(1.0 - ratio) * eps;
}

torch::Tensor perturb_from_state(const torch::Tensor& x_tstar, const torch::Tensor& t_star,
                                 const torch::Tensor& t, const torch::Tensor& eps,
                                 const NoiseSchedule& sched) {
    same_shape(x_tstar, eps, "perturb_from_state");
    auto ts = item_steps(t_star, x_tstar);
    auto tt = item_steps(t, x_tstar);
    require((tt >= ts).all().item<bool>(), ErrorKind::Domain,
            "perturbation target t must not precede t*");
    auto ratio = per_item(sched.alpha_bar(tt, torch::kFloat64) / sched.alpha_bar(ts, torch::kFloat64),
                          x_tstar);
    return ratio.sqrt().to(x_tstar.dtype()) * x_tstar +
           (1.0 - ratio).sqrt().to(x_tstar.dtype()) * eps;
}

torch::Tensor estimate_x0(const torch::Tensor& x_t, int64_t t, const torch::Tensor& eps_pred,
                          const NoiseSchedule& sched) {
    same_shape(x_t, eps_pred, "estimate_x0");
    const double ab = sched.alpha_bar(t);
    if (t == 0) return x_t;
    return (x_t - std::sqrt(1.0 - ab) * eps_pred) / std::sqrt(ab);
}

torch::Tensor estimate_x0(const torch::Tensor& x_t, const torch::Tensor& t,
                          const torch::Tensor& eps_pred, const NoiseSchedule& sched) {
    same_shape(x_t, eps_pred, "estimate_x0");
    auto ab = per_item(sched.alpha_bar(item_steps(t, x_t), torch::kFloat64), x_t);
    return (x_t - (1.0 - ab).sqrt().to(x_t.dtype()) * eps_pred) / ab.sqrt().to(x_t.dtype());
}

torch::Tensor rms_per_item(const torch::Tensor& diff) {
    return agcm::safe_sqrt(diff.reshape({diff.size(0), -1}).square().mean(1));
}

torch::Tensor noise_residual_loss(const torch::Tensor& eps_true, const torch::Tensor& eps_pred) {
    same_shape(eps_true, eps_pred, "diffusion_loss");
    return rms_per_item(eps_true - eps_pred).mean();
}

torch::Tensor diffusion_loss(const NoiseFn& net, const torch::Tensor& x_t, const torch::Tensor& t,
                             const torch::Tensor& y, const torch::Tensor& eps_true) {
    same_shape(x_t, y, "diffusion_loss");
    same_shape(x_t, eps_true, "diffusion_loss");
    return noise_residual_loss(eps_true, net(x_t, item_steps(t, x_t), y));
}

torch::Tensor pdc_loss(const nets::FeatureExtractor& phi, const torch::Tensor& x_tstar,
                       const torch::Tensor& x0_hat, const torch::Tensor& t_star,
                       const torch::Tensor& eps_new, const NoiseSchedule& sched) {
    same_shape(x_tstar, x0_hat, "pdc_loss");
    same_shape(x_tstar, eps_new, "pdc_loss");
    auto renoised = forward_diffuse(x0_hat, t_star, eps_new, sched);
    return rms_per_item(phi.extract(x_tstar) - phi.extract(renoised)).mean();
}

torch::Tensor pdc_loss(const nets::FeatureExtractor& phi, const torch::Tensor& x_tstar,
                       const torch::Tensor& x0_hat, int64_t t_star, const torch::Tensor& eps_new,
                       const NoiseSchedule& sched) {
    sched.check_timestep(t_star);
    return pdc_loss(phi, x_tstar, x0_hat, torch::full({x_tstar.size(0)}, t_star, torch::kInt64),
                    eps_new, sched);
}

std::vector<int64_t> sampling_timesteps(int64_t t_star, int64_t steps) {
    require(t_star >= 0 && steps >= 1, ErrorKind::Domain, "invalid sampling range");
    std::vector<int64_t> ts;
    for (int64_t i = steps; i >= 0; --i) {
        const int64_t t = (i * t_star + steps / 2) / steps;
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;
}

torch::Tensor restore_tensor(const NoiseFn& net, const torch::Tensor& start,
                             const torch::Tensor& condition, int64_t t_star, int64_t steps,
                             const NoiseSchedule& sched) {
    same_shape(start, condition, "restore");
    sched.check_timestep(t_star);
    torch::NoGradGuard guard;
    const auto ts = sampling_timesteps(t_star, steps);
    auto x = start;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        const int64_t t = ts[i], t_prev = ts[i + 1];
        auto eps = net(x, torch::full({x.size(0)}, t, torch::kInt64), condition);
        auto x0 = estimate_x0(x, t, eps, sched);
        const double ab_prev = sched.alpha_bar(t_prev);
        x = t_prev == 0 ? x0 : std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
    }
    return x;
}

Image restore(const NoiseFn& net, const Image& corrected, const Image& condition,
              const PerturbConfig& cfg, const NoiseSchedule& sched, uint64_t /*rng_seed*/) {
    cfg.validate(sched.total_steps());
    require(corrected.channels() == 3 && condition.channels() == 3, ErrorKind::Dimension,
            "restore expects colour images");
    auto out = restore_tensor(net, corrected.batched(), condition.batched(), cfg.t_star_infer,
                              cfg.sample_steps, sched);
    return Image::clamped(out[0]);
}

Image restore(const NoiseFn& net, const Image& corrected, const PerturbConfig& cfg,
              const NoiseSchedule& sched, uint64_t rng_seed) {
    return restore(net, corrected, corrected, cfg, sched, rng_seed);
}

}  // namespace lumen::pcdm
