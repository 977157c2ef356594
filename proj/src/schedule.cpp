#include "vmedit/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "vmedit/ops.hpp"

namespace vmedit {

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T) throw ContractError("timestep " + std::to_string(t) + " outside 0.." + std::to_string(T));
    return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<std::size_t>(T));
    s.alphas.resize(static_cast<std::size_t>(T));
    s.alpha_bars.resize(static_cast<std::size_t>(T));
    double run = 1.0;
    for (int i = 0; i < T; ++i) {
        double b = (T == 1) ? beta_start
                            : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (T - 1);
        s.betas[i] = b;
        s.alphas[i] = 1.0 - b;
        run *= s.alphas[i];
        s.alpha_bars[i] = run;
    }
    return s;
}

DdimStepPlan DdimStepPlan::uniform(const NoiseSchedule& s, int num_steps) {
    if (num_steps < 1 || num_steps > s.T) throw ConfigError("ddim plan: invalid step count");
    DdimStepPlan p;
    // Evenly spaced in 1..T, deduplicated, descending.
    for (int j = num_steps; j >= 1; --j) {
        int t = static_cast<int>(std::llround(static_cast<double>(j) * s.T / num_steps));
        if (t < 1) t = 1;
        if (p.timesteps.empty() || t < p.timesteps.back()) p.timesteps.push_back(t);
    }
    p.num_inference_steps = static_cast<int>(p.timesteps.size());
    return p;
}

namespace {

Tensor affine_combine(const Tensor& a, double ca, const Tensor& b, double cb) {
    return add(scale(a, static_cast<float>(ca)), scale(b, static_cast<float>(cb)));
}

void check_shapes(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& s) {
    check_shapes(z0, eps, "add_noise");
    double ab = s.alpha_bar(t);  // range-checks t
    return affine_combine(z0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

Tensor ddim_sample_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                        const NoiseSchedule& s) {
    check_shapes(z_t, eps_pred, "ddim_sample_step");
    if (!(t > t_prev && t_prev >= 0)) throw ContractError("ddim_sample_step: need t > t_prev >= 0");
    double ab_t = s.alpha_bar(t), ab_p = s.alpha_bar(t_prev);
    // z0_hat = (z_t - sqrt(1-ab_t) eps) / sqrt(ab_t)
    double c_z = std::sqrt(ab_p / ab_t);
    double c_e = std::sqrt(1.0 - ab_p) - std::sqrt(ab_p) * std::sqrt(1.0 - ab_t) / std::sqrt(ab_t);
    return affine_combine(z_t, c_z, eps_pred, c_e);
}

Tensor ddim_invert_step(const Tensor& z_prev, const Tensor& eps_pred, int t_prev, int t,
                        const NoiseSchedule& s) {
    check_shapes(z_prev, eps_pred, "ddim_invert_step");
    if (!(t > t_prev && t_prev >= 0)) throw ContractError("ddim_invert_step: need t > t_prev >= 0");
    double ab_t = s.alpha_bar(t), ab_p = s.alpha_bar(t_prev);
    double c_z = std::sqrt(ab_t / ab_p);
    double c_e = std::sqrt(1.0 - ab_t) - std::sqrt(ab_t) * std::sqrt(1.0 - ab_p) / std::sqrt(ab_p);
    return affine_combine(z_prev, c_z, eps_pred, c_e);
}

namespace {

Tensor eval_model(const EpsFn& model, const Tensor& z, int t) {
    Tensor eps = model(z, t);
    if (eps.shape() != z.shape())
        throw ShapeError("model output shape " + shape_str(eps.shape()) + " does not match latent " + shape_str(z.shape()));
    return eps;
}

}  // namespace

Tensor invert_loop(const Tensor& z0, const EpsFn& model, const DdimStepPlan& plan,
                   const NoiseSchedule& s) {
    Tensor z = z0;
    int t_prev = 0;
    for (auto it = plan.timesteps.rbegin(); it != plan.timesteps.rend(); ++it) {
        int t = *it;
        z = ddim_invert_step(z, eval_model(model, z, t), t_prev, t, s);
        t_prev = t;
    }
    return z;
}

Tensor sample_loop(const Tensor& z_star, const EpsFn& model, const DdimStepPlan& plan,
                   const NoiseSchedule& s) {
    Tensor z = z_star;
    for (std::size_t i = 0; i < plan.timesteps.size(); ++i) {
        int t = plan.timesteps[i];
        int t_prev = (i + 1 < plan.timesteps.size()) ? plan.timesteps[i + 1] : 0;
        z = ddim_sample_step(z, eval_model(model, z, t), t, t_prev, s);
    }
    return z;
}

Tensor denoise_loss(const EpsFn& model, const Tensor& z0_latent, const NoiseSchedule& s,
                    CounterRng& rng) {
    int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.T)));
    std::vector<float> noise(static_cast<std::size_t>(z0_latent.numel()));
    for (auto& v : noise) v = rng.normal_f();
    Tensor eps = Tensor::from_data(z0_latent.shape(), std::move(noise));
    Tensor z_t = add_noise(z0_latent, eps, t, s);
    return mse_loss(eval_model(model, z_t, t), eps);
}

std::string dump_schedule(const NoiseSchedule& s) {
    std::string out = "t beta alpha_bar\n";
    char line[96];
    for (int t = 1; t <= s.T; ++t) {
        std::snprintf(line, sizeof line, "%d %.12e %.12e\n", t, s.betas[t - 1], s.alpha_bars[t - 1]);
        out += line;
    }
    return out;
}

}  // namespace vmedit
