#pragma once

#include <functional>
#include <vector>

#include "vmedit/rng.hpp"
#include "vmedit/tensor.hpp"

namespace vmedit {

// Variance schedule tables. Timesteps run 1..T; alpha_bar(0) == 1 by
// convention. Tables are double precision and bit-reproducible from
// (T, beta_start, beta_end).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // beta_t, index t-1
    std::vector<double> alphas;      // 1 - beta_t
    std::vector<double> alpha_bars;  // running left-to-right product

    double alpha_bar(int t) const;  // valid for 0..T
};

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

// Strictly decreasing timestep subsequence for deterministic DDIM
// sampling; inversion walks the exact reverse.
struct DdimStepPlan {
    int num_inference_steps = 0;
    std::vector<int> timesteps;  // descending, largest first

    static DdimStepPlan uniform(const NoiseSchedule& s, int num_steps);
};

// z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps; caller supplies eps.
Tensor add_noise(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& s);

// Deterministic DDIM update t -> t_prev (eta = 0).
Tensor ddim_sample_step(const Tensor& z_t, const Tensor& eps_pred, int t, int t_prev,
                        const NoiseSchedule& s);

// Exact algebraic inverse of ddim_sample_step, t_prev -> t.
Tensor ddim_invert_step(const Tensor& z_prev, const Tensor& eps_pred, int t_prev, int t,
                        const NoiseSchedule& s);

// eps predictor given (latent, timestep); conditioning is baked into the closure.
using EpsFn = std::function<Tensor(const Tensor&, int)>;

// Walks the plan's ascending timesteps from z0 to the terminal noise latent.
Tensor invert_loop(const Tensor& z0, const EpsFn& model, const DdimStepPlan& plan,
                   const NoiseSchedule& s);

// Walks the plan's descending timesteps from a noise latent back to z0.
Tensor sample_loop(const Tensor& z_star, const EpsFn& model, const DdimStepPlan& plan,
                   const NoiseSchedule& s);

// One denoising training objective draw: t ~ U{1..T}, eps ~ N(0,1),
// returns mean ||eps - model(z_t, t)||^2 with the tape attached.
Tensor denoise_loss(const EpsFn& model, const Tensor& z0_latent, const NoiseSchedule& s,
                    CounterRng& rng);

// Text table "t beta_t alpha_bar_t" for golden-file checks.
std::string dump_schedule(const NoiseSchedule& s);

}  // namespace vmedit
