#pragma once

#include <functional>
#include <vector>

#include "numkit/rng.hpp"
#include "numkit/tensor.hpp"

// Forward diffusion (variance schedule), the cubic timestep distribution and
// deterministic DDIM reverse steps. Tables are double precision; latents stay
// float32 with per-element arithmetic done in double.

namespace cfld {

using numkit::Rng;
using numkit::Tensor;

struct VarianceSchedule {
    int steps = 1000;                // T
    std::vector<double> betas;       // [T+1]; betas[0] unused
    std::vector<double> alphas;      // [T+1]
    std::vector<double> alpha_bars;  // [T+1]; alpha_bars[0] == 1

    // Linear beta ramp; 0 < beta_1 < ... < beta_T < 1 enforced.
    explicit VarianceSchedule(int steps = 1000, double beta_start = 1e-4,
                              double beta_end = 0.02);

    // abar_t with abar_0 defined as 1 so the final DDIM step is well-formed.
    double alpha_bar(int t) const;
};

struct DdimPlan {
    std::vector<int> indices;  // strictly decreasing; first == T, last >= 1

    static DdimPlan evenly_spaced(int total_steps, int count);
    void validate(int total_steps) const;
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor<float> q_sample(const Tensor<float>& z0, int t, const Tensor<float>& eps,
                       const VarianceSchedule& sched);

// t = clamp(round((1 - u^3) * T), 1, T) with u ~ U[0,1); skews toward high t.
int sample_timestep_cubic(Rng& rng, int total_steps);

// z0_hat = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)
Tensor<float> predict_z0(const Tensor<float>& zt, const Tensor<float>& eps_hat, int t,
                         const VarianceSchedule& sched);

// Deterministic DDIM update to t_prev (t_prev == 0 yields z0_hat).
Tensor<float> ddim_step(const Tensor<float>& zt, const Tensor<float>& eps_hat, int t,
                        int t_prev, const VarianceSchedule& sched);

using EpsFn = std::function<Tensor<float>(const Tensor<float>&, int)>;

// Folds ddim_step over the plan (final step goes to t=0).
Tensor<float> ddim_sample_loop(const Tensor<float>& z_start, const EpsFn& eps_fn,
                               const DdimPlan& plan, const VarianceSchedule& sched);

}  // namespace cfld
