#include "cfld/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cfld {

VarianceSchedule::VarianceSchedule(int steps_, double beta_start, double beta_end)
    : steps(steps_) {
    numkit::check(steps >= 1, "schedule: step count must be >= 1");
    numkit::check(beta_start > 0 && beta_end < 1 && (steps == 1 || beta_start < beta_end),
                  "schedule: need 0 < beta_1 < beta_T < 1");
    betas.assign(steps + 1, 0.0);
    alphas.assign(steps + 1, 1.0);
    alpha_bars.assign(steps + 1, 1.0);
    for (int t = 1; t <= steps; ++t) {
        betas[t] = steps == 1 ? beta_start
                              : beta_start + (beta_end - beta_start) * double(t - 1) / double(steps - 1);
        alphas[t] = 1.0 - betas[t];
        alpha_bars[t] = alpha_bars[t - 1] * alphas[t];
    }
}

double VarianceSchedule::alpha_bar(int t) const {
    if (t < 0 || t > steps) {
        throw std::out_of_range("schedule: timestep " + std::to_string(t) +
                                " outside [0," + std::to_string(steps) + "]");
    }
    return alpha_bars[t];
}

DdimPlan DdimPlan::evenly_spaced(int total_steps, int count) {
    numkit::check(count >= 1 && count <= total_steps,
                  "ddim plan: substep count " + std::to_string(count) +
                      " invalid for T=" + std::to_string(total_steps));
    DdimPlan plan;
    plan.indices.reserve(count);
    int prev = total_steps + 1;
    for (int i = 0; i < count; ++i) {
        int t = total_steps - static_cast<int>(std::llround(double(i) * total_steps / count));
        if (t < 1) t = 1;
        if (t >= prev) t = prev - 1;  // keep strictly decreasing after rounding
        plan.indices.push_back(t);
        prev = t;
    }
    plan.validate(total_steps);
    return plan;
}

void DdimPlan::validate(int total_steps) const {
    numkit::check(!indices.empty(), "ddim plan: empty");
    numkit::check(indices.front() == total_steps,
                  "ddim plan: first index must equal T=" + std::to_string(total_steps));
    numkit::check(indices.back() >= 1, "ddim plan: last index must be >= 1");
    for (std::size_t i = 1; i < indices.size(); ++i) {
        numkit::check(indices[i] < indices[i - 1], "ddim plan: indices must strictly decrease");
    }
}

Tensor<float> q_sample(const Tensor<float>& z0, int t, const Tensor<float>& eps,
                       const VarianceSchedule& sched) {
    if (t < 1 || t > sched.steps) {
        throw std::out_of_range("q_sample: timestep " + std::to_string(t) + " outside [1," +
                                std::to_string(sched.steps) + "]");
    }
    numkit::check(z0.shape() == eps.shape(), "q_sample: noise shape " +
                                                 numkit::shape_str(eps.shape()) +
                                                 " differs from latent " +
                                                 numkit::shape_str(z0.shape()));
    const double abar = sched.alpha_bar(t);
    const double a = std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    Tensor<float> out = Tensor<float>::zeros(z0.shape());
    float* po = out.mutable_data();
    const float* pz = z0.data();
    const float* pe = eps.data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        po[i] = static_cast<float>(a * pz[i] + b * pe[i]);
    }
    return out;
}

int sample_timestep_cubic(Rng& rng, int total_steps) {
    numkit::check(total_steps >= 1, "cubic sampler: T must be >= 1");
    const double u = rng.uniform();
    const double mapped = (1.0 - u * u * u) * double(total_steps);
    long long t = std::llround(mapped);
    if (t < 1) t = 1;
    if (t > total_steps) t = total_steps;
    return static_cast<int>(t);
}

Tensor<float> predict_z0(const Tensor<float>& zt, const Tensor<float>& eps_hat, int t,
                         const VarianceSchedule& sched) {
    numkit::check(zt.shape() == eps_hat.shape(), "predict_z0: shape mismatch " +
                                                     numkit::shape_str(zt.shape()) + " vs " +
                                                     numkit::shape_str(eps_hat.shape()));
    const double abar = sched.alpha_bar(t);
    if (abar <= 0.0) {
        throw std::domain_error("predict_z0: alpha_bar(" + std::to_string(t) +
                                ") is zero; inversion singular");
    }
    const double inv_a = 1.0 / std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    Tensor<float> out = Tensor<float>::zeros(zt.shape());
    float* po = out.mutable_data();
    const float* pz = zt.data();
    const float* pe = eps_hat.data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        po[i] = static_cast<float>((pz[i] - b * pe[i]) * inv_a);
    }
    return out;
}

Tensor<float> ddim_step(const Tensor<float>& zt, const Tensor<float>& eps_hat, int t,
                        int t_prev, const VarianceSchedule& sched) {
    numkit::check(t > t_prev && t_prev >= 0, "ddim_step: need t > t_prev >= 0, got t=" +
                                                 std::to_string(t) + " t_prev=" +
                                                 std::to_string(t_prev));
    const double abar = sched.alpha_bar(t);
    if (abar <= 0.0) {
        throw std::domain_error("ddim_step: alpha_bar(" + std::to_string(t) + ") is zero");
    }
    const double abar_prev = sched.alpha_bar(t_prev);
    const double inv_a = 1.0 / std::sqrt(abar);
    const double b = std::sqrt(1.0 - abar);
    const double a_prev = std::sqrt(abar_prev);
    const double b_prev = std::sqrt(1.0 - abar_prev);
    Tensor<float> out = Tensor<float>::zeros(zt.shape());
    float* po = out.mutable_data();
    const float* pz = zt.data();
    const float* pe = eps_hat.data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double z0_hat = (pz[i] - b * pe[i]) * inv_a;
        po[i] = static_cast<float>(a_prev * z0_hat + b_prev * pe[i]);
    }
    return out;
}

Tensor<float> ddim_sample_loop(const Tensor<float>& z_start, const EpsFn& eps_fn,
                               const DdimPlan& plan, const VarianceSchedule& sched) {
    plan.validate(sched.steps);
    Tensor<float> z = z_start;
    for (std::size_t i = 0; i < plan.indices.size(); ++i) {
        const int t = plan.indices[i];
        const int t_prev = (i + 1 < plan.indices.size()) ? plan.indices[i + 1] : 0;
        Tensor<float> eps_hat = eps_fn(z, t);
        z = ddim_step(z, eps_hat, t, t_prev, sched);
    }
    return z;
}

}  // namespace cfld
