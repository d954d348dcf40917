#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cfld/schedule.hpp"

using cfld::DdimPlan;
using cfld::VarianceSchedule;
using numkit::Rng;
using Tf = numkit::Tensor<float>;

namespace {

Tf gaussian_tensor(numkit::Shape shape, Rng& rng) {
    Tf t = Tf::zeros(std::move(shape));
    rng.fill_gaussian(t.mutable_values());
    return t;
}

}  // namespace

TEST_CASE("schedule table invariants") {
    VarianceSchedule s(1000);
    CHECK(s.alpha_bar(0) == 1.0);
    for (int t = 2; t <= 1000; ++t) {
        CHECK(s.betas[t] > s.betas[t - 1]);
        CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
    }
    CHECK(s.betas[1] > 0.0);
    CHECK(s.betas[1000] < 1.0);
    CHECK(s.alpha_bar(1) > 0.99);
    CHECK(s.alpha_bar(1000) < 1e-3);
}

TEST_CASE("q_sample endpoints and direct arithmetic") {
    VarianceSchedule s(10, 1e-4, 2e-4);
    Rng rng(3);
    Tf z0 = gaussian_tensor({4, 4}, rng);
    Tf eps = gaussian_tensor({4, 4}, rng);

    // abar = 1 -> zt = z0 exactly
    VarianceSchedule forced(4, 1e-4, 2e-4);
    forced.alpha_bars[1] = 1.0;
    Tf z1 = cfld::q_sample(z0, 1, eps, forced);
    for (std::size_t i = 0; i < z0.numel(); ++i) CHECK(z1.at(i) == z0.at(i));

    // forced abar: 0.36 -> sqrt terms 0.6 / 0.8
    forced.alpha_bars[2] = 0.36;
    Tf zero_latent = Tf::zeros({2, 2});
    Tf ones = Tf::full({2, 2}, 1.0f);
    Tf zt = cfld::q_sample(zero_latent, 2, ones, forced);
    for (std::size_t i = 0; i < zt.numel(); ++i) CHECK(zt.at(i) == doctest::Approx(0.8));

    // forced abar 0 -> zt = eps
    forced.alpha_bars[3] = 0.0;
    Tf zn = cfld::q_sample(z0, 3, eps, forced);
    for (std::size_t i = 0; i < zn.numel(); ++i) CHECK(zn.at(i) == doctest::Approx(eps.at(i)));

    CHECK_THROWS_AS(cfld::q_sample(z0, 0, eps, s), std::out_of_range);
    CHECK_THROWS_AS(cfld::q_sample(z0, 11, eps, s), std::out_of_range);
}

TEST_CASE("q_sample statistics match the forward process") {
    // empirical mean ~ sqrt(abar)*z0 and variance ~ (1-abar) within 3 SE
    VarianceSchedule s(1000);
    for (double target : {0.9, 0.5, 0.1}) {
        int t = 1;
        double best = 1e9;
        for (int k = 1; k <= 1000; ++k) {
            if (std::abs(s.alpha_bar(k) - target) < best) {
                best = std::abs(s.alpha_bar(k) - target);
                t = k;
            }
        }
        const double abar = s.alpha_bar(t);
        const int n = 10000;
        const float z0v = 0.7f;
        Tf z0 = Tf::full({1}, z0v);
        Rng rng(42);
        double sum = 0, sq = 0;
        for (int i = 0; i < n; ++i) {
            Tf eps = gaussian_tensor({1}, rng);
            const double v = cfld::q_sample(z0, t, eps, s).at(0);
            sum += v;
            sq += v * v;
        }
        const double mean = sum / n;
        const double var = sq / n - mean * mean;
        const double expect_mean = std::sqrt(abar) * z0v;
        const double expect_var = 1.0 - abar;
        const double se_mean = std::sqrt(expect_var / n);
        const double se_var = expect_var * std::sqrt(2.0 / n);
        CHECK(std::abs(mean - expect_mean) < 3 * se_mean);
        CHECK(std::abs(var - expect_var) < 3 * se_var);
    }
}

TEST_CASE("cubic timestep mapping") {
    // u=0.5, T=1000 -> 875; endpoints clamp
    struct FixedU {
        double u;
    };
    // direct check through the analytic map on known uniforms: emulate by
    // finding u from the generator is awkward, so check the arithmetic inline
    CHECK(std::llround((1.0 - 0.5 * 0.5 * 0.5) * 1000) == 875);
    CHECK(std::llround((1.0 - 0.0) * 1000) == 1000);
    // u -> 1 clamps to 1
    CHECK(std::max(1LL, std::llround((1.0 - 0.999999 * 0.999999 * 0.999999) * 1000)) >= 1);

    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const int t = cfld::sample_timestep_cubic(rng, 1000);
        CHECK(t >= 1);
        CHECK(t <= 1000);
    }
}

TEST_CASE("cubic timestep law: tail probability and KS distance") {
    const int T = 1000;
    const int n = 100000;
    Rng rng(2024);
    std::vector<int> counts(T + 1, 0);
    int above_half = 0;
    for (int i = 0; i < n; ++i) {
        const int t = cfld::sample_timestep_cubic(rng, T);
        counts[t]++;
        if (t > T / 2) above_half++;
    }
    const double p_tail = double(above_half) / n;
    CHECK(std::abs(p_tail - 0.794) < 0.01);  // analytic 2^(-1/3) = 0.7937

    // KS distance against F(tau) = 1 - (1 - tau/T)^(1/3), evaluated at the
    // half-integer cell boundaries the round() discretization induces.
    double ks = 0.0, cum = 0.0;
    for (int tau = 1; tau <= T; ++tau) {
        cum += double(counts[tau]) / n;
        const double boundary = std::min(1.0, (tau + 0.5) / T);
        const double f = 1.0 - std::cbrt(1.0 - boundary);
        ks = std::max(ks, std::abs(cum - f));
    }
    CHECK(ks < 0.01);
}

TEST_CASE("predict_z0 inverts q_sample") {
    VarianceSchedule s(1000);
    Rng rng(5);
    Tf z0 = gaussian_tensor({4, 8, 8}, rng);
    Tf eps = gaussian_tensor({4, 8, 8}, rng);
    for (int t : {1, 250, 500, 999}) {
        Tf zt = cfld::q_sample(z0, t, eps, s);
        Tf rec = cfld::predict_z0(zt, eps, t, s);
        for (std::size_t i = 0; i < z0.numel(); ++i) {
            CHECK(rec.at(i) == doctest::Approx(z0.at(i)).epsilon(2e-4));
        }
    }

    // direct arithmetic: zt=0.8, eps=1, abar=0.36 -> z0 = 0
    VarianceSchedule forced(4, 1e-4, 2e-4);
    forced.alpha_bars[2] = 0.36;
    Tf zt = Tf::full({1}, 0.8f);
    Tf eh = Tf::full({1}, 1.0f);
    CHECK(cfld::predict_z0(zt, eh, 2, forced).at(0) == doctest::Approx(0.0));

    forced.alpha_bars[3] = 0.0;
    CHECK_THROWS_AS(cfld::predict_z0(zt, eh, 3, forced), std::domain_error);
}

TEST_CASE("ddim plan construction") {
    DdimPlan plan = DdimPlan::evenly_spaced(1000, 50);
    CHECK(plan.indices.size() == 50);
    CHECK(plan.indices.front() == 1000);
    CHECK(plan.indices.back() == 20);
    for (std::size_t i = 1; i < plan.indices.size(); ++i) {
        CHECK(plan.indices[i] == plan.indices[i - 1] - 20);
    }
    DdimPlan odd = DdimPlan::evenly_spaced(1000, 37);
    CHECK(odd.indices.front() == 1000);
    CHECK(odd.indices.back() >= 1);

    CHECK_THROWS_AS(cfld::ddim_step(Tf::zeros({1}), Tf::zeros({1}), 5, 5, VarianceSchedule(10)),
                    std::invalid_argument);
}

TEST_CASE("ddim endpoint and fixed point") {
    VarianceSchedule s(1000);
    Rng rng(6);
    Tf zt = gaussian_tensor({2, 3}, rng);
    Tf eps = gaussian_tensor({2, 3}, rng);

    // t_prev = 0 returns z0_hat (abar_0 = 1)
    Tf step0 = cfld::ddim_step(zt, eps, 500, 0, s);
    Tf z0h = cfld::predict_z0(zt, eps, 500, s);
    for (std::size_t i = 0; i < zt.numel(); ++i) CHECK(step0.at(i) == z0h.at(i));

    // eps_hat = 0 and flat abar -> z unchanged
    VarianceSchedule flat(4, 1e-4, 2e-4);
    flat.alpha_bars = {1.0, 0.49, 0.49, 0.49, 0.49};
    Tf fixed = cfld::ddim_step(zt, Tf::zeros({2, 3}), 3, 2, flat);
    for (std::size_t i = 0; i < zt.numel(); ++i) {
        CHECK(fixed.at(i) == doctest::Approx(zt.at(i)).epsilon(1e-6));
    }
}

TEST_CASE("ddim loop with perfect predictor recovers z0 on any plan") {
    VarianceSchedule s(1000);
    Rng rng(8);
    Tf z0 = gaussian_tensor({4, 4, 4}, rng);
    Tf eps = gaussian_tensor({4, 4, 4}, rng);
    Tf zT = cfld::q_sample(z0, 1000, eps, s);
    auto perfect = [&](const Tf&, int) { return eps; };

    // plan of length 1 equals predict_z0
    DdimPlan direct;
    direct.indices = {1000};
    Tf one_step = cfld::ddim_sample_loop(zT, perfect, direct, s);
    Tf inv = cfld::predict_z0(zT, eps, 1000, s);
    for (std::size_t i = 0; i < z0.numel(); ++i) CHECK(one_step.at(i) == inv.at(i));

    Tf via50 = cfld::ddim_sample_loop(zT, perfect, DdimPlan::evenly_spaced(1000, 50), s);
    Tf via250 = cfld::ddim_sample_loop(zT, perfect, DdimPlan::evenly_spaced(1000, 250), s);
    for (std::size_t i = 0; i < z0.numel(); ++i) {
        CHECK(via50.at(i) == doctest::Approx(z0.at(i)).epsilon(5e-5));
        CHECK(via50.at(i) == doctest::Approx(via250.at(i)).epsilon(5e-5));
    }

    // determinism: same z_T twice -> bit-identical
    Tf again = cfld::ddim_sample_loop(zT, perfect, DdimPlan::evenly_spaced(1000, 50), s);
    CHECK(via50.values() == again.values());
}
