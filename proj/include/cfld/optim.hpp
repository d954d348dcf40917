#pragma once

#include <cmath>
#include <vector>

#include "cfld/nn.hpp"

namespace cfld {

// Adam with standard defaults. Only the parameters handed to init() are ever
// touched, so the frozen set stays byte-identical through any number of steps.
template <typename T = float>
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    ParamList<T> params;
    std::vector<std::vector<T>> m, v;
    long long step_count = 0;

    void init(ParamList<T> trainable) {
        params = std::move(trainable);
        m.assign(params.items.size(), {});
        v.assign(params.items.size(), {});
        for (std::size_t i = 0; i < params.items.size(); ++i) {
            m[i].assign(params.items[i].second.numel(), T(0));
            v[i].assign(params.items[i].second.numel(), T(0));
        }
        step_count = 0;
    }

    void zero_grad() {
        for (auto& [name, p] : params.items) {
            Tensor<T> h = p;
            h.zero_grad();
        }
    }

    void step(double lr) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, double(step_count));
        const double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (std::size_t i = 0; i < params.items.size(); ++i) {
            Tensor<T> p = params.items[i].second;
            if (!p.has_grad()) continue;
            const std::vector<T>& g = p.grad();
            T* data = p.mutable_data();
            for (std::size_t j = 0; j < g.size(); ++j) {
                m[i][j] = static_cast<T>(beta1 * m[i][j] + (1.0 - beta1) * g[j]);
                v[i][j] = static_cast<T>(beta2 * v[i][j] + (1.0 - beta2) * double(g[j]) * g[j]);
                const double mhat = m[i][j] / bc1;
                const double vhat = v[i][j] / bc2;
                data[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

}  // namespace cfld
