#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "numkit/tensor.hpp"

// Central finite-difference gradient oracle. Runs in 64-bit mode only: the
// model blocks under test are instantiated with T = double so the oracle
// itself is trustworthy at h = 1e-3 (truncation O(h^2), round-off O(eps/h)).

namespace numkit {

struct FdEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

struct FdReport {
    std::vector<FdEntry> entries;
    double worst = 0.0;
    double tol = 0.0;
    bool pass() const { return worst <= tol; }
};

// f builds a scalar loss; it must be deterministic (same value on re-eval)
// and, when a tape is active, differentiable w.r.t. every tensor in params.
// Relative error uses a denominator floor of tol*10 (gradients below the
// floor are compared absolutely against it), matching the oracle tolerance.
inline FdReport finite_diff_check(
    const std::function<Tensor<double>()>& f,
    const std::vector<std::pair<std::string, Tensor<double>>>& params, double h = 1e-3,
    double tol = 1e-3, std::size_t max_elems_per_param = 0) {
    FdReport report;
    report.tol = tol;

    // analytic gradients
    for (const auto& [name, p] : params) {
        Tensor<double> handle = p;
        handle.zero_grad();
    }
    double base;
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> loss = f();
        check(loss.numel() == 1, "finite_diff_check: loss must be scalar");
        base = loss.item();
        tape.backward(loss);
    }

    // determinism contract: re-evaluation must reproduce the value exactly
    {
        Tensor<double> again = f();
        if (again.item() != base) {
            throw std::runtime_error("finite_diff_check: f is not deterministic (" +
                                     std::to_string(base) + " vs " +
                                     std::to_string(again.item()) + ")");
        }
    }

    const double floor = tol * 10.0;
    for (const auto& [name, p] : params) {
        FdEntry entry;
        entry.name = name;
        Tensor<double> param = p;  // shared handle
        const std::size_t n = param.numel();
        const std::size_t limit =
            (max_elems_per_param == 0 || max_elems_per_param >= n) ? n : max_elems_per_param;
        const std::size_t stride = n / limit + (n % limit ? 1 : 0);
        const std::vector<double>& analytic = param.grad();
        for (std::size_t i = 0; i < n; i += stride) {
            double* x = param.mutable_data() + i;
            const double saved = *x;
            *x = saved + h;
            const double fp = f().item();
            *x = saved - h;
            const double fm = f().item();
            *x = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            const double rel = std::abs(a - numeric) / denom;
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.checked;
        }
        report.worst = std::max(report.worst, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace numkit
