#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace hgcnet {

// A differentiable scalar-valued graph exposed for finite-difference checking.
// `forward` returns the loss; `backward` runs forward then fills every slot's
// grad buffer with the analytic gradient. Slots alias live parameter/input
// storage so the checker can nudge values in place.
struct GradSlot {
    std::string name;
    double* data = nullptr;
    double* grad = nullptr;
    std::size_t size = 0;
};

struct GradProblem {
    std::function<double()> forward;
    std::function<void()> backward;
    std::vector<GradSlot> slots;
};

struct GradCheckDetail {
    std::string slot;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

// Central finite differences on 64-bit replicas. Returns
// max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Reports only; callers decide what to do with the error.
inline double grad_check(GradProblem& problem, double step = 1e-3, GradCheckDetail* worst = nullptr) {
    problem.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(problem.slots.size());
    for (const auto& slot : problem.slots) {
        analytic.emplace_back(slot.grad, slot.grad + slot.size);
    }

    double max_err = 0.0;
    for (std::size_t s = 0; s < problem.slots.size(); ++s) {
        auto& slot = problem.slots[s];
        for (std::size_t i = 0; i < slot.size; ++i) {
            const double saved = slot.data[i];
            slot.data[i] = saved + step;
            const double up = problem.forward();
            slot.data[i] = saved - step;
            const double down = problem.forward();
            slot.data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[s][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            if (err > max_err) {
                max_err = err;
                if (worst) {
                    worst->slot = slot.name;
                    worst->index = i;
                    worst->analytic = a;
                    worst->numeric = numeric;
                    worst->rel_error = err;
                }
            }
        }
    }
    return max_err;
}

}  // namespace hgcnet
