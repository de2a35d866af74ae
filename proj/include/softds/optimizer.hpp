#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "softds/errors.hpp"

namespace softds {

struct AdamWSettings {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;
};

struct AdamState {
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    explicit AdamState(std::size_t n_params = 0) : m(n_params, 0.0), v(n_params, 0.0) {}

    void reset() {
        step = 0;
        std::fill(m.begin(), m.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
    }

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One AdamW update minimizing a loss whose gradient is `grad`. Weight decay is
/// decoupled: params -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * params).
inline void adamw_step(std::span<double> params, std::span<const double> grad, AdamState& state,
                       const AdamWSettings& s) {
    if (params.size() != grad.size() || state.m.size() != params.size() ||
        state.v.size() != params.size()) {
        throw ValidationError("adamw_step: parameter, gradient and state lengths differ");
    }
    for (double g : grad) {
        if (!std::isfinite(g)) {
            throw NumericError("adamw_step: non-finite gradient");
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bias1 = 1.0 - std::pow(s.beta1, t);
    const double bias2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        state.m[p] = s.beta1 * state.m[p] + (1.0 - s.beta1) * grad[p];
        state.v[p] = s.beta2 * state.v[p] + (1.0 - s.beta2) * grad[p] * grad[p];
        const double m_hat = state.m[p] / bias1;
        const double v_hat = state.v[p] / bias2;
        params[p] -= s.learning_rate * (m_hat / (std::sqrt(v_hat) + s.epsilon) +
                                        s.weight_decay * params[p]);
    }
}

} // namespace softds
