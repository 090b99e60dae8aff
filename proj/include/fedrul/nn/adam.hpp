#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fedrul/nn/network.hpp"
#include "fedrul/util/error.hpp"

namespace fedrul::nn {

struct AdamState {
    std::vector<double> first_moment;
    std::vector<double> second_moment;
    std::uint64_t step_count = 0;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n, double lr = 0.001)
        : first_moment(n, 0.0), second_moment(n, 0.0), learning_rate(lr) {}

    void reset() {
        std::fill(first_moment.begin(), first_moment.end(), 0.0);
        std::fill(second_moment.begin(), second_moment.end(), 0.0);
        step_count = 0;
    }

    bool operator==(const AdamState&) const = default;
};

struct AdamResult {
    ParameterVector params;
    AdamState state;
};

/// Bias-corrected Adam update, applied coordinate-wise.
inline AdamResult adam_step(AdamState state, ParameterVector params, const ParameterVector& gradient) {
    const std::size_t n = params.size();
    require(gradient.size() == n, "adam_step: gradient length differs from parameters");
    require(state.first_moment.size() == n && state.second_moment.size() == n,
            "adam_step: optimizer state length differs from parameters");

    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);

    for (std::size_t i = 0; i < n; ++i) {
        const double g = gradient.values[i];
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g * g;
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        const double update = state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
        params.values[i] = static_cast<float>(static_cast<double>(params.values[i]) - update);
    }
    return {std::move(params), std::move(state)};
}

}  // namespace fedrul::nn
