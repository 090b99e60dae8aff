#pragma once

// Test-only oracle: a naive double-precision reference forward pass and a
// central finite-difference gradient built on it. It shares nothing with the
// engine except the spec geometry and the dropout keep rule.

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedrul/nn/network.hpp"
#include "fedrul/util/random.hpp"

namespace fedrul::testing_oracle {

using nn::Activation;
using nn::LayerKind;
using nn::LayerSpec;
using nn::NetworkSpec;
using nn::ParameterVector;

inline double reference_predict(const NetworkSpec& spec, const std::vector<double>& params,
                                std::span<const float> window, bool training, std::uint64_t rng_seed,
                                std::size_t sample, std::vector<bool>* relu_pattern = nullptr) {
    const int T = spec.input_window();
    const int H = spec.input_channels();
    // x[c][t]
    std::vector<std::vector<double>> x(H, std::vector<double>(T));
    for (int t = 0; t < T; ++t)
        for (int h = 0; h < H; ++h) x[h][t] = window[t * H + h];
    std::vector<double> flat;
    bool is_flat = false;
    std::size_t offset = 0;

    for (std::size_t l = 0; l < spec.layers().size(); ++l) {
        const LayerSpec& s = spec.layers()[l];
        if (s.kind == LayerKind::Conv1D) {
            const int C = static_cast<int>(x.size());
            const int K = s.kernel_len;
            const int pad = (K - 1) / 2;
            const std::size_t w0 = offset;
            const std::size_t b0 = offset + static_cast<std::size_t>(s.kernels) * C * K;
            std::vector<std::vector<double>> y(s.kernels, std::vector<double>(T));
            for (int o = 0; o < s.kernels; ++o)
                for (int t = 0; t < T; ++t) {
                    double z = params[b0 + o];
                    for (int c = 0; c < C; ++c)
                        for (int k = 0; k < K; ++k) {
                            const int src = t + k - pad;
                            if (src < 0 || src >= T) continue;
                            z += params[w0 + (static_cast<std::size_t>(o) * C + c) * K + k] * x[c][src];
                        }
                    if (relu_pattern && s.activation == Activation::ReLU) relu_pattern->push_back(z > 0.0);
                    y[o][t] = s.activation == Activation::ReLU ? std::max(z, 0.0) : z;
                }
            offset = b0 + s.kernels;
            x = std::move(y);
        } else {
            if (!is_flat) {
                flat.clear();
                for (const auto& row : x) flat.insert(flat.end(), row.begin(), row.end());
                is_flat = true;
            }
            const std::size_t n_in = flat.size();
            const std::size_t w0 = offset;
            const std::size_t b0 = offset + static_cast<std::size_t>(s.units) * n_in;
            std::vector<double> y(s.units);
            for (int o = 0; o < s.units; ++o) {
                double z = params[b0 + o];
                for (std::size_t i = 0; i < n_in; ++i) z += params[w0 + o * n_in + i] * flat[i];
                if (relu_pattern && s.activation == Activation::ReLU) relu_pattern->push_back(z > 0.0);
                double a = s.activation == Activation::ReLU ? std::max(z, 0.0) : z;
                if (training && s.dropout_rate > 0.0)
                    a = nn::detail::dropout_keep(rng_seed, sample, l, static_cast<std::size_t>(o), s.dropout_rate)
                            ? a / (1.0 - s.dropout_rate)
                            : 0.0;
                y[o] = a;
            }
            offset = b0 + s.units;
            flat = std::move(y);
        }
    }
    return flat.at(0);
}

inline double reference_rmse(const NetworkSpec& spec, const std::vector<double>& params, const nn::Batch& batch,
                             bool training, std::uint64_t rng_seed, std::vector<bool>* relu_pattern = nullptr) {
    double sse = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const double r =
            reference_predict(spec, params, batch.inputs[j], training, rng_seed, j, relu_pattern) - batch.targets[j];
        sse += r * r;
    }
    return std::sqrt(sse / static_cast<double>(batch.size()));
}

struct GradientCase {
    NetworkSpec spec;
    ParameterVector params;
    std::vector<std::vector<float>> inputs;
    std::vector<float> targets;
    std::uint64_t rng_seed = 0;

    nn::Batch batch() const {
        nn::Batch b;
        for (const auto& x : inputs) b.inputs.emplace_back(x);
        b.targets = targets;
        return b;
    }
};

/// Random network of at most 500 parameters with random weights, biases and batch.
inline GradientCase random_gradient_case(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0xFD));
    for (;;) {
        const int window = static_cast<int>(rng.uniform_int(4, 10));
        const int channels = static_cast<int>(rng.uniform_int(1, 3));
        std::vector<LayerSpec> layers;
        const int n_conv = static_cast<int>(rng.uniform_int(0, 2));
        for (int c = 0; c < n_conv; ++c)
            layers.push_back(LayerSpec::conv1d(static_cast<int>(rng.uniform_int(1, 3)),
                                               static_cast<int>(2 * rng.uniform_int(0, 2) + 1),
                                               rng.uniform() < 0.8 ? Activation::ReLU : Activation::Linear));
        layers.push_back(LayerSpec::dense(static_cast<int>(rng.uniform_int(2, 8)), Activation::ReLU,
                                          rng.uniform() < 0.5 ? 0.5 : 0.0));
        layers.push_back(LayerSpec::output());
        NetworkSpec spec(layers, window, channels, seed);
        if (spec.parameter_count() > 500) continue;

        GradientCase c{spec, nn::init_parameters(spec), {}, {}, derive_seed(seed, 0xD0)};
        for (auto& v : c.params.values) v = static_cast<float>(rng.uniform(-0.6, 0.6));
        const int n = static_cast<int>(rng.uniform_int(1, 5));
        for (int j = 0; j < n; ++j) {
            std::vector<float> x(spec.input_size());
            for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
            c.inputs.push_back(std::move(x));
            c.targets.push_back(static_cast<float>(rng.uniform(-3, 3)));
        }
        return c;
    }
}

struct GradientReport {
    std::size_t checked = 0;
    std::size_t failures = 0;
    std::size_t kink_crossings = 0;  // coordinates re-checked with the fine stencil
    double worst_relative = 0.0;
};

/// Central differences (h = 1e-3) on the double reference against the
/// engine's double-precision analytic gradient; relative tolerance with an
/// absolute floor. A stencil that flips any ReLU unit straddles a kink where
/// the loss is not differentiable; such coordinates are re-differenced with
/// `fine_h`, which keeps the activation pattern fixed.
inline GradientReport check_gradient(const GradientCase& c, double h = 1e-3, double rel_tol = 1e-4,
                                     double abs_floor = 1e-6, double fine_h = 1e-6) {
    const auto batch = c.batch();
    const auto analytic = nn::loss_and_gradient_as<double>(c.spec, c.params, batch, true, c.rng_seed).gradient;
    std::vector<double> p(c.params.values.begin(), c.params.values.end());
    std::vector<bool> base_pattern;
    reference_rmse(c.spec, p, batch, true, c.rng_seed, &base_pattern);

    auto difference = [&](std::size_t i, double step, bool& flipped) {
        const double saved = p[i];
        std::vector<bool> pattern_up, pattern_down;
        p[i] = saved + step;
        const double up = reference_rmse(c.spec, p, batch, true, c.rng_seed, &pattern_up);
        p[i] = saved - step;
        const double down = reference_rmse(c.spec, p, batch, true, c.rng_seed, &pattern_down);
        p[i] = saved;
        flipped = pattern_up != base_pattern || pattern_down != base_pattern;
        return (up - down) / (2.0 * step);
    };

    GradientReport report;
    for (std::size_t i = 0; i < p.size(); ++i) {
        bool flipped = false;
        double fd = difference(i, h, flipped);
        if (flipped) {
            ++report.kink_crossings;
            fd = difference(i, fine_h, flipped);
        }
        const double diff = std::abs(fd - analytic[i]);
        const double scale = std::max(std::abs(fd), std::abs(analytic[i]));
        ++report.checked;
        if (diff <= abs_floor) continue;
        const double rel = diff / scale;
        report.worst_relative = std::max(report.worst_relative, rel);
        if (rel > rel_tol || flipped) ++report.failures;
    }
    return report;
}

}  // namespace fedrul::testing_oracle
