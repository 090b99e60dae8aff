#pragma once

// Small feed-forward engine for 1D convolutional regressors: same-padded
// Conv1D layers, dense layers with optional inverted dropout, and a single
// linear output unit. Forward and backward passes are templated on the
// arithmetic type so a 64-bit shadow of the float path is available.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedrul/util/error.hpp"
#include "fedrul/util/random.hpp"

namespace fedrul::nn {

enum class LayerKind : std::uint8_t { Conv1D, Dense, Output };
enum class Activation : std::uint8_t { ReLU, Linear };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int kernels = 0;
    int kernel_len = 0;
    int units = 0;
    Activation activation = Activation::ReLU;
    double dropout_rate = 0.0;

    static LayerSpec conv1d(int kernels, int kernel_len, Activation act = Activation::ReLU) {
        return {LayerKind::Conv1D, kernels, kernel_len, 0, act, 0.0};
    }
    static LayerSpec dense(int units, Activation act = Activation::ReLU, double dropout = 0.0) {
        return {LayerKind::Dense, 0, 0, units, act, dropout};
    }
    static LayerSpec output() { return {LayerKind::Output, 0, 0, 1, Activation::Linear, 0.0}; }

    bool operator==(const LayerSpec&) const = default;
};

enum class TensorRole : std::uint8_t { Weight, Bias };

struct TensorDescriptor {
    int layer = 0;
    TensorRole role = TensorRole::Weight;
    std::vector<int> shape;

    std::size_t count() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
    bool operator==(const TensorDescriptor&) const = default;
};

/// Flat weights and biases of a network, in layer order (weights before bias).
struct ParameterVector {
    std::vector<float> values;
    std::vector<TensorDescriptor> layout;

    std::size_t size() const noexcept { return values.size(); }
    bool operator==(const ParameterVector& other) const { return values == other.values; }
};

/// Resolved geometry of one layer.
struct LayerPlan {
    LayerSpec spec;
    int in_channels = 0;   // conv: channels; dense: 1
    int in_len = 0;        // conv: time steps; dense: features
    int out_channels = 0;
    int out_len = 0;
    std::size_t weight_offset = 0;
    std::size_t weight_count = 0;
    std::size_t bias_offset = 0;
    std::size_t bias_count = 0;

    int in_size() const { return in_channels * in_len; }
    int out_size() const { return out_channels * out_len; }
};

class NetworkSpec {
public:
    NetworkSpec(std::vector<LayerSpec> layers, int input_window, int input_channels, std::uint64_t seed)
        : layers_(std::move(layers)), input_window_(input_window), input_channels_(input_channels), seed_(seed) {
        build_plan();
    }

    /// Three same-padded conv layers (17->10->10->1 channels, kernel 9),
    /// Dense(100, ReLU, dropout 0.5) and a linear scalar output.
    static NetworkSpec rul_cnn(std::uint64_t seed, int input_window = 50, int input_channels = 17) {
        return NetworkSpec({LayerSpec::conv1d(10, 9), LayerSpec::conv1d(10, 9), LayerSpec::conv1d(1, 9),
                            LayerSpec::dense(100, Activation::ReLU, 0.5), LayerSpec::output()},
                           input_window, input_channels, seed);
    }

    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    int input_window() const noexcept { return input_window_; }
    int input_channels() const noexcept { return input_channels_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<LayerPlan>& plan() const noexcept { return plan_; }
    std::size_t parameter_count() const noexcept { return parameter_count_; }
    std::size_t input_size() const noexcept {
        return static_cast<std::size_t>(input_window_) * static_cast<std::size_t>(input_channels_);
    }
    int max_activation_size() const noexcept { return max_activation_; }

    std::vector<TensorDescriptor> layout() const {
        std::vector<TensorDescriptor> out;
        for (std::size_t l = 0; l < plan_.size(); ++l) {
            const auto& p = plan_[l];
            const int li = static_cast<int>(l);
            if (p.spec.kind == LayerKind::Conv1D) {
                out.push_back({li, TensorRole::Weight, {p.out_channels, p.in_channels, p.spec.kernel_len}});
            } else {
                out.push_back({li, TensorRole::Weight, {p.out_len, p.in_size()}});
            }
            out.push_back({li, TensorRole::Bias, {static_cast<int>(p.bias_count)}});
        }
        return out;
    }

    bool operator==(const NetworkSpec& o) const {
        return layers_ == o.layers_ && input_window_ == o.input_window_ && input_channels_ == o.input_channels_ &&
               seed_ == o.seed_;
    }

private:
    void build_plan() {
        if (input_window_ < 1 || input_channels_ < 1) throw SpecError("input window and channels must be positive");
        if (layers_.empty()) throw SpecError("network has no layers");
        if (layers_.back().kind != LayerKind::Output) throw SpecError("last layer must be the Output layer");

        int channels = input_channels_;
        int len = input_window_;
        bool flattened = false;
        std::size_t offset = 0;
        max_activation_ = channels * len;

        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const LayerSpec& s = layers_[l];
            const std::string where = "layer " + std::to_string(l) + ": ";
            if (!(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0)) throw SpecError(where + "dropout rate outside [0,1)");
            if (s.kind == LayerKind::Output && l + 1 != layers_.size())
                throw SpecError(where + "Output layer must be last");

            LayerPlan p;
            p.spec = s;
            if (s.kind == LayerKind::Conv1D) {
                if (flattened) throw SpecError(where + "Conv1D after a dense layer");
                if (s.kernels < 1) throw SpecError(where + "Conv1D needs at least one kernel");
                if (s.kernel_len < 1 || s.kernel_len % 2 == 0)
                    throw SpecError(where + "same-padded Conv1D needs an odd kernel length");
                if (s.dropout_rate != 0.0) throw SpecError(where + "dropout is only supported on dense layers");
                p.in_channels = channels;
                p.in_len = len;
                p.out_channels = s.kernels;
                p.out_len = len;
                p.weight_count = static_cast<std::size_t>(s.kernels) * channels * s.kernel_len;
                p.bias_count = static_cast<std::size_t>(s.kernels);
                channels = s.kernels;
            } else {
                if (s.units < 1) throw SpecError(where + "dense layer needs at least one unit");
                if (s.kind == LayerKind::Output) {
                    if (s.units != 1 || s.activation != Activation::Linear || s.dropout_rate != 0.0)
                        throw SpecError(where + "Output layer must have one linear unit without dropout");
                }
                p.in_channels = 1;
                p.in_len = channels * len;
                p.out_channels = 1;
                p.out_len = s.units;
                p.weight_count = static_cast<std::size_t>(s.units) * static_cast<std::size_t>(channels * len);
                p.bias_count = static_cast<std::size_t>(s.units);
                channels = 1;
                len = s.units;
                flattened = true;
            }
            p.weight_offset = offset;
            offset += p.weight_count;
            p.bias_offset = offset;
            offset += p.bias_count;
            max_activation_ = std::max(max_activation_, p.out_size());
            plan_.push_back(p);
        }
        if (channels * len != 1) throw SpecError("layer chain does not end in a single scalar");
        parameter_count_ = offset;
    }

    std::vector<LayerSpec> layers_;
    int input_window_;
    int input_channels_;
    std::uint64_t seed_;
    std::vector<LayerPlan> plan_;
    std::size_t parameter_count_ = 0;
    int max_activation_ = 0;
};

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
inline ParameterVector init_parameters(const NetworkSpec& spec) {
    ParameterVector out;
    out.values.assign(spec.parameter_count(), 0.0f);
    out.layout = spec.layout();
    Rng rng(derive_seed(spec.seed(), 0x1417));
    for (const auto& p : spec.plan()) {
        const int fan_in = p.spec.kind == LayerKind::Conv1D ? p.in_channels * p.spec.kernel_len : p.in_size();
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < p.weight_count; ++i)
            out.values[p.weight_offset + i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    return out;
}

/// Window samples (time-major, input_window x input_channels) and RUL targets.
struct Batch {
    std::vector<std::span<const float>> inputs;
    std::vector<float> targets;

    std::size_t size() const noexcept { return inputs.size(); }
};

struct LossAndGradient {
    double loss = 0.0;
    ParameterVector gradient;
};

namespace detail {

/// Keep decision for one dropout unit; independent of evaluation order.
inline bool dropout_keep(std::uint64_t rng_seed, std::size_t sample, std::size_t layer, std::size_t unit, double rate) {
    const std::uint64_t h = splitmix64(derive_seed(rng_seed, sample, (static_cast<std::uint64_t>(layer) << 32) | unit));
    return static_cast<double>(h >> 11) * 0x1.0p-53 >= rate;
}

template <typename Real>
struct Workspace {
    // Per layer: padded input (conv) or input copy, pre-activation, post-activation.
    std::vector<std::vector<Real>> inputs;
    std::vector<std::vector<Real>> pre;
    std::vector<std::vector<Real>> post;
    std::vector<std::vector<Real>> dropout_scale;
    std::vector<Real> grad_a;
    std::vector<Real> grad_b;

    explicit Workspace(const NetworkSpec& spec) {
        const auto& plan = spec.plan();
        inputs.resize(plan.size());
        pre.resize(plan.size());
        post.resize(plan.size());
        dropout_scale.resize(plan.size());
        for (std::size_t l = 0; l < plan.size(); ++l) {
            const auto& p = plan[l];
            if (p.spec.kind == LayerKind::Conv1D)
                inputs[l].assign(static_cast<std::size_t>(p.in_channels) * (p.in_len + p.spec.kernel_len - 1), Real(0));
            else
                inputs[l].assign(static_cast<std::size_t>(p.in_size()), Real(0));
            pre[l].assign(static_cast<std::size_t>(p.out_size()), Real(0));
            post[l].assign(static_cast<std::size_t>(p.out_size()), Real(0));
            dropout_scale[l].assign(static_cast<std::size_t>(p.out_size()), Real(1));
        }
        std::size_t largest = static_cast<std::size_t>(spec.max_activation_size());
        for (const auto& buf : inputs) largest = std::max(largest, buf.size());
        grad_a.assign(largest, Real(0));
        grad_b.assign(largest, Real(0));
    }
};

/// Copies layer l's input (channel-major, length in_len) into its padded buffer.
template <typename Real>
void load_input(const LayerPlan& p, const Real* src, std::vector<Real>& dst) {
    if (p.spec.kind == LayerKind::Conv1D) {
        const int pad = (p.spec.kernel_len - 1) / 2;
        const int padded = p.in_len + p.spec.kernel_len - 1;
        for (int c = 0; c < p.in_channels; ++c) {
            Real* row = dst.data() + static_cast<std::size_t>(c) * padded;
            std::copy(src + static_cast<std::size_t>(c) * p.in_len, src + static_cast<std::size_t>(c + 1) * p.in_len,
                      row + pad);
        }
    } else {
        std::copy(src, src + p.in_size(), dst.begin());
    }
}

template <typename Real>
Real forward_sample(const NetworkSpec& spec, std::span<const Real> params, std::span<const float> window,
                    bool training, std::uint64_t rng_seed, std::size_t sample_index, Workspace<Real>& ws) {
    const auto& plan = spec.plan();
    const int T = spec.input_window();
    const int H = spec.input_channels();

    // First layer input: transpose the time-major window to channel-major.
    {
        const auto& p = plan[0];
        auto& dst = ws.inputs[0];
        if (p.spec.kind == LayerKind::Conv1D) {
            const int pad = (p.spec.kernel_len - 1) / 2;
            const int padded = T + p.spec.kernel_len - 1;
            for (int t = 0; t < T; ++t)
                for (int h = 0; h < H; ++h)
                    dst[static_cast<std::size_t>(h) * padded + pad + t] = static_cast<Real>(window[t * H + h]);
        } else {
            for (int h = 0; h < H; ++h)
                for (int t = 0; t < T; ++t) dst[static_cast<std::size_t>(h) * T + t] = static_cast<Real>(window[t * H + h]);
        }
    }

    for (std::size_t l = 0; l < plan.size(); ++l) {
        const auto& p = plan[l];
        if (l > 0) load_input(p, ws.post[l - 1].data(), ws.inputs[l]);
        const Real* in = ws.inputs[l].data();
        const Real* w = params.data() + p.weight_offset;
        const Real* b = params.data() + p.bias_offset;
        Real* z = ws.pre[l].data();

        if (p.spec.kind == LayerKind::Conv1D) {
            const int K = p.spec.kernel_len;
            const int L = p.out_len;
            const int padded = p.in_len + K - 1;
            for (int o = 0; o < p.out_channels; ++o) {
                Real* zo = z + static_cast<std::size_t>(o) * L;
                std::fill(zo, zo + L, b[o]);
                for (int c = 0; c < p.in_channels; ++c) {
                    const Real* wk = w + (static_cast<std::size_t>(o) * p.in_channels + c) * K;
                    const Real* row = in + static_cast<std::size_t>(c) * padded;
                    for (int k = 0; k < K; ++k) {
                        const Real wv = wk[k];
                        const Real* src = row + k;
                        for (int t = 0; t < L; ++t) zo[t] += wv * src[t];
                    }
                }
            }
        } else {
            const int n_in = p.in_size();
            for (int o = 0; o < p.out_len; ++o) {
                const Real* wo = w + static_cast<std::size_t>(o) * n_in;
                Real acc = 0;
                for (int i = 0; i < n_in; ++i) acc += wo[i] * in[i];
                z[o] = acc + b[o];
            }
        }

        const int n_out = p.out_size();
        Real* a = ws.post[l].data();
        for (int i = 0; i < n_out; ++i)
            a[i] = p.spec.activation == Activation::ReLU ? std::max(z[i], Real(0)) : z[i];
        if (training && p.spec.dropout_rate > 0.0) {
            const Real keep_scale = Real(1) / Real(1.0 - p.spec.dropout_rate);
            Real* s = ws.dropout_scale[l].data();
            for (int i = 0; i < n_out; ++i) {
                s[i] = dropout_keep(rng_seed, sample_index, l, static_cast<std::size_t>(i), p.spec.dropout_rate)
                           ? keep_scale
                           : Real(0);
                a[i] *= s[i];
            }
        } else {
            std::fill(ws.dropout_scale[l].begin(), ws.dropout_scale[l].end(), Real(1));
        }
    }
    return ws.post.back()[0];
}

/// Accumulates d(output)/d(params) scaled by `upstream` into `grad`.
template <typename Real>
void backward_sample(const NetworkSpec& spec, std::span<const Real> params, Workspace<Real>& ws, Real upstream,
                     std::span<double> grad) {
    const auto& plan = spec.plan();
    Real* da = ws.grad_a.data();  // gradient w.r.t. current layer's post-activation
    Real* dx = ws.grad_b.data();  // gradient w.r.t. current layer's (unpadded) input
    da[0] = upstream;

    for (std::size_t li = plan.size(); li-- > 0;) {
        const auto& p = plan[li];
        const int n_out = p.out_size();
        const Real* z = ws.pre[li].data();
        const Real* s = ws.dropout_scale[li].data();
        // da -> dz in place.
        for (int i = 0; i < n_out; ++i) {
            Real g = da[i] * s[i];
            if (p.spec.activation == Activation::ReLU && !(z[i] > Real(0))) g = Real(0);
            da[i] = g;
        }
        const Real* dz = da;
        const Real* in = ws.inputs[li].data();
        const Real* w = params.data() + p.weight_offset;
        double* gw = grad.data() + p.weight_offset;
        double* gb = grad.data() + p.bias_offset;
        const bool need_dx = li > 0;

        if (p.spec.kind == LayerKind::Conv1D) {
            const int K = p.spec.kernel_len;
            const int L = p.out_len;
            const int pad = (K - 1) / 2;
            const int padded = p.in_len + K - 1;
            // dx is accumulated in padded coordinates, then unpadded below.
            Real* dpad = dx;
            if (need_dx) std::fill(dpad, dpad + static_cast<std::size_t>(p.in_channels) * padded, Real(0));
            for (int o = 0; o < p.out_channels; ++o) {
                const Real* dzo = dz + static_cast<std::size_t>(o) * L;
                Real bsum = 0;
                for (int t = 0; t < L; ++t) bsum += dzo[t];
                gb[o] += static_cast<double>(bsum);
                for (int c = 0; c < p.in_channels; ++c) {
                    const std::size_t wbase = (static_cast<std::size_t>(o) * p.in_channels + c) * K;
                    const Real* row = in + static_cast<std::size_t>(c) * padded;
                    Real* drow = dpad + static_cast<std::size_t>(c) * padded;
                    for (int k = 0; k < K; ++k) {
                        const Real* src = row + k;
                        Real acc = 0;
                        for (int t = 0; t < L; ++t) acc += dzo[t] * src[t];
                        gw[wbase + k] += static_cast<double>(acc);
                        if (need_dx) {
                            const Real wv = w[wbase + k];
                            Real* dst = drow + k;
                            for (int t = 0; t < L; ++t) dst[t] += wv * dzo[t];
                        }
                    }
                }
            }
            if (need_dx) {
                // Unpad into da for the previous layer.
                for (int c = 0; c < p.in_channels; ++c)
                    for (int t = 0; t < p.in_len; ++t)
                        da[static_cast<std::size_t>(c) * p.in_len + t] = dpad[static_cast<std::size_t>(c) * padded + pad + t];
            }
        } else {
            const int n_in = p.in_size();
            if (need_dx) std::fill(dx, dx + n_in, Real(0));
            for (int o = 0; o < p.out_len; ++o) {
                const Real g = dz[o];
                gb[o] += static_cast<double>(g);
                if (g == Real(0)) continue;
                double* gwo = gw + static_cast<std::size_t>(o) * n_in;
                const Real* wo = w + static_cast<std::size_t>(o) * n_in;
                for (int i = 0; i < n_in; ++i) gwo[i] += static_cast<double>(g * in[i]);
                if (need_dx)
                    for (int i = 0; i < n_in; ++i) dx[i] += g * wo[i];
            }
            if (need_dx) std::copy(dx, dx + n_in, da);
        }
    }
}

template <typename Real>
std::vector<Real> convert_params(const ParameterVector& params) {
    return std::vector<Real>(params.values.begin(), params.values.end());
}

inline void check_batch(const NetworkSpec& spec, const ParameterVector& params, const Batch& batch) {
    if (params.size() != spec.parameter_count())
        throw ContractError("parameter vector length " + std::to_string(params.size()) + " does not match spec (" +
                            std::to_string(spec.parameter_count()) + ")");
    if (batch.targets.size() != batch.inputs.size()) throw ContractError("batch inputs and targets differ in length");
    for (const auto& in : batch.inputs)
        if (in.size() != spec.input_size())
            throw ContractError("batch sample has " + std::to_string(in.size()) + " values, expected " +
                                std::to_string(spec.input_size()));
}

}  // namespace detail

/// Predictions computed in arithmetic type Real (float for production, double as a shadow).
template <typename Real>
std::vector<Real> forward_as(const NetworkSpec& spec, const ParameterVector& params, const Batch& batch, bool training,
                             std::uint64_t rng_seed) {
    detail::check_batch(spec, params, batch);
    const auto p = detail::convert_params<Real>(params);
    detail::Workspace<Real> ws(spec);
    std::vector<Real> out(batch.size());
    for (std::size_t j = 0; j < batch.size(); ++j)
        out[j] = detail::forward_sample<Real>(spec, p, batch.inputs[j], training, rng_seed, j, ws);
    return out;
}

/// Same as forward_as but with parameters given directly in type Real.
template <typename Real>
Real loss_as(const NetworkSpec& spec, std::span<const Real> params, const Batch& batch, bool training,
             std::uint64_t rng_seed) {
    detail::Workspace<Real> ws(spec);
    double sse = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const double r = static_cast<double>(
                             detail::forward_sample<Real>(spec, params, batch.inputs[j], training, rng_seed, j, ws)) -
                         static_cast<double>(batch.targets[j]);
        sse += r * r;
    }
    return static_cast<Real>(std::sqrt(sse / static_cast<double>(batch.size())));
}

inline std::vector<float> forward(const NetworkSpec& spec, const ParameterVector& params, const Batch& batch,
                                  bool training, std::uint64_t rng_seed) {
    return forward_as<float>(spec, params, batch, training, rng_seed);
}

struct LossAndGradient64 {
    double loss = 0.0;
    std::vector<double> gradient;
};

/// RMSE over the batch and its exact gradient in 64-bit accumulation. Dropout
/// masks are shared between the forward and backward pass through rng_seed.
template <typename Real>
LossAndGradient64 loss_and_gradient_as(const NetworkSpec& spec, const ParameterVector& params, const Batch& batch,
                                       bool training, std::uint64_t rng_seed) {
    detail::check_batch(spec, params, batch);
    require(batch.size() > 0, "backward: empty batch");
    const auto p = detail::convert_params<Real>(params);
    const std::size_t n = batch.size();
    detail::Workspace<Real> ws(spec);

    // d RMSE / d yhat_j = r_j / (n * RMSE); the r_j part is backpropagated per
    // sample and the common factor applied once the loss is known.
    LossAndGradient64 out;
    out.gradient.assign(spec.parameter_count(), 0.0);
    double sse = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double r =
            static_cast<double>(detail::forward_sample<Real>(spec, p, batch.inputs[j], training, rng_seed, j, ws)) -
            static_cast<double>(batch.targets[j]);
        sse += r * r;
        if (r != 0.0) detail::backward_sample<Real>(spec, p, ws, static_cast<Real>(r), out.gradient);
    }
    out.loss = std::sqrt(sse / static_cast<double>(n));
    const double scale = out.loss > 0.0 ? 1.0 / (static_cast<double>(n) * out.loss) : 0.0;
    for (double& g : out.gradient) g *= scale;
    return out;
}

template <typename Real>
LossAndGradient backward_as(const NetworkSpec& spec, const ParameterVector& params, const Batch& batch, bool training,
                            std::uint64_t rng_seed) {
    auto lg = loss_and_gradient_as<Real>(spec, params, batch, training, rng_seed);
    LossAndGradient out;
    out.loss = lg.loss;
    out.gradient.values.assign(lg.gradient.begin(), lg.gradient.end());
    out.gradient.layout = params.layout.empty() ? spec.layout() : params.layout;
    return out;
}

inline LossAndGradient backward(const NetworkSpec& spec, const ParameterVector& params, const Batch& batch,
                                bool training, std::uint64_t rng_seed) {
    return backward_as<float>(spec, params, batch, training, rng_seed);
}

}  // namespace fedrul::nn
