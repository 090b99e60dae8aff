#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fedrul/agg/aggregation.hpp"
#include "fedrul/data/flight.hpp"
#include "fedrul/data/transform.hpp"
#include "fedrul/nn/network.hpp"
#include "fedrul/util/error.hpp"

namespace fedrul::fl {

enum class Metric { RMSE, SSE };

inline constexpr std::size_t kEvalChunk = 256;

/// Eval-mode predictions for a list of windows, computed in chunks.
inline std::vector<float> predict_windows(const nn::NetworkSpec& spec, const nn::ParameterVector& params,
                                          std::span<const data::WindowSample> windows) {
    std::vector<float> out;
    out.reserve(windows.size());
    for (std::size_t lo = 0; lo < windows.size(); lo += kEvalChunk) {
        const std::size_t hi = std::min(windows.size(), lo + kEvalChunk);
        nn::Batch b;
        for (std::size_t i = lo; i < hi; ++i) {
            b.inputs.emplace_back(windows[i].values);
            b.targets.push_back(static_cast<float>(windows[i].rul_label));
        }
        const auto pred = nn::forward(spec, params, b, false, 0);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

/// Sum of squared residuals in window order, accumulated in double.
inline double sse_over_windows(const nn::NetworkSpec& spec, const nn::ParameterVector& params,
                               std::span<const data::WindowSample> windows) {
    const auto pred = predict_windows(spec, params, windows);
    double sse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double r = static_cast<double>(pred[i]) - static_cast<double>(windows[i].rul_label);
        sse += r * r;
    }
    return sse;
}

inline double evaluate_windows(const nn::NetworkSpec& spec, const nn::ParameterVector& params,
                               std::span<const data::WindowSample> windows, Metric metric) {
    if (windows.empty()) throw ContractError("evaluation on an empty validation set");
    const double sse = sse_over_windows(spec, params, windows);
    return metric == Metric::SSE ? sse : std::sqrt(sse / static_cast<double>(windows.size()));
}

/// Loss of `params` on the client's own validation windows, dropout disabled.
inline double evaluate_model_on_validation(const nn::NetworkSpec& spec, const nn::ParameterVector& params,
                                           const data::ClientDataset& dataset, Metric metric) {
    return evaluate_windows(spec, params, dataset.validation_windows, metric);
}

/// Flight-level RUL: median of the per-window predictions over one
/// normalized flight.
inline double predict_flight_rul(const nn::NetworkSpec& spec, const nn::ParameterVector& params,
                                 const data::FlightSeries& normalized, const data::WindowConfig& window = {}) {
    const auto windows = data::window_extract(normalized, window);
    if (windows.empty())
        throw ContractError("flight " + std::to_string(normalized.flight_index) + " of engine " +
                            std::to_string(normalized.engine_id) + " is too short for one window");
    const auto pred = predict_windows(spec, params, windows);
    return agg::median(std::vector<double>(pred.begin(), pred.end()));
}

}  // namespace fedrul::fl
