#pragma once

#include <cmath>
#include <span>

#include "fedrul/util/error.hpp"

namespace fedrul::nn {

/// Sum of squared errors. An empty input sums to 0 so per-client sums compose.
inline double sse_loss(std::span<const float> predictions, std::span<const float> targets) {
    require(predictions.size() == targets.size(), "sse_loss: predictions and targets differ in length");
    double sum = 0.0;
    for (std::size_t j = 0; j < predictions.size(); ++j) {
        const double r = static_cast<double>(predictions[j]) - static_cast<double>(targets[j]);
        sum += r * r;
    }
    return sum;
}

inline double rmse(std::span<const float> predictions, std::span<const float> targets) {
    require(predictions.size() == targets.size(), "rmse: predictions and targets differ in length");
    require(!predictions.empty(), "rmse: empty input");
    return std::sqrt(sse_loss(predictions, targets) / static_cast<double>(predictions.size()));
}

}  // namespace fedrul::nn
