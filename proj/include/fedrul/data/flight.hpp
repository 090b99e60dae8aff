#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedrul/util/error.hpp"

namespace fedrul::data {

/// Multichannel measurements of one flight, stored step-major
/// (`measurements[step * channels + h]`). Flight indices are 1-based.
struct FlightSeries {
    int engine_id = 0;
    int flight_index = 1;
    int channels = 0;
    std::vector<float> measurements;
    int rul_label = 0;

    int steps() const noexcept { return channels == 0 ? 0 : static_cast<int>(measurements.size()) / channels; }
    float at(int step, int h) const { return measurements[static_cast<std::size_t>(step) * channels + h]; }
    float& at(int step, int h) { return measurements[static_cast<std::size_t>(step) * channels + h]; }
    std::span<const float> row(int step) const {
        return {measurements.data() + static_cast<std::size_t>(step) * channels, static_cast<std::size_t>(channels)};
    }

    bool operator==(const FlightSeries&) const = default;
};

using Engine = std::vector<FlightSeries>;

struct NormalizationStats {
    std::vector<float> min;
    std::vector<float> max;

    std::size_t channels() const noexcept { return min.size(); }
    bool operator==(const NormalizationStats&) const = default;
};

struct WindowSample {
    int engine_id = 0;
    int flight_index = 0;
    int start_step = 1;  // 1-based, first step of the window within the flight
    std::vector<float> values;  // length x channels, step-major
    int rul_label = 0;

    bool operator==(const WindowSample&) const = default;
};

struct WindowConfig {
    int length = 50;
    int stride = 10;
};

struct ClientDataset {
    int client_id = 0;
    std::vector<WindowSample> training_windows;
    std::vector<WindowSample> validation_windows;
    std::vector<FlightSeries> training_flights;
    std::vector<FlightSeries> validation_flights;
    NormalizationStats stats;

    std::size_t n_train() const noexcept { return training_windows.size(); }
};

}  // namespace fedrul::data
