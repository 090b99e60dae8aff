#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedrul/data/flight.hpp"
#include "fedrul/util/error.hpp"
#include "fedrul/util/log.hpp"
#include "fedrul/util/random.hpp"

namespace fedrul::data {

/// Replaces consecutive non-overlapping buckets of `bucket` steps by their
/// per-channel mean. A trailing partial bucket is averaged over its own length.
inline FlightSeries aggregate_mean(const FlightSeries& series, int bucket) {
    require(bucket >= 1, "aggregate_mean: bucket must be at least 1");
    if (bucket == 1) return series;
    FlightSeries out = series;
    const int H = series.channels;
    const int M = series.steps();
    const int buckets = (M + bucket - 1) / bucket;
    out.measurements.assign(static_cast<std::size_t>(buckets) * H, 0.0f);
    std::vector<double> acc(H);
    for (int b = 0; b < buckets; ++b) {
        const int begin = b * bucket;
        const int end = std::min(M, begin + bucket);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int s = begin; s < end; ++s)
            for (int h = 0; h < H; ++h) acc[h] += series.at(s, h);
        for (int h = 0; h < H; ++h) out.at(b, h) = static_cast<float>(acc[h] / (end - begin));
    }
    return out;
}

inline NormalizationStats minmax_fit(std::span<const FlightSeries> flights) {
    require(!flights.empty(), "minmax_fit: no flights");
    const int H = flights.front().channels;
    NormalizationStats stats{std::vector<float>(H, std::numeric_limits<float>::infinity()),
                             std::vector<float>(H, -std::numeric_limits<float>::infinity())};
    for (const auto& f : flights) {
        require(f.channels == H, "minmax_fit: flights disagree on channel count");
        for (int s = 0; s < f.steps(); ++s)
            for (int h = 0; h < H; ++h) {
                stats.min[h] = std::min(stats.min[h], f.at(s, h));
                stats.max[h] = std::max(stats.max[h], f.at(s, h));
            }
    }
    return stats;
}

/// Elementwise min/max of several fits; equals a fit over the union of their flights.
inline NormalizationStats merge_stats(std::span<const NormalizationStats> parts) {
    require(!parts.empty(), "merge_stats: nothing to merge");
    NormalizationStats out = parts.front();
    for (const auto& p : parts.subspan(1)) {
        require(p.channels() == out.channels(), "merge_stats: channel count mismatch");
        for (std::size_t h = 0; h < out.channels(); ++h) {
            out.min[h] = std::min(out.min[h], p.min[h]);
            out.max[h] = std::max(out.max[h], p.max[h]);
        }
    }
    return out;
}

/// x' = 2 (x - min) / (max - min) - 1; constant channels map to 0. Values
/// outside the fitted range are not clamped.
inline FlightSeries minmax_apply(const FlightSeries& series, const NormalizationStats& stats) {
    require(stats.channels() == static_cast<std::size_t>(series.channels), "minmax_apply: channel count mismatch");
    FlightSeries out = series;
    const int H = series.channels;
    for (int s = 0; s < series.steps(); ++s)
        for (int h = 0; h < H; ++h) {
            const double lo = stats.min[h];
            const double hi = stats.max[h];
            out.at(s, h) = hi > lo ? static_cast<float>(2.0 * (series.at(s, h) - lo) / (hi - lo) - 1.0) : 0.0f;
        }
    return out;
}

inline std::vector<FlightSeries> minmax_apply(std::span<const FlightSeries> flights, const NormalizationStats& stats) {
    std::vector<FlightSeries> out;
    out.reserve(flights.size());
    for (const auto& f : flights) out.push_back(minmax_apply(f, stats));
    return out;
}

/// Inverse of minmax_apply for non-degenerate channels.
inline float minmax_invert(float normalized, const NormalizationStats& stats, int h) {
    const double lo = stats.min[h];
    const double hi = stats.max[h];
    if (!(hi > lo)) return static_cast<float>(lo);
    return static_cast<float>((static_cast<double>(normalized) + 1.0) * 0.5 * (hi - lo) + lo);
}

/// Windows start at steps 1, 1+stride, ... while the window fits in the flight.
inline std::vector<WindowSample> window_extract(const FlightSeries& series, const WindowConfig& cfg = {}) {
    require(cfg.length >= 1 && cfg.stride >= 1, "window_extract: length and stride must be positive");
    std::vector<WindowSample> out;
    const int M = series.steps();
    if (M < cfg.length) {
        log::warn("engine " + std::to_string(series.engine_id) + " flight " + std::to_string(series.flight_index) +
                  " has " + std::to_string(M) + " steps, fewer than the window length " + std::to_string(cfg.length));
        return out;
    }
    const auto H = static_cast<std::size_t>(series.channels);
    for (int s = 1; s + cfg.length - 1 <= M; s += cfg.stride) {
        WindowSample w;
        w.engine_id = series.engine_id;
        w.flight_index = series.flight_index;
        w.start_step = s;
        w.rul_label = series.rul_label;
        const auto begin = series.measurements.begin() + static_cast<std::ptrdiff_t>((s - 1) * H);
        w.values.assign(begin, begin + static_cast<std::ptrdiff_t>(cfg.length * H));
        out.push_back(std::move(w));
    }
    return out;
}

inline std::vector<WindowSample> window_extract(std::span<const FlightSeries> flights, const WindowConfig& cfg = {}) {
    std::vector<WindowSample> out;
    for (const auto& f : flights) {
        auto w = window_extract(f, cfg);
        out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return out;
}

inline std::size_t validation_count(std::size_t flights, double val_fraction) {
    const auto k = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(flights)));
    return std::clamp<std::size_t>(k, 1, flights - 1);
}

struct FlightSplit {
    std::vector<FlightSeries> train;
    std::vector<FlightSeries> validation;
};

/// Seeded uniform sample of round(val_fraction * F) flights (at least one)
/// for validation. Both parts keep the input order.
inline FlightSplit split_flights(std::span<const FlightSeries> flights, double val_fraction, std::uint64_t seed) {
    if (flights.size() < 2) throw ContractError("split_flights: at least 2 flights are required");
    require(val_fraction > 0.0 && val_fraction < 1.0, "split_flights: validation fraction must be in (0,1)");
    std::vector<std::size_t> order(flights.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0x5B11));
    rng.shuffle(order);
    std::vector<bool> is_val(flights.size(), false);
    const std::size_t k = validation_count(flights.size(), val_fraction);
    for (std::size_t i = 0; i < k; ++i) is_val[order[i]] = true;
    FlightSplit out;
    for (std::size_t i = 0; i < flights.size(); ++i) (is_val[i] ? out.validation : out.train).push_back(flights[i]);
    return out;
}

/// Per-channel standard deviation over all steps of all given flights.
inline std::vector<double> channel_stddev(std::span<const FlightSeries> flights) {
    if (flights.empty()) return {};
    const int H = flights.front().channels;
    std::vector<double> mean(H, 0.0), m2(H, 0.0);
    std::size_t n = 0;
    // Welford, for stability on large raw magnitudes.
    for (const auto& f : flights)
        for (int s = 0; s < f.steps(); ++s) {
            ++n;
            for (int h = 0; h < H; ++h) {
                const double x = f.at(s, h);
                const double d = x - mean[h];
                mean[h] += d / static_cast<double>(n);
                m2[h] += d * (x - mean[h]);
            }
        }
    std::vector<double> out(H, 0.0);
    if (n > 0)
        for (int h = 0; h < H; ++h) out[h] = std::sqrt(m2[h] / static_cast<double>(n));
    return out;
}

/// Adds N(0, alpha * sigma_h) to every raw measurement of one engine, where
/// sigma_h is channel h's standard deviation over the whole engine.
inline std::vector<FlightSeries> inject_noise(std::span<const FlightSeries> flights, double alpha, std::uint64_t seed) {
    require(alpha >= 0.0, "inject_noise: alpha must be non-negative");
    std::vector<FlightSeries> out(flights.begin(), flights.end());
    if (alpha == 0.0 || flights.empty()) return out;
    const auto sigma = channel_stddev(flights);
    Rng rng(derive_seed(seed, 0x9015E));
    for (auto& f : out)
        for (int s = 0; s < f.steps(); ++s)
            for (int h = 0; h < f.channels; ++h) {
                const double sd = alpha * sigma[h];
                const double noise = rng.normal();
                if (sd > 0.0) f.at(s, h) = static_cast<float>(f.at(s, h) + sd * noise);
            }
    return out;
}

struct DatasetOptions {
    double val_fraction = 0.2;
    WindowConfig window;
    std::uint64_t split_seed = 0;
};

/// Fit, normalize, split by flight, then window each partition. When `stats`
/// is given it is used verbatim instead of the client's own fit.
inline ClientDataset build_client_dataset(int client_id, std::span<const FlightSeries> flights,
                                          const DatasetOptions& opts,
                                          const std::optional<NormalizationStats>& stats = std::nullopt) {
    ClientDataset ds;
    ds.client_id = client_id;
    ds.stats = stats ? *stats : minmax_fit(flights);
    const auto normalized = minmax_apply(flights, ds.stats);
    auto split = split_flights(normalized, opts.val_fraction, opts.split_seed);
    ds.training_windows = window_extract(split.train, opts.window);
    ds.validation_windows = window_extract(split.validation, opts.window);
    ds.training_flights = std::move(split.train);
    ds.validation_flights = std::move(split.validation);
    return ds;
}

}  // namespace fedrul::data
