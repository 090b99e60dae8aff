#pragma once

// Run-to-failure generator for turbofan-like engines. Each flight follows a
// climb/cruise/descent profile over four operating-condition channels
// (altitude, Mach, throttle angle, inlet temperature); thirteen sensor
// channels respond smoothly to the conditions plus a degradation offset
// driven by a per-engine health index.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fedrul/data/flight.hpp"
#include "fedrul/util/error.hpp"
#include "fedrul/util/random.hpp"

namespace fedrul::data {

inline constexpr int kConditionChannels = 4;
inline constexpr int kSensorChannels = 13;
inline constexpr int kChannels = kConditionChannels + kSensorChannels;

struct SynthProfile {
    int min_flights = 40;
    int max_flights = 90;
    /// Long-haul flight length in 20-second means.
    int steps_per_flight = 590;
    double climb_fraction = 0.25;
    double descent_fraction = 0.2;
    /// Per-step measurement noise as a fraction of each sensor's response scale.
    double measurement_noise = 0.005;
    /// Degradation shift at end of life as a fraction of each sensor's response scale.
    double degradation_magnitude = 0.2;
    /// Weight of the linear part of the health index; the rest is the
    /// exponential acceleration towards failure.
    double linear_share = 0.25;
    /// Time constant (flights) of the accelerating part.
    double acceleration_flights = 18.0;
    /// Sensor offset spread between engines, as a fraction of the response scale.
    double manufacturing_spread = 0.01;
    /// Half-width of the per-engine wear-rate multiplier around 1.
    double wear_spread = 0.05;
};

/// Sensor channels shifted by each fault mode (indices into the 13 sensors).
inline constexpr std::array<int, 5> kFaultMode1Sensors = {0, 1, 2, 3, 4};
inline constexpr std::array<int, 5> kFaultMode2Sensors = {6, 7, 8, 9, 10};

inline int fault_mode_of(int engine_index) { return engine_index % 2 == 0 ? 1 : 2; }

/// Sensor channels (as absolute channel indices) affected by a fault mode.
inline std::vector<int> affected_channels(int fault_mode) {
    std::vector<int> out;
    const auto& set = fault_mode == 1 ? kFaultMode1Sensors : kFaultMode2Sensors;
    for (int s : set) out.push_back(kConditionChannels + s);
    return out;
}

/// Health index in [0, 1] for an engine `rul` flights from failure: linear
/// wear against the longest possible life plus an exponential term that
/// accelerates near failure. It depends on RUL alone, so the same reading
/// means the same RUL on every engine and short-lived engines start worn.
inline double health_index(int rul, const SynthProfile& p) {
    const double worn = std::clamp(1.0 - static_cast<double>(rul) / p.max_flights, 0.0, 1.0);
    return p.linear_share * worn + (1.0 - p.linear_share) * std::exp(-rul / p.acceleration_flights);
}

namespace detail {

struct SensorModel {
    double base;
    double throttle;
    double altitude;
    double mach;
    double throttle_sq;
    double scale;
};

// Rough magnitudes of temperatures, pressures and shaft speeds.
inline const std::array<SensorModel, kSensorChannels>& sensor_models() {
    static const std::array<SensorModel, kSensorChannels> models = {{
        {560.0, 90.0, -40.0, 20.0, 25.0, 120.0},      // T24
        {1250.0, 330.0, -120.0, 60.0, 90.0, 420.0},   // T30
        {1500.0, 480.0, -90.0, 40.0, 160.0, 600.0},   // T48
        {1080.0, 260.0, -70.0, 30.0, 80.0, 320.0},    // T50
        {15.0, 9.0, -3.0, 3.0, 2.0, 12.0},           // P15
        {14.0, 1.0, -9.0, 4.5, 0.0, 10.0},            // P2
        {15.5, 8.0, -3.0, 3.5, 2.0, 12.0},            // P21
        {22.0, 15.0, -5.0, 4.0, 4.0, 20.0},         // P24
        {180.0, 260.0, -110.0, 30.0, 60.0, 300.0},   // Ps30
        {190.0, 270.0, -115.0, 32.0, 62.0, 310.0},   // P40
        {9.0, 7.0, -2.0, 1.5, 1.5, 8.0},              // P50
        {1500.0, 700.0, -150.0, 120.0, 120.0, 850.0},  // Nf
        {7000.0, 1800.0, -300.0, 200.0, 300.0, 2000.0},  // Nc
    }};
    return models;
}

}  // namespace detail

/// Generates `n_engines` run-to-failure engines (ids 1..n). Every engine gets
/// a seeded flight count in [min_flights, max_flights]; the last flight has
/// RUL 0. Engines with even index fail by fault mode 1, odd by fault mode 2.
inline std::vector<Engine> synth_generate(int n_engines, std::uint64_t seed, const SynthProfile& profile = {},
                                          int first_engine_id = 1) {
    require(n_engines >= 1, "synth_generate: need at least one engine");
    require(profile.min_flights >= 2 && profile.max_flights >= profile.min_flights,
            "synth_generate: invalid flight-count range");
    require(profile.steps_per_flight >= 3, "synth_generate: flights need at least 3 steps");
    require(profile.climb_fraction > 0 && profile.descent_fraction > 0 &&
                profile.climb_fraction + profile.descent_fraction < 1.0,
            "synth_generate: climb and descent fractions must leave a cruise phase");

    const auto& models = detail::sensor_models();
    std::vector<Engine> engines;
    engines.reserve(static_cast<std::size_t>(n_engines));

    for (int e = 0; e < n_engines; ++e) {
        const int engine_index = first_engine_id - 1 + e;
        Rng rng(derive_seed(seed, 0xE9, static_cast<std::uint64_t>(engine_index)));
        const int F = static_cast<int>(rng.uniform_int(profile.min_flights, profile.max_flights));
        const int mode = fault_mode_of(engine_index);
        const auto affected = affected_channels(mode);

        // Engine-to-engine manufacturing spread.
        std::array<double, kSensorChannels> offset{};
        for (int k = 0; k < kSensorChannels; ++k) offset[k] = rng.normal(0.0, profile.manufacturing_spread) * models[k].scale;
        const double wear_rate = rng.uniform(1.0 - profile.wear_spread, 1.0 + profile.wear_spread);

        Engine engine;
        engine.reserve(static_cast<std::size_t>(F));
        const int M = profile.steps_per_flight;
        const int climb = std::max(1, static_cast<int>(std::lround(profile.climb_fraction * M)));
        const int descent = std::max(1, static_cast<int>(std::lround(profile.descent_fraction * M)));
        const int cruise_end = M - descent;

        for (int f = 1; f <= F; ++f) {
            FlightSeries fl;
            fl.engine_id = engine_index + 1;
            fl.flight_index = f;
            fl.channels = kChannels;
            fl.rul_label = F - f;
            fl.measurements.assign(static_cast<std::size_t>(M) * kChannels, 0.0f);

            const double cruise_alt = rng.uniform(0.8, 1.0);   // fraction of 40,000 ft
            const double cruise_mach = rng.uniform(0.74, 0.82);
            const double cruise_tra = rng.uniform(0.62, 0.72);
            const double ambient = rng.uniform(-5.0, 5.0);     // deg R deviation at sea level
            const double hi = std::min(1.0, wear_rate * health_index(F - f, profile));

            for (int s = 0; s < M; ++s) {
                double alt, mach, tra, wear_weight;
                if (s < climb) {
                    const double u = static_cast<double>(s + 1) / climb;
                    wear_weight = u * u;
                    alt = cruise_alt * u;
                    mach = 0.25 + (cruise_mach - 0.25) * u;
                    tra = 0.95 - (0.95 - cruise_tra) * u * u;
                } else if (s < cruise_end) {
                    const double u = static_cast<double>(s - climb) / std::max(1, cruise_end - climb);
                    alt = cruise_alt * (1.0 + 0.01 * std::sin(2.0 * 3.141592653589793 * u));
                    mach = cruise_mach;
                    tra = cruise_tra;
                    wear_weight = 1.0;
                } else {
                    const double u = static_cast<double>(s - cruise_end + 1) / descent;
                    alt = cruise_alt * (1.0 - u);
                    mach = cruise_mach - (cruise_mach - 0.3) * u;
                    tra = cruise_tra - (cruise_tra - 0.1) * u;
                    wear_weight = (1.0 - u) * (1.0 - u);
                }
                const double t2 = 519.0 + ambient - 60.0 * alt + 25.0 * mach * mach;

                fl.at(s, 0) = static_cast<float>(alt * 40000.0);
                fl.at(s, 1) = static_cast<float>(mach);
                fl.at(s, 2) = static_cast<float>(tra * 100.0);
                fl.at(s, 3) = static_cast<float>(t2);

                for (int k = 0; k < kSensorChannels; ++k) {
                    const auto& m = models[k];
                    double v = m.base + offset[k] + m.throttle * tra + m.altitude * alt + m.mach * mach +
                               m.throttle_sq * tra * tra;
                    const int channel = kConditionChannels + k;
                    // Ground idle sets the bottom of each sensor's range and the takeoff
                    // peak the top, with cruise in between. Wear lifts cruise and fades
                    // out towards both ends of the flight, so an engine's min/max come
                    // from its operating conditions and not from how worn it is.
                    if (std::find(affected.begin(), affected.end(), channel) != affected.end())
                        v += profile.degradation_magnitude * m.scale * hi * wear_weight;
                    v += rng.normal(0.0, profile.measurement_noise * m.scale);
                    fl.at(s, channel) = static_cast<float>(v);
                }
            }
            engine.push_back(std::move(fl));
        }
        engines.push_back(std::move(engine));
    }
    return engines;
}

}  // namespace fedrul::data
