#pragma once

// Flight CSV files: UTF-8, header `engine_id,flight_index,step,ch_1,...,ch_H`,
// one row per time step, `step` 1-based within each flight.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedrul/data/flight.hpp"
#include "fedrul/util/error.hpp"

namespace fedrul::data {

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view text, T& value) {
    if (text.empty()) return false;
    if (text.front() == '+') text.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace detail

/// Parses one or more flight CSV files. Rows of a flight must have strictly
/// increasing steps; flights may appear in any order and across files.
/// RUL labels count flights remaining until the engine's last flight.
inline std::vector<FlightSeries> csv_ingest(const std::vector<std::filesystem::path>& paths) {
    struct Pending {
        std::vector<float> values;
        int last_step = 0;
        std::string file;
    };
    std::map<std::pair<int, int>, Pending> flights;
    int channels = -1;

    for (const auto& path : paths) {
        const std::string name = path.string();
        std::ifstream in(path);
        if (!in) throw IngestError(name, 0, "cannot open file");

        std::string line;
        std::size_t row = 0;
        if (!std::getline(in, line)) throw IngestError(name, 1, "missing header row");
        ++row;
        if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
        const auto header = detail::split_fields(line);
        if (header.size() < 4 || header[0] != "engine_id" || header[1] != "flight_index" || header[2] != "step")
            throw IngestError(name, row, "header must start with engine_id,flight_index,step and name channel columns");
        const int file_channels = static_cast<int>(header.size()) - 3;
        if (channels < 0) channels = file_channels;
        if (file_channels != channels)
            throw IngestError(name, row,
                              "file has " + std::to_string(file_channels) + " channels, expected " +
                                  std::to_string(channels));

        while (std::getline(in, line)) {
            ++row;
            if (line.empty() || line == "\r") continue;
            const auto fields = detail::split_fields(line);
            if (static_cast<int>(fields.size()) != channels + 3)
                throw IngestError(name, row,
                                  "expected " + std::to_string(channels + 3) + " columns, found " +
                                      std::to_string(fields.size()));
            int engine = 0, flight = 0, step = 0;
            if (!detail::parse_number(fields[0], engine)) throw IngestError(name, row, "bad engine_id");
            if (!detail::parse_number(fields[1], flight) || flight < 1) throw IngestError(name, row, "bad flight_index");
            if (!detail::parse_number(fields[2], step) || step < 1) throw IngestError(name, row, "bad step");

            auto& p = flights[{engine, flight}];
            if (p.file.empty()) p.file = name;
            if (step <= p.last_step)
                throw IngestError(name, row,
                                  "non-monotonic step " + std::to_string(step) + " after " + std::to_string(p.last_step));
            p.last_step = step;
            for (int h = 0; h < channels; ++h) {
                float v = 0.0f;
                if (!detail::parse_number(fields[3 + h], v))
                    throw IngestError(name, row, "bad value in column " + std::string(header[3 + h]));
                p.values.push_back(v);
            }
        }
    }

    std::map<int, int> last_flight;
    for (const auto& [key, _] : flights) last_flight[key.first] = std::max(last_flight[key.first], key.second);

    std::vector<FlightSeries> out;
    out.reserve(flights.size());
    for (auto& [key, p] : flights) {
        FlightSeries f;
        f.engine_id = key.first;
        f.flight_index = key.second;
        f.channels = channels;
        f.measurements = std::move(p.values);
        f.rul_label = last_flight[key.first] - key.second;
        out.push_back(std::move(f));
    }
    return out;
}

inline std::vector<FlightSeries> csv_ingest(const std::filesystem::path& path) {
    return csv_ingest(std::vector<std::filesystem::path>{path});
}

/// Splits ingested flights into engines, ordered by engine id then flight.
inline std::vector<Engine> group_by_engine(std::vector<FlightSeries> flights) {
    std::stable_sort(flights.begin(), flights.end(), [](const FlightSeries& a, const FlightSeries& b) {
        return std::pair(a.engine_id, a.flight_index) < std::pair(b.engine_id, b.flight_index);
    });
    std::vector<Engine> engines;
    for (auto& f : flights) {
        if (engines.empty() || engines.back().front().engine_id != f.engine_id) engines.emplace_back();
        engines.back().push_back(std::move(f));
    }
    return engines;
}

/// Writes flights in the ingest schema. Floats use 9 significant digits so
/// they read back bit-exactly.
inline void csv_emit(const std::filesystem::path& path, std::span<const FlightSeries> flights) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    const int H = flights.empty() ? 0 : flights.front().channels;
    out << "engine_id,flight_index,step";
    for (int h = 1; h <= H; ++h) out << ",ch_" << h;
    out << '\n';
    char buf[64];
    for (const auto& f : flights) {
        require(f.channels == H, "csv_emit: flights disagree on channel count");
        for (int s = 0; s < f.steps(); ++s) {
            out << f.engine_id << ',' << f.flight_index << ',' << (s + 1);
            for (int h = 0; h < H; ++h) {
                std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(f.at(s, h)));
                out << buf;
            }
            out << '\n';
        }
    }
    if (!out) throw Error("failed writing " + path.string());
}

}  // namespace fedrul::data
