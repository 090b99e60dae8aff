#pragma once

// Result tables: CSV emission for ResultRows and selection counts, per-run
// summaries of the aggregation history, and the noise sweep.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedrul/bench/experiment.hpp"

namespace fedrul::bench {

namespace detail {

inline std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

/// Writes next to the target and renames over it, so readers never see a
/// half-written table.
inline void write_atomically(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + path.string());
        out << text;
        out.flush();
        if (!out) {
            out.close();
            std::error_code ignored;
            std::filesystem::remove(tmp, ignored);
            throw Error("failed writing " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error("cannot replace " + path.string());
    }
}

}  // namespace detail

/// Results table text. Per-engine columns follow the union of engine ids
/// in ascending order; a row without an engine leaves its cells empty.
inline std::string results_csv(const std::vector<ResultRow>& rows) {
    std::set<int> engines;
    for (const auto& r : rows)
        for (const auto& [id, v] : r.per_engine) engines.insert(id);
    std::ostringstream out;
    out << "scenario,method,alpha";
    for (int id : engines) out << ",engine_" << id << "_rmse,engine_" << id << "_mae";
    out << ",overall_rmse,overall_mae,best_epoch,status,config_hash\n";
    for (const auto& r : rows) {
        out << r.scenario << ',' << r.method << ',' << detail::fixed4(r.alpha);
        for (int id : engines) {
            const auto it = r.per_engine.find(id);
            if (it == r.per_engine.end())
                out << ",,";
            else
                out << ',' << detail::fixed4(it->second.first) << ',' << detail::fixed4(it->second.second);
        }
        const bool ok = r.status == "ok";
        out << ',' << (ok ? detail::fixed4(r.overall_rmse) : "") << ',' << (ok ? detail::fixed4(r.overall_mae) : "")
            << ',' << r.best_epoch << ',' << r.status << ',' << r.config_hash << '\n';
    }
    return out.str();
}

inline void emit_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path) {
    detail::write_atomically(path, results_csv(rows));
}

/// Epochs in which each client's model became the global model.
using SelectionEpochs = std::map<int, std::vector<std::uint32_t>>;

/// Every registered client appears, selected or not.
inline SelectionEpochs selection_epochs(const fl::ServerState& state) {
    SelectionEpochs out;
    for (const auto& c : state.client_registry) out[c.client_id];
    for (const auto& r : state.history)
        if (const auto* s = std::get_if<fl::SelectedClient>(&r.weights_or_selection))
            out[s->client_id].push_back(r.epoch);
    return out;
}

/// Softmax weight of each client averaged over all epochs.
inline std::map<int, double> mean_softmax_weights(const fl::ServerState& state) {
    std::map<int, double> out;
    std::size_t epochs = 0;
    for (const auto& r : state.history) {
        const auto* w = std::get_if<agg::ClientWeights>(&r.weights_or_selection);
        if (!w) continue;
        ++epochs;
        for (std::size_t i = 0; i < w->alpha.size(); ++i) out[state.client_registry[i].client_id] += w->alpha[i];
    }
    for (auto& [id, v] : out) v /= static_cast<double>(epochs);
    return out;
}

struct SelectionRow {
    std::string method;
    double alpha = 0.0;
    int client_id = 0;
    std::vector<std::uint32_t> epochs;
    std::string config_hash;
};

inline std::vector<SelectionRow> selection_rows(const ExperimentConfig& c, const fl::ServerState& state) {
    std::vector<SelectionRow> rows;
    for (auto& [id, epochs] : selection_epochs(state))
        rows.push_back({std::string(agg::to_string(state.method)), c.noise_alpha, id, epochs, config_hash(c)});
    return rows;
}

/// Selection table text; the epoch list is space separated.
inline std::string selections_csv(const std::vector<SelectionRow>& rows) {
    std::ostringstream out;
    out << "method,alpha,client_id,selected,epochs,config_hash\n";
    for (const auto& r : rows) {
        out << r.method << ',' << detail::fixed4(r.alpha) << ',' << r.client_id << ',' << r.epochs.size() << ',';
        for (std::size_t i = 0; i < r.epochs.size(); ++i) out << (i ? " " : "") << r.epochs[i];
        out << ',' << r.config_hash << '\n';
    }
    return out.str();
}

inline void emit_selection_csv(const std::vector<SelectionRow>& rows, const std::filesystem::path& path) {
    detail::write_atomically(path, selections_csv(rows));
}

inline const std::vector<double>& default_sweep_alphas() {
    static const std::vector<double> alphas = {0.0, 0.1, 0.5, 0.7, 1.0, 2.0};
    return alphas;
}

struct SweepResult {
    std::vector<ResultRow> rows;
    std::vector<SelectionRow> selections;
};

/// Runs every (alpha, method) cell. A failing cell becomes a row with status
/// "failed" and the sweep moves on.
inline SweepResult noise_sweep(const ExperimentConfig& base, const std::vector<double>& alphas,
                               const std::vector<AggregationMethod>& methods = {std::begin(agg::kAllMethods),
                                                                                std::end(agg::kAllMethods)},
                               std::function<void(const ResultRow&)> on_cell = {}) {
    SweepResult out;
    for (double alpha : alphas) {
        for (auto m : methods) {
            auto c = base;
            c.noise_alpha = alpha;
            c.method = m;
            ResultRow row;
            try {
                auto o = run_fl_experiment(c);
                row = std::move(o.row);
                if (agg::selects_best(m)) {
                    auto sel = selection_rows(c, o.training.final_state);
                    out.selections.insert(out.selections.end(), sel.begin(), sel.end());
                }
            } catch (const std::exception& e) {
                log::error("sweep cell " + std::string(agg::to_string(m)) + " alpha " + detail::fixed4(alpha) +
                           " failed: " + e.what());
                row = ResultRow{};
                row.scenario = "fl";
                row.method = std::string(agg::to_string(m));
                row.alpha = alpha;
                row.status = "failed";
                try {
                    row.config_hash = config_hash(c);
                } catch (const std::exception&) {
                }
            }
            if (on_cell) on_cell(row);
            out.rows.push_back(std::move(row));
        }
    }
    return out;
}

}  // namespace fedrul::bench
