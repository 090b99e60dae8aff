#pragma once

// Multi-client experiment scenarios: synthetic or ingested engines split into
// training clients and held-out test engines, federated training with any
// aggregation method, the centralized (UC) and isolated (NI) baselines, and
// flight-level test metrics.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedrul/agg/aggregation.hpp"
#include "fedrul/data/synth.hpp"
#include "fedrul/data/transform.hpp"
#include "fedrul/fl/evaluation.hpp"
#include "fedrul/fl/runtime.hpp"
#include "fedrul/util/log.hpp"

namespace fedrul::bench {

using agg::AggregationMethod;
using data::Engine;

struct Seeds {
    std::uint64_t data = 0;
    std::uint64_t training = 0;
    std::uint64_t noise = 0;
    std::uint64_t assignment = 0;
    std::uint64_t split = 0;
    std::uint64_t model = 0;

    /// Independent streams derived from one base seed.
    static Seeds from(std::uint64_t base) {
        return {derive_seed(base, 0xDA7A), derive_seed(base, 0x7EA1), derive_seed(base, 0x9015),
                derive_seed(base, 0xA551), derive_seed(base, 0x5B11), derive_seed(base, 0x30DE)};
    }
};

struct ExperimentConfig {
    int n_clients = 6;
    int test_engines = 3;
    data::SynthProfile profile;
    int agg_bucket = 1;
    double val_fraction = 0.2;
    data::WindowConfig window;
    double noise_alpha = 0.0;
    std::vector<int> noisy_client_ids = {1, 4};
    /// Allow half or more of the clients to be noisy.
    bool allow_noisy_majority = false;
    AggregationMethod method = AggregationMethod::FedAvg;
    std::uint32_t epochs = 100;
    fl::TrainingOptions training;
    std::uint64_t seed = 1;
    fl::TransportKind transport = fl::TransportKind::Inproc;
    fl::ExecutionMode mode = fl::ExecutionMode::Threaded;
    /// Ingested engines (sorted by id); empty means synthetic generation.
    std::vector<Engine> engines;
    std::string data_label = "synthetic";

    Seeds seeds() const { return Seeds::from(seed); }
};

/// Rejects inconsistent configurations before any work is done.
inline void validate(const ExperimentConfig& c) {
    if (c.n_clients < 1) throw ContractError("n_clients must be at least 1");
    if (c.test_engines < 1) throw ContractError("at least one test engine is required");
    if (c.agg_bucket < 1) throw ContractError("agg-bucket must be at least 1");
    if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ContractError("val-fraction must be in (0, 1)");
    if (c.window.length < 1 || c.window.stride < 1) throw ContractError("window length and stride must be positive");
    if (!(c.noise_alpha >= 0.0)) throw ContractError("noise-alpha must be non-negative");
    // The noisy set only matters once noise is applied.
    if (c.noise_alpha > 0.0) {
        std::set<int> noisy;
        for (int id : c.noisy_client_ids) {
            if (id < 0 || id >= c.n_clients)
                throw ContractError("noisy client " + std::to_string(id) + " is not a client id (0.." +
                                    std::to_string(c.n_clients - 1) + ")");
            if (!noisy.insert(id).second) throw ContractError("noisy client " + std::to_string(id) + " listed twice");
        }
        const auto half = static_cast<std::size_t>((c.n_clients + 1) / 2);
        if (noisy.size() >= half) {
            if (!c.allow_noisy_majority)
                throw ContractError(std::to_string(noisy.size()) + " noisy clients out of " +
                                    std::to_string(c.n_clients) +
                                    " is not fewer than half; pass the override flag to run anyway");
            log::warn("running with " + std::to_string(noisy.size()) + " noisy clients out of " +
                      std::to_string(c.n_clients));
        }
    }
    if (!c.engines.empty() && static_cast<int>(c.engines.size()) < c.n_clients + c.test_engines)
        throw ContractError("ingested data has " + std::to_string(c.engines.size()) + " engines, need " +
                            std::to_string(c.n_clients + c.test_engines));
    if (c.epochs < 1) throw ContractError("epochs must be at least 1");
}

/// FNV-1a 64 over the canonical JSON of every setting that affects results.
inline nlohmann::json config_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["n_clients"] = c.n_clients;
    j["test_engines"] = c.test_engines;
    j["profile"] = {{"min_flights", c.profile.min_flights},
                    {"max_flights", c.profile.max_flights},
                    {"steps_per_flight", c.profile.steps_per_flight},
                    {"climb_fraction", c.profile.climb_fraction},
                    {"descent_fraction", c.profile.descent_fraction},
                    {"measurement_noise", c.profile.measurement_noise},
                    {"degradation_magnitude", c.profile.degradation_magnitude},
                    {"linear_share", c.profile.linear_share},
                    {"acceleration_flights", c.profile.acceleration_flights},
                    {"manufacturing_spread", c.profile.manufacturing_spread},
                    {"wear_spread", c.profile.wear_spread}};
    j["agg_bucket"] = c.agg_bucket;
    j["val_fraction"] = c.val_fraction;
    j["window"] = {{"length", c.window.length}, {"stride", c.window.stride}};
    j["noise_alpha"] = c.noise_alpha;
    j["noisy_client_ids"] = c.noisy_client_ids;
    j["method"] = std::string(agg::to_string(c.method));
    j["epochs"] = c.epochs;
    j["training"] = {{"batch_size", c.training.batch_size},
                     {"learning_rate", c.training.learning_rate},
                     {"reset_optimizer", c.training.reset_optimizer}};
    j["seed"] = c.seed;
    j["data"] = c.data_label;
    return j;
}

inline std::string config_hash(const ExperimentConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : config_json(c).dump()) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct ResultRow {
    std::string scenario;
    std::string method;
    double alpha = 0.0;
    /// Test engine id -> (RMSE, MAE), flights.
    std::map<int, std::pair<double, double>> per_engine;
    double overall_rmse = 0.0;
    double overall_mae = 0.0;
    std::uint32_t best_epoch = 0;
    std::string status = "ok";
    std::string config_hash;
    /// Not written to CSV so reruns stay byte-identical.
    double wall_seconds = 0.0;
};

/// Raw engines of the scenario: clients first, then test engines.
inline std::vector<Engine> scenario_engines(const ExperimentConfig& c) {
    std::vector<Engine> engines;
    if (c.engines.empty()) {
        engines = data::synth_generate(c.n_clients + c.test_engines, c.seeds().data, c.profile);
    } else {
        engines.assign(c.engines.begin(), c.engines.begin() + c.n_clients + c.test_engines);
    }
    if (c.agg_bucket > 1)
        for (auto& e : engines)
            for (auto& f : e) f = data::aggregate_mean(f, c.agg_bucket);
    return engines;
}

struct Scenario {
    /// Training clients' flights after noise injection, not normalized.
    std::vector<Engine> client_flights;
    std::vector<Engine> test_flights;
    std::vector<std::shared_ptr<const data::ClientDataset>> clients;
    /// Merge of the clients' min/max before any noise is added. Test engines
    /// of FL and UC are normalized with it, so the test set is the same at
    /// every noise level.
    data::NormalizationStats reference_stats;
};

inline bool is_noisy(const ExperimentConfig& c, int client_id) {
    return c.noise_alpha > 0.0 &&
           std::find(c.noisy_client_ids.begin(), c.noisy_client_ids.end(), client_id) != c.noisy_client_ids.end();
}

inline data::DatasetOptions dataset_options(const ExperimentConfig& c, int client_id) {
    return {c.val_fraction, c.window, derive_seed(c.seeds().split, static_cast<std::uint64_t>(client_id))};
}

/// Each client normalizes with its own stats; noise is added to the raw
/// measurements of the noisy clients only, never to test engines.
inline Scenario build_scenario(const ExperimentConfig& c) {
    validate(c);
    auto engines = scenario_engines(c);
    Scenario s;
    std::vector<data::NormalizationStats> clean_stats;
    for (int i = 0; i < c.n_clients; ++i) {
        auto& flights = engines[static_cast<std::size_t>(i)];
        clean_stats.push_back(data::minmax_fit(flights));
        if (is_noisy(c, i))
            flights = data::inject_noise(flights, c.noise_alpha, derive_seed(c.seeds().noise, static_cast<std::uint64_t>(i)));
        s.clients.push_back(std::make_shared<data::ClientDataset>(
            data::build_client_dataset(i, flights, dataset_options(c, i))));
        s.client_flights.push_back(std::move(flights));
    }
    for (int t = 0; t < c.test_engines; ++t)
        s.test_flights.push_back(std::move(engines[static_cast<std::size_t>(c.n_clients + t)]));
    s.reference_stats = data::merge_stats(clean_stats);
    return s;
}

inline const data::NormalizationStats& pooled_stats(const Scenario& s) { return s.reference_stats; }

struct TestMetrics {
    std::map<int, std::pair<double, double>> per_engine;
    double overall_rmse = 0.0;
    double overall_mae = 0.0;
    /// Flight-level (engine, flight, prediction, label).
    std::vector<std::tuple<int, int, double, int>> predictions;
};

/// Flight-level RMSE and MAE on the test engines, normalized with `stats`.
/// The overall figures pool the residuals of all test flights.
inline TestMetrics evaluate_test(const nn::NetworkSpec& spec, const nn::ParameterVector& params,
                                 const std::vector<Engine>& test_flights, const data::NormalizationStats& stats,
                                 const data::WindowConfig& window) {
    TestMetrics m;
    double pooled_sq = 0.0, pooled_abs = 0.0;
    std::size_t pooled_n = 0;
    for (const auto& engine : test_flights) {
        double sq = 0.0, ab = 0.0;
        std::size_t n = 0;
        for (const auto& f : engine) {
            if (f.steps() < window.length) continue;
            const double pred = fl::predict_flight_rul(spec, params, data::minmax_apply(f, stats), window);
            const double r = pred - f.rul_label;
            sq += r * r;
            ab += std::abs(r);
            ++n;
            m.predictions.emplace_back(f.engine_id, f.flight_index, pred, f.rul_label);
        }
        if (n == 0) throw ContractError("test engine has no flight long enough for one window");
        m.per_engine[engine.front().engine_id] = {std::sqrt(sq / n), ab / n};
        pooled_sq += sq;
        pooled_abs += ab;
        pooled_n += n;
    }
    m.overall_rmse = std::sqrt(pooled_sq / pooled_n);
    m.overall_mae = pooled_abs / pooled_n;
    return m;
}

inline fl::FederationConfig federation_config(const ExperimentConfig& c, AggregationMethod method) {
    fl::FederationConfig f;
    f.spec = nn::NetworkSpec::rul_cnn(c.seeds().model, c.window.length, data::kChannels);
    f.method = method;
    f.epochs = c.epochs;
    f.training = c.training;
    f.assignment_seed = c.seeds().assignment;
    f.transport = c.transport;
    f.mode = c.mode;
    return f;
}

inline fl::ClientSetup client_setup(const ExperimentConfig& c, std::shared_ptr<const data::ClientDataset> ds) {
    const int id = ds->client_id;
    return {std::move(ds), fl::default_client_seed(c.seeds().training, id)};
}

struct ExperimentOutcome {
    ResultRow row;
    fl::TrainingResult training;
    TestMetrics test;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline ResultRow make_row(const ExperimentConfig& c, std::string scenario, std::string method, const TestMetrics& t,
                          std::uint32_t best_epoch) {
    ResultRow r;
    r.scenario = std::move(scenario);
    r.method = std::move(method);
    r.alpha = c.noise_alpha;
    r.per_engine = t.per_engine;
    r.overall_rmse = t.overall_rmse;
    r.overall_mae = t.overall_mae;
    r.best_epoch = best_epoch;
    r.config_hash = config_hash(c);
    return r;
}

inline ExperimentOutcome train_and_test(const ExperimentConfig& c, const Scenario& s,
                                        std::vector<fl::ClientSetup> clients, AggregationMethod method,
                                        const data::NormalizationStats& test_stats, std::string scenario,
                                        std::function<void(const fl::EpochReport&)> on_epoch = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    auto fed = federation_config(c, method);
    fed.on_epoch = std::move(on_epoch);
    ExperimentOutcome out;
    out.training = fl::run_training(fed, clients);
    out.test = evaluate_test(fed.spec, out.training.best_params, s.test_flights, test_stats, c.window);
    out.row = make_row(c, std::move(scenario), std::string(agg::to_string(method)), out.test,
                       out.training.final_state.best_checkpoint.epoch);
    out.row.wall_seconds = seconds_since(t0);
    return out;
}

}  // namespace detail

/// Federated training over all clients; test engines use pooled stats.
inline ExperimentOutcome run_fl_experiment(const ExperimentConfig& c,
                                           std::function<void(const fl::EpochReport&)> on_epoch = {}) {
    const auto s = build_scenario(c);
    std::vector<fl::ClientSetup> clients;
    for (const auto& ds : s.clients) clients.push_back(client_setup(c, ds));
    return detail::train_and_test(c, s, std::move(clients), c.method, pooled_stats(s), "fl", std::move(on_epoch));
}

/// Server process of a multi-process TCP run. Every process rebuilds the
/// scenario from the same config; the server uses it only for the test
/// engines and the pooled stats, never for training.
inline ExperimentOutcome run_fl_server(const ExperimentConfig& c, const fl::Endpoint& at,
                                       std::function<void(const fl::EpochReport&)> on_epoch = {},
                                       std::function<void(std::uint16_t)> on_listening = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto s = build_scenario(c);
    auto fed = federation_config(c, c.method);
    fed.on_epoch = std::move(on_epoch);
    ExperimentOutcome out;
    out.training = fl::serve_training(fed, at, s.clients.size(), std::move(on_listening));
    out.test = evaluate_test(fed.spec, out.training.best_params, s.test_flights, pooled_stats(s), c.window);
    out.row = detail::make_row(c, "fl", std::string(agg::to_string(c.method)), out.test,
                               out.training.final_state.best_checkpoint.epoch);
    out.row.wall_seconds = detail::seconds_since(t0);
    return out;
}

/// One client process of a multi-process TCP run.
inline void run_fl_client(const ExperimentConfig& c, int client_id, const fl::Endpoint& server) {
    if (client_id < 0 || client_id >= c.n_clients)
        throw ContractError("client id " + std::to_string(client_id) + " is not in 0.." +
                            std::to_string(c.n_clients - 1));
    const auto s = build_scenario(c);
    fl::run_remote_client(federation_config(c, c.method), client_setup(c, s.clients[static_cast<std::size_t>(client_id)]),
                          server);
}

/// The union client used by the centralized baseline: every client's flights
/// normalized with the pooled stats, split exactly as in the federation.
inline data::ClientDataset union_dataset(const ExperimentConfig& c, const Scenario& s) {
    const auto stats = pooled_stats(s);
    data::ClientDataset u;
    u.client_id = 0;
    u.stats = stats;
    for (int i = 0; i < c.n_clients; ++i) {
        auto part =
            data::build_client_dataset(i, s.client_flights[static_cast<std::size_t>(i)], dataset_options(c, i), stats);
        auto move_into = [](auto& dst, auto& src) {
            dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
        };
        move_into(u.training_windows, part.training_windows);
        move_into(u.validation_windows, part.validation_windows);
        move_into(u.training_flights, part.training_flights);
        move_into(u.validation_flights, part.validation_flights);
    }
    return u;
}

/// Centralized training on the union of all clients' data.
inline ExperimentOutcome run_uc_baseline(const ExperimentConfig& c,
                                         std::function<void(const fl::EpochReport&)> on_epoch = {}) {
    const auto s = build_scenario(c);
    auto u = std::make_shared<const data::ClientDataset>(union_dataset(c, s));
    return detail::train_and_test(c, s, {client_setup(c, u)}, AggregationMethod::FedAvg, u->stats, "uc",
                                  std::move(on_epoch));
}

/// Arithmetic mean of the per-client rows.
inline ResultRow mean_row(const std::vector<ResultRow>& rows) {
    require(!rows.empty(), "mean_row: no rows");
    ResultRow m = rows.front();
    m.scenario = "ni-mean";
    m.best_epoch = 0;
    m.overall_rmse = m.overall_mae = m.wall_seconds = 0.0;
    for (auto& [id, v] : m.per_engine) v = {0.0, 0.0};
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
        m.overall_rmse += r.overall_rmse / n;
        m.overall_mae += r.overall_mae / n;
        m.wall_seconds += r.wall_seconds;
        for (const auto& [id, v] : r.per_engine) {
            m.per_engine[id].first += v.first / n;
            m.per_engine[id].second += v.second / n;
        }
    }
    return m;
}

/// One isolated model per client, each tested with its own client's stats,
/// followed by the mean row.
inline std::vector<ResultRow> run_ni_baseline(const ExperimentConfig& c,
                                              std::function<void(const fl::EpochReport&)> on_epoch = {}) {
    const auto s = build_scenario(c);
    std::vector<ResultRow> rows;
    for (const auto& ds : s.clients) {
        auto out = detail::train_and_test(c, s, {client_setup(c, ds)}, AggregationMethod::FedAvg, ds->stats,
                                          "ni-client-" + std::to_string(ds->client_id), on_epoch);
        rows.push_back(std::move(out.row));
    }
    rows.push_back(mean_row(rows));
    return rows;
}

}  // namespace fedrul::bench
