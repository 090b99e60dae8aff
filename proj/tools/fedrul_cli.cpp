// fedrul: federated RUL experiments from the command line.
//
//   fedrul fl | uc | ni | sweep   run experiments, print or write result CSVs
//   fedrul gen-data               write the synthetic engines as flight CSV
//   fedrul ingest FILE...         check and summarize flight CSVs

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedrul/bench/experiment.hpp"
#include "fedrul/bench/results.hpp"
#include "fedrul/data/csv.hpp"

using namespace fedrul;

namespace {

struct Options {
    bench::ExperimentConfig config;
    std::string aggregation = "fedavg";
    std::string transport = "inproc";
    std::string listen;
    std::string connect;
    int client_id = -1;
    bool single_threaded = false;
    std::vector<std::string> data_files;
    std::string out;
    std::string selections_out;
    std::vector<double> alphas = bench::default_sweep_alphas();
    std::vector<std::string> methods;
    int engines = 0;
    bool verbose = false;
    bool quiet = false;
};

void add_experiment_options(CLI::App& app, Options& o) {
    auto& c = o.config;
    app.add_option("--window-len", c.window.length, "Window length in time steps")->capture_default_str();
    app.add_option("--stride", c.window.stride, "Window stride in time steps")->capture_default_str();
    app.add_option("--val-fraction", c.val_fraction, "Share of each client's flights held out for validation")
        ->capture_default_str();
    app.add_option("--agg-bucket", c.agg_bucket, "Average this many raw steps into one (1 keeps the raw rate)")
        ->capture_default_str();
    app.add_option("--noise-alpha", c.noise_alpha, "Noise multiplier for the noisy clients")->capture_default_str();
    app.add_option("--noise-clients", c.noisy_client_ids, "Comma-separated ids of the noisy clients")
        ->delimiter(',')
        ->capture_default_str();
    app.add_flag("--allow-noisy-majority", c.allow_noisy_majority, "Allow half or more of the clients to be noisy");
    app.add_option("--seed", c.seed, "Base seed for data, training, noise and assignments")->capture_default_str();
    app.add_option("--epochs", c.epochs, "Federated rounds")->capture_default_str();
    app.add_option("--aggregation", o.aggregation, "Aggregation method")
        ->check(CLI::IsMember({"fedavg", "random-best", "random-softmax", "full-best", "full-softmax"}))
        ->capture_default_str();
    app.add_option("--transport", o.transport, "Message transport")
        ->check(CLI::IsMember({"inproc", "tcp"}))
        ->capture_default_str();
    app.add_option("--listen", o.listen, "Serve as the FL server on host:port and wait for the clients (tcp)");
    app.add_option("--connect", o.connect, "Run one FL client against the server at host:port (tcp)");
    app.add_option("--client-id", o.client_id, "Client id served by this process (with --connect)");
    app.add_flag("--single-threaded", o.single_threaded, "Drive every client from one thread (inproc)");
    app.add_option("--clients", c.n_clients, "Training clients")->capture_default_str();
    app.add_option("--test-engines", c.test_engines, "Held-out test engines")->capture_default_str();
    app.add_option("--steps-per-flight", c.profile.steps_per_flight, "Synthetic steps per flight")
        ->capture_default_str();
    app.add_option("--lr", c.training.learning_rate, "Adam learning rate")->capture_default_str();
    app.add_option("--batch-size", c.training.batch_size, "Mini-batch size")->capture_default_str();
    app.add_flag("--reset-optimizer", c.training.reset_optimizer, "Start every round with fresh Adam moments");
    app.add_option("--data", o.data_files, "Flight CSV files to use instead of synthetic engines");
    app.add_option("--out", o.out, "Results CSV path (default: stdout)");
    app.add_flag("-v,--verbose", o.verbose, "Log every epoch");
    app.add_flag("-q,--quiet", o.quiet, "Only print errors");
}

/// Error kinds double as exit codes.
int exit_code_for(const std::string& kind) {
    if (kind == "usage" || kind == "contract" || kind == "spec") return 2;
    if (kind == "ingest" || kind == "io") return 3;
    if (kind == "transport" || kind == "protocol" || kind == "decode") return 4;
    return 1;
}

int fail(const std::string& kind, const std::string& message) {
    nlohmann::json j{{"status", "error"}, {"kind", kind}, {"message", message}};
    std::cerr << j.dump() << std::endl;
    return exit_code_for(kind);
}

fl::TransportKind transport_kind(const Options& o) {
    return o.transport == "tcp" ? fl::TransportKind::Tcp : fl::TransportKind::Inproc;
}

/// Resolves the parsed flags into the experiment config.
void finish_config(Options& o) {
    auto& c = o.config;
    c.method = *agg::parse_method(o.aggregation);
    c.transport = transport_kind(o);
    c.mode = o.single_threaded ? fl::ExecutionMode::SingleThreaded : fl::ExecutionMode::Threaded;
    if (o.single_threaded && c.transport == fl::TransportKind::Tcp)
        throw ContractError("--single-threaded requires --transport inproc");
    if ((!o.listen.empty() || !o.connect.empty()) && c.transport != fl::TransportKind::Tcp)
        throw ContractError("--listen and --connect require --transport tcp");
    if (!o.listen.empty() && !o.connect.empty()) throw ContractError("--listen and --connect are exclusive");
    if (!o.data_files.empty()) {
        std::vector<std::filesystem::path> paths(o.data_files.begin(), o.data_files.end());
        c.engines = data::group_by_engine(data::csv_ingest(paths));
        std::string label = "csv";
        for (const auto& f : o.data_files) label += ":" + std::filesystem::path(f).filename().string();
        c.data_label = label;
    }
    if (o.verbose) log::set_level(log::Level::Info);
    if (o.quiet) log::set_level(log::Level::Error);
}

std::string describe(const fl::EpochReport& r) {
    std::ostringstream s;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", r.global_val_loss);
    s << "epoch " << r.epoch << " val_sse " << buf;
    if (const auto* sel = std::get_if<fl::SelectedClient>(&r.weights_or_selection))
        s << " selected " << sel->client_id;
    if (const auto* w = std::get_if<agg::ClientWeights>(&r.weights_or_selection)) {
        s << " weights";
        for (double a : w->alpha) {
            std::snprintf(buf, sizeof buf, " %.4f", a);
            s << buf;
        }
    }
    if (r.improved) s << " best";
    return s.str();
}

std::function<void(const fl::EpochReport&)> progress(const Options& o) {
    if (o.quiet) return {};
    return [](const fl::EpochReport& r) { std::cerr << describe(r) << std::endl; };
}

void write_rows(const Options& o, const std::vector<bench::ResultRow>& rows) {
    if (o.out.empty())
        std::cout << bench::results_csv(rows);
    else
        bench::emit_csv(rows, o.out);
}

void write_selections(const Options& o, const std::vector<bench::SelectionRow>& rows) {
    if (!o.selections_out.empty()) bench::emit_selection_csv(rows, o.selections_out);
}

int cmd_fl(Options& o) {
    finish_config(o);
    const auto& c = o.config;
    if (!o.connect.empty()) {
        if (o.client_id < 0) throw ContractError("--connect needs --client-id");
        bench::run_fl_client(c, o.client_id, fl::parse_endpoint(o.connect));
        return 0;
    }
    bench::ExperimentOutcome out;
    if (!o.listen.empty()) {
        out = bench::run_fl_server(c, fl::parse_endpoint(o.listen), progress(o), [&](std::uint16_t port) {
            if (!o.quiet) std::cerr << "listening on port " << port << std::endl;
        });
    } else {
        out = bench::run_fl_experiment(c, progress(o));
    }
    write_rows(o, {out.row});
    if (agg::selects_best(c.method)) write_selections(o, bench::selection_rows(c, out.training.final_state));
    return 0;
}

int cmd_uc(Options& o) {
    finish_config(o);
    write_rows(o, {bench::run_uc_baseline(o.config, progress(o)).row});
    return 0;
}

int cmd_ni(Options& o) {
    finish_config(o);
    write_rows(o, bench::run_ni_baseline(o.config, progress(o)));
    return 0;
}

int cmd_sweep(Options& o) {
    finish_config(o);
    std::vector<agg::AggregationMethod> methods;
    if (o.methods.empty()) methods.assign(std::begin(agg::kAllMethods), std::end(agg::kAllMethods));
    for (const auto& m : o.methods) {
        const auto parsed = agg::parse_method(m);
        if (!parsed) throw ContractError("unknown aggregation method '" + m + "'");
        methods.push_back(*parsed);
    }
    // A bad noisy set is a config error, not a failed cell.
    for (double a : o.alphas) {
        auto c = o.config;
        c.noise_alpha = a;
        bench::validate(c);
    }
    auto result = bench::noise_sweep(o.config, o.alphas, methods, [&](const bench::ResultRow& r) {
        if (o.quiet) return;
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s alpha %.4f: %s rmse %.4f", r.method.c_str(), r.alpha, r.status.c_str(),
                      r.overall_rmse);
        std::cerr << buf << std::endl;
    });
    write_rows(o, result.rows);
    write_selections(o, result.selections);
    return 0;
}

int cmd_gen_data(Options& o) {
    finish_config(o);
    if (o.out.empty()) throw ContractError("gen-data needs --out");
    auto c = o.config;
    if (o.engines > 0) c.test_engines = o.engines - c.n_clients;
    if (c.test_engines < 0) throw ContractError("--engines must be at least --clients");
    c.engines.clear();
    std::vector<data::FlightSeries> flights;
    for (auto& e : bench::scenario_engines(c))
        for (auto& f : e) flights.push_back(std::move(f));
    data::csv_emit(o.out, flights);
    return 0;
}

int cmd_ingest(Options& o, const std::vector<std::string>& files) {
    if (o.verbose) log::set_level(log::Level::Info);
    std::vector<std::filesystem::path> paths(files.begin(), files.end());
    auto flights = data::csv_ingest(paths);
    if (o.config.agg_bucket < 1) throw ContractError("agg-bucket must be at least 1");
    if (o.config.agg_bucket > 1)
        for (auto& f : flights) f = data::aggregate_mean(f, o.config.agg_bucket);
    const auto engines = data::group_by_engine(flights);
    nlohmann::json summary;
    summary["status"] = "ok";
    summary["files"] = files;
    summary["engines"] = engines.size();
    summary["flights"] = flights.size();
    summary["channels"] = flights.empty() ? 0 : flights.front().channels;
    int min_steps = 0, max_steps = 0;
    std::size_t windows = 0;
    for (std::size_t i = 0; i < flights.size(); ++i) {
        const int s = flights[i].steps();
        min_steps = i == 0 ? s : std::min(min_steps, s);
        max_steps = i == 0 ? s : std::max(max_steps, s);
        if (s >= o.config.window.length)
            windows += static_cast<std::size_t>((s - o.config.window.length) / o.config.window.stride + 1);
    }
    summary["steps_per_flight"] = {{"min", min_steps}, {"max", max_steps}};
    summary["windows"] = windows;
    nlohmann::json per_engine = nlohmann::json::array();
    for (const auto& e : engines) per_engine.push_back({{"engine_id", e.front().engine_id}, {"flights", e.size()}});
    summary["per_engine"] = per_engine;
    if (!o.out.empty()) data::csv_emit(o.out, flights);
    std::cout << summary.dump() << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated RUL prognostics with decentralized validation"};
    app.require_subcommand(1);
    Options o;

    auto* fl_cmd = app.add_subcommand("fl", "Federated training, then test on the held-out engines");
    auto* uc_cmd = app.add_subcommand("uc", "Centralized baseline on the pooled training data");
    auto* ni_cmd = app.add_subcommand("ni", "Isolated per-client baselines plus their mean");
    auto* sweep_cmd = app.add_subcommand("sweep", "Every aggregation method over a list of noise multipliers");
    auto* gen_cmd = app.add_subcommand("gen-data", "Write the synthetic engines as a flight CSV");
    auto* ingest_cmd = app.add_subcommand("ingest", "Validate and summarize flight CSV files");

    for (auto* sub : {fl_cmd, uc_cmd, ni_cmd, sweep_cmd, gen_cmd}) add_experiment_options(*sub, o);
    for (auto* sub : {fl_cmd, sweep_cmd})
        sub->add_option("--selections-out", o.selections_out, "Selection-count CSV for best-model methods");
    sweep_cmd->add_option("--alphas", o.alphas, "Comma-separated noise multipliers")->delimiter(',');
    sweep_cmd->add_option("--methods", o.methods, "Comma-separated aggregation methods (default: all)")
        ->delimiter(',');
    gen_cmd->add_option("--engines", o.engines, "Engines to write (default: clients + test engines)");

    std::vector<std::string> ingest_files;
    ingest_cmd->add_option("files", ingest_files, "Flight CSV files")->required();
    ingest_cmd->add_option("--agg-bucket", o.config.agg_bucket, "Average this many steps into one");
    ingest_cmd->add_option("--window-len", o.config.window.length, "Window length used for the window count");
    ingest_cmd->add_option("--stride", o.config.window.stride, "Window stride used for the window count");
    ingest_cmd->add_option("--out", o.out, "Write the (aggregated) flights to this CSV");
    ingest_cmd->add_flag("-v,--verbose", o.verbose, "Log warnings and progress");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        if (*fl_cmd) return cmd_fl(o);
        if (*uc_cmd) return cmd_uc(o);
        if (*ni_cmd) return cmd_ni(o);
        if (*sweep_cmd) return cmd_sweep(o);
        if (*gen_cmd) return cmd_gen_data(o);
        if (*ingest_cmd) return cmd_ingest(o, ingest_files);
    } catch (const ContractError& e) {
        return fail("contract", e.what());
    } catch (const SpecError& e) {
        return fail("spec", e.what());
    } catch (const IngestError& e) {
        return fail("ingest", e.what());
    } catch (const DecodeError& e) {
        return fail("decode", e.what());
    } catch (const ProtocolError& e) {
        return fail("protocol", e.what());
    } catch (const TransportError& e) {
        return fail("transport", e.what());
    } catch (const Error& e) {
        return fail("io", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return fail("usage", "no subcommand");
}
