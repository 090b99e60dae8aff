#pragma once

#include <exception>
#include <functional>
#include <memory>
#include <thread>
#include <vector>

#include "fedrul/fl/client.hpp"
#include "fedrul/fl/server.hpp"
#include "fedrul/fl/transport.hpp"

namespace fedrul::fl {

enum class TransportKind { Inproc, Tcp };

/// Threaded runs every client on its own thread; SingleThreaded drives the
/// clients synchronously from the server loop (inproc only).
enum class ExecutionMode { Threaded, SingleThreaded };

struct FederationConfig {
    nn::NetworkSpec spec = nn::NetworkSpec::rul_cnn(0);
    AggregationMethod method = AggregationMethod::FedAvg;
    std::uint32_t epochs = 100;
    TrainingOptions training;
    std::uint64_t assignment_seed = 0;
    TransportKind transport = TransportKind::Inproc;
    ExecutionMode mode = ExecutionMode::Threaded;
    Millis timeout{std::chrono::minutes(10)};
    std::function<void(const EpochReport&)> on_epoch;
};

struct ClientSetup {
    std::shared_ptr<const data::ClientDataset> dataset;
    std::uint64_t train_seed = 0;
};

struct TrainingResult {
    ServerState final_state;
    nn::ParameterVector best_params;
};

inline ServerOptions server_options(const FederationConfig& cfg) {
    return {cfg.method, cfg.assignment_seed, cfg.timeout};
}

/// Runs the configured number of epochs on an already-connected server and
/// returns the best checkpoint, not the final model.
inline TrainingResult drive_training(Server& server, const FederationConfig& cfg) {
    server.register_clients();
    try {
        for (std::uint32_t e = 0; e < cfg.epochs; ++e) {
            const auto& report = server.run_epoch();
            log::info("epoch " + std::to_string(report.epoch) + " global validation loss " +
                      std::to_string(report.global_val_loss));
            if (cfg.on_epoch) cfg.on_epoch(report);
        }
    } catch (...) {
        server.shutdown();
        throw;
    }
    server.shutdown();
    TrainingResult out{server.state(), server.state().best_checkpoint.params};
    if (out.best_params.values.empty()) out.best_params = server.state().global_params;
    return out;
}

/// Federated training with all clients hosted in this process.
inline TrainingResult run_training(const FederationConfig& cfg, const std::vector<ClientSetup>& clients) {
    require(!clients.empty(), "run_training: no clients");
    auto make_worker = [&](const ClientSetup& c) {
        ClientState st;
        st.client_id = c.dataset->client_id;
        st.dataset = c.dataset;
        st.train_seed = c.train_seed;
        return ClientWorker(cfg.spec, std::move(st), cfg.training);
    };

    if (cfg.mode == ExecutionMode::SingleThreaded) {
        require(cfg.transport == TransportKind::Inproc, "single-threaded mode requires the inproc transport");
        std::vector<std::unique_ptr<Channel>> links;
        for (const auto& c : clients) {
            auto worker = std::make_shared<ClientWorker>(make_worker(c));
            links.push_back(std::make_unique<LoopbackChannel>(
                [worker](const Message& m) { return worker->handle(m); }, std::vector<Message>{worker->hello()}));
        }
        Server server(cfg.spec, nn::init_parameters(cfg.spec), server_options(cfg), std::move(links));
        return drive_training(server, cfg);
    }

    std::vector<std::unique_ptr<Channel>> server_links;
    std::vector<std::thread> threads;
    auto spawn = [&](ClientWorker worker, std::function<std::shared_ptr<Channel>()> open) {
        threads.emplace_back([&, worker = std::move(worker), open = std::move(open)]() mutable {
            try {
                auto ch = open();
                run_client(worker, *ch, cfg.timeout);
            } catch (...) {
                // Already logged by run_client; the server reports the failed round.
            }
        });
    };
    auto join_all = [&] {
        for (auto& t : threads)
            if (t.joinable()) t.join();
    };

    try {
        if (cfg.transport == TransportKind::Inproc) {
            for (const auto& c : clients) {
                auto [server_end, client_end] = make_inproc_pair();
                server_links.push_back(std::move(server_end));
                std::shared_ptr<Channel> shared = std::move(client_end);
                spawn(make_worker(c), [shared] { return shared; });
            }
        } else {
            TcpListener listener(Endpoint{"127.0.0.1", 0});
            const Endpoint at{"127.0.0.1", listener.port()};
            for (const auto& c : clients)
                spawn(make_worker(c), [at, t = cfg.timeout] { return tcp_connect(at, t); });
            for (std::size_t i = 0; i < clients.size(); ++i) server_links.push_back(listener.accept(cfg.timeout));
        }
        Server server(cfg.spec, nn::init_parameters(cfg.spec), server_options(cfg), std::move(server_links));
        auto result = drive_training(server, cfg);
        join_all();
        return result;
    } catch (...) {
        for (auto& l : server_links)
            if (l) l->close();
        join_all();
        throw;
    }
}

/// Server half of a multi-process run: waits for `n_clients` TCP clients on
/// `at`, then trains.
inline TrainingResult serve_training(const FederationConfig& cfg, const Endpoint& at, std::size_t n_clients,
                                     std::function<void(std::uint16_t)> on_listening = {}) {
    require(n_clients >= 1, "serve_training: no clients");
    TcpListener listener(at);
    if (on_listening) on_listening(listener.port());
    std::vector<std::unique_ptr<Channel>> links;
    for (std::size_t i = 0; i < n_clients; ++i) links.push_back(listener.accept(cfg.timeout));
    Server server(cfg.spec, nn::init_parameters(cfg.spec), server_options(cfg), std::move(links));
    return drive_training(server, cfg);
}

/// Client half of a multi-process run; returns once the server shuts it down.
inline void run_remote_client(const FederationConfig& cfg, const ClientSetup& setup, const Endpoint& server) {
    ClientState st;
    st.client_id = setup.dataset->client_id;
    st.dataset = setup.dataset;
    st.train_seed = setup.train_seed;
    ClientWorker worker(cfg.spec, std::move(st), cfg.training);
    auto ch = tcp_connect(server, cfg.timeout);
    run_client(worker, *ch, cfg.timeout);
}

}  // namespace fedrul::fl
