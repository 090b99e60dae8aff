#pragma once

#include <algorithm>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fedrul/agg/aggregation.hpp"
#include "fedrul/fl/transport.hpp"
#include "fedrul/fl/wire.hpp"
#include "fedrul/nn/network.hpp"
#include "fedrul/util/log.hpp"
#include "fedrul/util/random.hpp"

namespace fedrul::fl {

using agg::AggregationMethod;
using agg::ClientWeights;
using agg::EvaluationScore;

struct RegisteredClient {
    int client_id = 0;
    std::size_t n_train = 0;

    bool operator==(const RegisteredClient&) const = default;
};

struct FedAvgFractions {
    std::vector<double> fractions;
    bool operator==(const FedAvgFractions&) const = default;
};

struct SelectedClient {
    int client_id = 0;
    bool operator==(const SelectedClient&) const = default;
};

using WeightsOrSelection = std::variant<FedAvgFractions, ClientWeights, SelectedClient>;

struct EpochReport {
    std::uint32_t epoch = 0;
    double global_val_loss = 0.0;
    /// Registry order.
    std::vector<std::pair<int, double>> per_client_val_sum;
    std::optional<std::vector<EvaluationScore>> eval_scores;
    WeightsOrSelection weights_or_selection;
    std::size_t evaluation_losses = 0;
    bool improved = false;

    bool operator==(const EpochReport&) const = default;
};

struct Checkpoint {
    std::uint32_t epoch = 0;
    nn::ParameterVector params;
    double global_val_loss = std::numeric_limits<double>::infinity();
};

struct ServerState {
    nn::ParameterVector global_params;
    std::uint32_t epoch = 0;
    AggregationMethod method = AggregationMethod::FedAvg;
    Checkpoint best_checkpoint;
    std::vector<EpochReport> history;
    std::vector<RegisteredClient> client_registry;
};

struct ServerOptions {
    AggregationMethod method = AggregationMethod::FedAvg;
    std::uint64_t assignment_seed = 0;
    Millis timeout{std::chrono::minutes(10)};
};

/// Server side of the round protocol over one channel per client. Requests
/// go out to every client before any reply is awaited, so clients work
/// concurrently when their channels are served by separate threads.
class Server {
public:
    Server(nn::NetworkSpec spec, nn::ParameterVector initial, ServerOptions opts,
           std::vector<std::unique_ptr<Channel>> links)
        : spec_(std::move(spec)), opts_(opts), links_(std::move(links)) {
        require(initial.size() == spec_.parameter_count(), "initial parameters do not match the network spec");
        require(!links_.empty(), "server needs at least one client");
        if (uses_random_policy(opts_.method) || weights_softmax(opts_.method))
            require(links_.size() >= 2, "this aggregation method needs at least 2 clients");
        state_.global_params = std::move(initial);
        state_.method = opts_.method;
    }

    Server(Server&&) = default;
    Server& operator=(Server&&) = default;
    ~Server() {
        for (auto& l : links_)
            if (l) l->close();
    }

    /// Receives one Hello per link and fixes the registry in client-id order.
    void register_clients() {
        std::vector<std::pair<RegisteredClient, std::unique_ptr<Channel>>> entries;
        for (auto& link : links_) {
            const auto m = link->recv(opts_.timeout);
            if (m.type != MessageType::Hello)
                throw ProtocolError("expected Hello, got " + std::string(to_string(m.type)));
            if (m.count() == 0) throw ProtocolError("client " + std::to_string(m.sender) + " has no training windows");
            entries.push_back({{m.sender, static_cast<std::size_t>(m.count())}, std::move(link)});
        }
        std::sort(entries.begin(), entries.end(),
                  [](const auto& a, const auto& b) { return a.first.client_id < b.first.client_id; });
        links_.clear();
        state_.client_registry.clear();
        for (auto& [reg, link] : entries) {
            if (!state_.client_registry.empty() && state_.client_registry.back().client_id == reg.client_id)
                throw ProtocolError("duplicate client id " + std::to_string(reg.client_id));
            state_.client_registry.push_back(reg);
            links_.push_back(std::move(link));
        }
    }

    /// One full round. Throws on any client failure; the state is only
    /// updated once the whole round has succeeded.
    const EpochReport& run_epoch() {
        require(state_.client_registry.size() == links_.size(), "clients are not registered");
        const std::size_t n = links_.size();
        const std::uint32_t e = state_.epoch + 1;

        // (1)-(2) local training.
        broadcast(Message::parameters(MessageType::GlobalModel, e, 0, state_.global_params.values));
        std::vector<nn::ParameterVector> locals(n);
        for (std::size_t i = 0; i < n; ++i) {
            locals[i].values = expect(i, MessageType::LocalModel, e).params();
            if (locals[i].values.size() != spec_.parameter_count())
                throw ProtocolError("client " + std::to_string(id(i)) + " sent a model of the wrong size");
            locals[i].layout = state_.global_params.layout;
        }

        // (3) evaluation and aggregation.
        EpochReport report;
        report.epoch = e;
        std::vector<int> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = id(i);
        std::optional<std::vector<EvaluationScore>> scores;

        if (agg::uses_full_policy(opts_.method)) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    send_to(i, Message::parameters(MessageType::EvalAssignment, e, sender(j), locals[j].values));
            std::vector<std::vector<double>> losses(n, std::vector<double>(n));
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) losses[i][j] = expect(i, MessageType::EvalLoss, e).loss_value();
            report.evaluation_losses = n * n;
            scores = agg::eval_full(ids, losses);
        } else if (agg::uses_random_policy(opts_.method)) {
            const auto a = agg::draw_assignment(ids, derive_seed(opts_.assignment_seed, e));
            std::vector<std::size_t> model_of(n);
            for (std::size_t j = 0; j < n; ++j) model_of[a.evaluator[j]] = j;
            for (std::size_t i = 0; i < n; ++i)
                send_to(i, Message::parameters(MessageType::EvalAssignment, e, sender(model_of[i]),
                                               locals[model_of[i]].values));
            std::vector<double> losses(n);
            for (std::size_t i = 0; i < n; ++i) losses[model_of[i]] = expect(i, MessageType::EvalLoss, e).loss_value();
            report.evaluation_losses = n;
            scores = agg::eval_random(a, losses);
        }

        nn::ParameterVector global;
        if (opts_.method == AggregationMethod::FedAvg) {
            std::vector<std::size_t> sizes(n);
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                sizes[i] = state_.client_registry[i].n_train;
                total += static_cast<double>(sizes[i]);
            }
            FedAvgFractions f;
            for (auto s : sizes) f.fractions.push_back(static_cast<double>(s) / total);
            report.weights_or_selection = f;
            global = agg::fedavg(locals, sizes);
        } else if (agg::selects_best(opts_.method)) {
            auto sel = agg::select_best(*scores, locals);
            report.weights_or_selection = SelectedClient{sel.client_id};
            global = std::move(sel.params);
        } else {
            auto w = agg::softmax_weights(*scores);
            global = agg::aggregate_softmax(locals, w);
            report.weights_or_selection = std::move(w);
        }
        report.eval_scores = std::move(scores);

        // (4)-(7) decentralized validation of the new global model.
        broadcast(Message::parameters(MessageType::GlobalModel, e, 0, global.values));
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double s = expect(i, MessageType::ValSumLoss, e).loss_value();
            report.per_client_val_sum.emplace_back(id(i), s);
            total += s;
        }
        report.global_val_loss = total;
        broadcast(Message::empty(MessageType::EpochEnd, e, 0));

        report.improved = state_.history.empty() || total < state_.best_checkpoint.global_val_loss;
        if (report.improved) state_.best_checkpoint = {e, global, total};
        state_.global_params = std::move(global);
        state_.epoch = e;
        state_.history.push_back(std::move(report));
        return state_.history.back();
    }

    /// Tells every client to stop; failures on already-dead links are ignored.
    void shutdown() {
        for (auto& l : links_) {
            try {
                l->send(Message::empty(MessageType::Shutdown, state_.epoch, 0));
            } catch (const TransportError&) {
            }
        }
    }

    const ServerState& state() const noexcept { return state_; }
    const nn::NetworkSpec& spec() const noexcept { return spec_; }

private:
    int id(std::size_t i) const { return state_.client_registry[i].client_id; }
    std::uint16_t sender(std::size_t j) const { return static_cast<std::uint16_t>(id(j)); }

    void send_to(std::size_t i, const Message& m) {
        try {
            links_[i]->send(m);
        } catch (const ProtocolError&) {
            throw;
        } catch (const TransportError& err) {
            throw TransportError("epoch " + std::to_string(m.epoch) + " aborted: client " + std::to_string(id(i)) +
                                 ": " + err.what());
        }
    }

    void broadcast(const Message& m) {
        for (std::size_t i = 0; i < links_.size(); ++i) send_to(i, m);
    }

    Message expect(std::size_t i, MessageType type, std::uint32_t epoch) {
        Message m;
        try {
            m = links_[i]->recv(opts_.timeout);
        } catch (const ProtocolError&) {
            throw;
        } catch (const TransportError& err) {
            throw TransportError("epoch " + std::to_string(epoch) + " aborted: client " + std::to_string(id(i)) +
                                 ": " + err.what());
        }
        if (m.type != type || m.epoch != epoch || m.sender != id(i))
            throw ProtocolError("epoch " + std::to_string(epoch) + " aborted: expected " + std::string(to_string(type)) +
                                " from client " + std::to_string(id(i)) + ", got " + std::string(to_string(m.type)) +
                                " (epoch " + std::to_string(m.epoch) + ", sender " + std::to_string(m.sender) + ")");
        return m;
    }

    nn::NetworkSpec spec_;
    ServerOptions opts_;
    std::vector<std::unique_ptr<Channel>> links_;
    ServerState state_;
};

}  // namespace fedrul::fl
