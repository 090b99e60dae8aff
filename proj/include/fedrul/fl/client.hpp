#pragma once

#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "fedrul/data/flight.hpp"
#include "fedrul/fl/evaluation.hpp"
#include "fedrul/fl/transport.hpp"
#include "fedrul/fl/wire.hpp"
#include "fedrul/nn/adam.hpp"
#include "fedrul/nn/network.hpp"
#include "fedrul/util/log.hpp"
#include "fedrul/util/random.hpp"

namespace fedrul::fl {

struct TrainingOptions {
    std::size_t batch_size = 128;
    double learning_rate = 0.001;
    /// Zero the Adam moments whenever a new global model arrives.
    bool reset_optimizer = false;
};

/// Per-client seed stream used when none is given explicitly.
inline std::uint64_t default_client_seed(std::uint64_t training_seed, int client_id) {
    return derive_seed(training_seed, 0x7C11E47, static_cast<std::uint64_t>(client_id));
}

struct ClientState {
    int client_id = 0;
    std::shared_ptr<const data::ClientDataset> dataset;
    nn::ParameterVector local_params;
    nn::AdamState optimizer;
    std::uint64_t train_seed = 0;
};

/// One local epoch from `global`: reshuffled mini-batches, one Adam step each.
inline void train_local_epoch(const nn::NetworkSpec& spec, ClientState& client, const nn::ParameterVector& global,
                              std::uint32_t epoch, const TrainingOptions& opts) {
    const auto& windows = client.dataset->training_windows;
    require(!windows.empty(), "local training needs at least one training window");
    require(opts.batch_size >= 1, "batch size must be positive");
    if (client.optimizer.first_moment.size() != global.size()) client.optimizer = nn::AdamState(global.size());
    if (opts.reset_optimizer) client.optimizer.reset();
    client.optimizer.learning_rate = opts.learning_rate;

    const std::uint64_t epoch_seed = derive_seed(client.train_seed, epoch);
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(epoch_seed);
    rng.shuffle(order);

    nn::ParameterVector params = global;
    nn::AdamState state = std::move(client.optimizer);
    std::size_t batch_index = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += opts.batch_size, ++batch_index) {
        const std::size_t hi = std::min(order.size(), lo + opts.batch_size);
        nn::Batch batch;
        batch.inputs.reserve(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) {
            const auto& w = windows[order[k]];
            batch.inputs.emplace_back(w.values);
            batch.targets.push_back(static_cast<float>(w.rul_label));
        }
        const auto lg = nn::backward(spec, params, batch, true, derive_seed(epoch_seed, 0xD20, batch_index));
        auto step = nn::adam_step(std::move(state), std::move(params), lg.gradient);
        params = std::move(step.params);
        state = std::move(step.state);
    }
    client.local_params = std::move(params);
    client.optimizer = std::move(state);
}

/// Client side of the round protocol, driven one message at a time.
class ClientWorker {
public:
    ClientWorker(nn::NetworkSpec spec, ClientState state, TrainingOptions opts = {})
        : spec_(std::move(spec)), state_(std::move(state)), opts_(opts) {
        require(state_.dataset != nullptr, "client has no dataset");
        require(state_.client_id >= 0 && state_.client_id <= 0xFFFF, "client id must fit in 16 bits");
    }

    Message hello() const { return Message::hello(id(), state_.dataset->n_train()); }

    /// Replies to one server message.
    std::vector<Message> handle(const Message& m) {
        if (m.type == MessageType::Shutdown) {
            phase_ = Phase::Done;
            return {};
        }
        switch (phase_) {
            case Phase::Train:
                if (m.type == MessageType::GlobalModel) {
                    epoch_ = m.epoch;
                    train_local_epoch(spec_, state_, as_params(m), m.epoch, opts_);
                    phase_ = Phase::Aggregate;
                    return {Message::parameters(MessageType::LocalModel, epoch_, id(), state_.local_params.values)};
                }
                break;
            case Phase::Aggregate:
                if (m.epoch != epoch_) break;
                if (m.type == MessageType::EvalAssignment) {
                    const double loss = evaluate_model_on_validation(spec_, as_params(m), *state_.dataset, Metric::RMSE);
                    return {Message::loss(MessageType::EvalLoss, epoch_, id(), loss)};
                }
                if (m.type == MessageType::GlobalModel) {
                    const double sum = evaluate_model_on_validation(spec_, as_params(m), *state_.dataset, Metric::SSE);
                    phase_ = Phase::Validated;
                    return {Message::loss(MessageType::ValSumLoss, epoch_, id(), sum)};
                }
                break;
            case Phase::Validated:
                if (m.type == MessageType::EpochEnd && m.epoch == epoch_) {
                    phase_ = Phase::Train;
                    return {};
                }
                break;
            case Phase::Done: break;
        }
        throw ProtocolError("client " + std::to_string(state_.client_id) + ": unexpected " +
                            std::string(to_string(m.type)) + " for epoch " + std::to_string(m.epoch));
    }

    bool finished() const noexcept { return phase_ == Phase::Done; }
    const ClientState& state() const noexcept { return state_; }

private:
    enum class Phase { Train, Aggregate, Validated, Done };

    std::uint16_t id() const { return static_cast<std::uint16_t>(state_.client_id); }

    nn::ParameterVector as_params(const Message& m) const {
        nn::ParameterVector p;
        p.values = m.params();
        if (p.values.size() != spec_.parameter_count())
            throw ProtocolError("client " + std::to_string(state_.client_id) + ": received " +
                                std::to_string(p.values.size()) + " parameters, expected " +
                                std::to_string(spec_.parameter_count()));
        p.layout = spec_.layout();
        return p;
    }

    nn::NetworkSpec spec_;
    ClientState state_;
    TrainingOptions opts_;
    Phase phase_ = Phase::Train;
    std::uint32_t epoch_ = 0;
};

/// Registers with the server and serves requests until Shutdown. Any failure
/// closes the channel so the server sees the client drop out.
inline void run_client(ClientWorker& worker, Channel& channel, Millis timeout) {
    try {
        channel.send(worker.hello());
        while (!worker.finished()) {
            const auto request = channel.recv(timeout);
            for (const auto& reply : worker.handle(request)) channel.send(reply);
        }
    } catch (const std::exception& e) {
        log::warn(std::string("client ") + std::to_string(worker.state().client_id) + " stopped: " + e.what());
        channel.close();
        throw;
    }
}

}  // namespace fedrul::fl
