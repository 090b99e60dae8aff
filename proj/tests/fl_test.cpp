#include <gtest/gtest.h>

#include <functional>
#include <map>

#include "fedrul/data/synth.hpp"
#include "fedrul/data/transform.hpp"
#include "fedrul/fl/runtime.hpp"

namespace fedrul::fl {
namespace {

using data::ClientDataset;

data::SynthProfile tiny_profile() {
    data::SynthProfile p;
    p.min_flights = 10;
    p.max_flights = 14;
    p.steps_per_flight = 70;
    return p;
}

std::shared_ptr<const ClientDataset> tiny_client(int client_id, std::uint64_t seed, int engine = -1) {
    const auto engines = data::synth_generate(1, seed, tiny_profile(), engine < 0 ? client_id + 1 : engine);
    data::DatasetOptions opts;
    opts.split_seed = derive_seed(seed, 77);
    return std::make_shared<ClientDataset>(data::build_client_dataset(client_id, engines[0], opts));
}

std::vector<ClientSetup> tiny_federation(int n, std::uint64_t seed = 1) {
    std::vector<ClientSetup> out;
    for (int i = 0; i < n; ++i) out.push_back({tiny_client(i, seed), default_client_seed(seed, i)});
    return out;
}

FederationConfig tiny_config(AggregationMethod m, std::uint32_t epochs) {
    FederationConfig cfg;
    cfg.spec = nn::NetworkSpec::rul_cnn(11);
    cfg.method = m;
    cfg.epochs = epochs;
    cfg.assignment_seed = 5;
    cfg.timeout = Millis(60000);
    return cfg;
}

// --- evaluation helpers ---------------------------------------------------

nn::ParameterVector constant_model(const nn::NetworkSpec& spec, float bias) {
    nn::ParameterVector p;
    p.values.assign(spec.parameter_count(), 0.0f);
    p.layout = spec.layout();
    p.values.back() = bias;
    return p;
}

ClientDataset windows_with_labels(const std::vector<int>& labels, int input_size) {
    ClientDataset ds;
    for (int y : labels) {
        data::WindowSample w;
        w.values.assign(static_cast<std::size_t>(input_size), 0.25f);
        w.rul_label = y;
        ds.validation_windows.push_back(w);
    }
    return ds;
}

TEST(Evaluation, ZeroNetworkZeroTargets) {
    const auto spec = nn::NetworkSpec::rul_cnn(1);
    const auto ds = windows_with_labels({0, 0, 0}, static_cast<int>(spec.input_size()));
    const auto zero = constant_model(spec, 0.0f);
    EXPECT_EQ(evaluate_model_on_validation(spec, zero, ds, Metric::RMSE), 0.0);
    EXPECT_EQ(evaluate_model_on_validation(spec, zero, ds, Metric::SSE), 0.0);
}

TEST(Evaluation, SingleWindowResidual) {
    const auto spec = nn::NetworkSpec::rul_cnn(1);
    const auto ds = windows_with_labels({3}, static_cast<int>(spec.input_size()));
    const auto one = constant_model(spec, 1.0f);
    EXPECT_DOUBLE_EQ(evaluate_model_on_validation(spec, one, ds, Metric::RMSE), 2.0);
    EXPECT_DOUBLE_EQ(evaluate_model_on_validation(spec, one, ds, Metric::SSE), 4.0);
}

TEST(Evaluation, SseIsCountTimesMeanSquare) {
    const auto spec = nn::NetworkSpec::rul_cnn(4);
    const auto ds = tiny_client(0, 4);
    const auto p = nn::init_parameters(spec);
    const double rmse = evaluate_model_on_validation(spec, p, *ds, Metric::RMSE);
    const double sse = evaluate_model_on_validation(spec, p, *ds, Metric::SSE);
    const double n = static_cast<double>(ds->validation_windows.size());
    EXPECT_NEAR(sse, n * rmse * rmse, 1e-6 * sse);
}

TEST(Evaluation, EmptyValidationSetIsAnError) {
    const auto spec = nn::NetworkSpec::rul_cnn(1);
    EXPECT_THROW(evaluate_model_on_validation(spec, constant_model(spec, 0), ClientDataset{}, Metric::SSE),
                 ContractError);
}

// Linear read-out of the first step of each window.
struct FirstStepModel {
    nn::NetworkSpec spec{{nn::LayerSpec::output()}, 50, 1, 0};
    nn::ParameterVector params;
    FirstStepModel() {
        params.values.assign(spec.parameter_count(), 0.0f);
        params.values[0] = 1.0f;
    }
};

data::FlightSeries ramp_flight(int steps, float start, float slope) {
    data::FlightSeries f;
    f.channels = 1;
    for (int t = 0; t < steps; ++t) f.measurements.push_back(start + slope * static_cast<float>(t));
    return f;
}

TEST(PredictFlight, OddAndEvenMedian) {
    FirstStepModel m;
    // Windows start at steps 1, 11, 21 (, 31): first values 5, 7, 9 (, 11).
    EXPECT_DOUBLE_EQ(predict_flight_rul(m.spec, m.params, ramp_flight(70, 5.0f, 0.2f)), 7.0);
    EXPECT_DOUBLE_EQ(predict_flight_rul(m.spec, m.params, ramp_flight(80, 5.0f, 0.2f)), 8.0);
}

TEST(PredictFlight, ConstantModelAndShortFlight) {
    FirstStepModel m;
    auto p = m.params;
    p.values[0] = 0.0f;
    p.values.back() = 42.5f;
    EXPECT_DOUBLE_EQ(predict_flight_rul(m.spec, p, ramp_flight(120, 1.0f, 1.0f)), 42.5);
    EXPECT_THROW(predict_flight_rul(m.spec, p, ramp_flight(49, 1.0f, 1.0f)), ContractError);
}

TEST(Validation, DecentralizedSumEqualsPooledSse) {
    const auto spec = nn::NetworkSpec::rul_cnn(2);
    const auto fed = tiny_federation(4, 21);
    const auto p = nn::init_parameters(spec);
    double sum = 0.0;
    std::vector<data::WindowSample> pooled;
    for (const auto& c : fed) {
        sum += evaluate_model_on_validation(spec, p, *c.dataset, Metric::SSE);
        pooled.insert(pooled.end(), c.dataset->validation_windows.begin(), c.dataset->validation_windows.end());
    }
    // Straight-line pooled SSE.
    double central = 0.0;
    for (const auto& w : pooled) {
        nn::Batch b;
        b.inputs.emplace_back(w.values);
        b.targets.push_back(static_cast<float>(w.rul_label));
        const double r = nn::forward(spec, p, b, false, 0)[0] - static_cast<double>(w.rul_label);
        central += r * r;
    }
    EXPECT_NEAR(sum, central, 1e-6 * central);
}

// --- server against scripted clients ----------------------------------------

/// A client whose replies are fixed functions of the epoch.
struct ScriptedClient {
    int id;
    std::size_t n_train;
    std::function<std::vector<float>(std::uint32_t)> local_model;
    std::function<double(std::uint32_t)> val_sum;
    std::function<double(std::uint32_t, int)> eval_loss = [](std::uint32_t, int) { return 1.0; };
    int eval_requests = 0;
    bool fail_on_eval = false;

    std::vector<Message> handle(const Message& m) {
        const auto me = static_cast<std::uint16_t>(id);
        switch (m.type) {
            case MessageType::GlobalModel:
                if (!awaiting_validation) {
                    awaiting_validation = true;
                    return {Message::parameters(MessageType::LocalModel, m.epoch, me, local_model(m.epoch))};
                }
                awaiting_validation = false;
                return {Message::loss(MessageType::ValSumLoss, m.epoch, me, val_sum(m.epoch))};
            case MessageType::EvalAssignment:
                ++eval_requests;
                if (fail_on_eval) throw TransportError("client crashed");
                return {Message::loss(MessageType::EvalLoss, m.epoch, me, eval_loss(m.epoch, m.sender))};
            default: return {};
        }
    }
    bool awaiting_validation = false;
};

nn::NetworkSpec scalar_spec() { return nn::NetworkSpec({nn::LayerSpec::output()}, 1, 2, 0); }  // 3 params

Server scripted_server(std::vector<std::shared_ptr<ScriptedClient>> clients, AggregationMethod m) {
    std::vector<std::unique_ptr<Channel>> links;
    for (auto& c : clients)
        links.push_back(std::make_unique<LoopbackChannel>(
            [c](const Message& msg) { return c->handle(msg); },
            std::vector<Message>{Message::hello(static_cast<std::uint16_t>(c->id), c->n_train)}));
    ServerOptions opts;
    opts.method = m;
    opts.assignment_seed = 3;
    Server s(scalar_spec(), nn::ParameterVector{{0.0f, 0.0f, 0.0f}, {}}, opts, std::move(links));
    s.register_clients();
    return s;
}

std::shared_ptr<ScriptedClient> scripted(int id, std::size_t n, std::vector<float> model,
                                         std::function<double(std::uint32_t)> val) {
    auto c = std::make_shared<ScriptedClient>();
    c->id = id;
    c->n_train = n;
    c->local_model = [model](std::uint32_t) { return model; };
    c->val_sum = std::move(val);
    return c;
}

TEST(Server, CheckpointIsArgminOfLossSequence) {
    const std::vector<double> losses = {10, 5, 8};
    auto a = scripted(0, 1, {1, 1, 1}, [&](std::uint32_t e) { return losses[e - 1] * 0.25; });
    auto b = scripted(1, 3, {2, 2, 2}, [&](std::uint32_t e) { return losses[e - 1] * 0.75; });
    auto s = scripted_server({a, b}, AggregationMethod::FedAvg);
    for (int e = 0; e < 3; ++e) s.run_epoch();
    EXPECT_EQ(s.state().best_checkpoint.epoch, 2u);
    EXPECT_DOUBLE_EQ(s.state().best_checkpoint.global_val_loss, 5.0);
    for (const auto& r : s.state().history) {
        EXPECT_LE(s.state().best_checkpoint.global_val_loss, r.global_val_loss);
        EXPECT_EQ(r.global_val_loss, r.per_client_val_sum[0].second + r.per_client_val_sum[1].second);
    }
    // FedAvg fractions 1/4 and 3/4.
    EXPECT_EQ(s.state().global_params.values, (std::vector<float>{1.75f, 1.75f, 1.75f}));
    const auto& f = std::get<FedAvgFractions>(s.state().history[0].weights_or_selection);
    EXPECT_EQ(f.fractions, (std::vector<double>{0.25, 0.75}));
}

TEST(Server, StrictlyDecreasingLossPicksLastEpoch) {
    auto a = scripted(0, 1, {1, 0, 0}, [](std::uint32_t e) { return 100.0 / e; });
    auto s = scripted_server({a}, AggregationMethod::FedAvg);
    for (int e = 0; e < 4; ++e) s.run_epoch();
    EXPECT_EQ(s.state().best_checkpoint.epoch, 4u);
}

TEST(Server, EvaluationCountsPerPolicy) {
    for (auto m : agg::kAllMethods) {
        std::vector<std::shared_ptr<ScriptedClient>> cs;
        for (int i = 0; i < 4; ++i) cs.push_back(scripted(i, 10, {float(i), 0, 0}, [](std::uint32_t) { return 1.0; }));
        auto s = scripted_server(cs, m);
        const auto& r = s.run_epoch();
        int total = 0;
        for (const auto& c : cs) total += c->eval_requests;
        const int expected = agg::uses_full_policy(m) ? 16 : agg::uses_random_policy(m) ? 4 : 0;
        EXPECT_EQ(total, expected) << agg::to_string(m);
        EXPECT_EQ(r.evaluation_losses, static_cast<std::size_t>(expected));
        EXPECT_EQ(r.eval_scores.has_value(), expected > 0);
        if (agg::uses_random_policy(m)) {
            for (const auto& c : cs) EXPECT_EQ(c->eval_requests, 1);
        }
    }
}

TEST(Server, RandomPolicyNeverSelfEvaluates) {
    std::vector<std::shared_ptr<ScriptedClient>> cs;
    std::map<int, int> self_evals;
    for (int i = 0; i < 5; ++i) {
        auto c = scripted(i, 10, {float(i), 0, 0}, [](std::uint32_t) { return 1.0; });
        c->eval_loss = [&self_evals, i](std::uint32_t, int owner) {
            if (owner == i) ++self_evals[i];
            return 1.0 + owner;
        };
        cs.push_back(c);
    }
    auto s = scripted_server(cs, AggregationMethod::RandomBest);
    for (int e = 0; e < 20; ++e) {
        const auto& r = s.run_epoch();
        // The loss reported for model j is 1 + j, so scores identify owners.
        for (const auto& sc : *r.eval_scores) EXPECT_EQ(sc.score, 1.0 + sc.client_id);
        EXPECT_EQ(std::get<SelectedClient>(r.weights_or_selection).client_id, 0);
    }
    EXPECT_TRUE(self_evals.empty());
}

TEST(Server, FullPolicyScoresAreColumnMedians) {
    std::vector<std::shared_ptr<ScriptedClient>> cs;
    for (int i = 0; i < 3; ++i) {
        auto c = scripted(i, 10, {float(i), float(-i), 1}, [](std::uint32_t) { return 1.0; });
        // Evaluator i reports (i + 1) * (owner + 1) for model `owner`.
        c->eval_loss = [i](std::uint32_t, int owner) { return (i + 1.0) * (owner + 1.0); };
        cs.push_back(c);
    }
    auto s = scripted_server(cs, AggregationMethod::FullSoftmax);
    const auto& r = s.run_epoch();
    ASSERT_TRUE(r.eval_scores);
    EXPECT_EQ((*r.eval_scores)[0].score, 2.0);
    EXPECT_EQ((*r.eval_scores)[1].score, 4.0);
    EXPECT_EQ((*r.eval_scores)[2].score, 6.0);
    const auto& w = std::get<ClientWeights>(r.weights_or_selection);
    EXPECT_GT(w.alpha[0], w.alpha[1]);
    EXPECT_GT(w.alpha[1], w.alpha[2]);
}

TEST(Server, ClientFailureAbortsEpochWithoutUpdating) {
    auto a = scripted(0, 10, {1, 1, 1}, [](std::uint32_t) { return 1.0; });
    auto b = scripted(1, 10, {3, 3, 3}, [](std::uint32_t) { return 1.0; });
    auto s = scripted_server({a, b}, AggregationMethod::FullBest);
    s.run_epoch();
    const auto before = s.state().global_params;
    b->fail_on_eval = true;
    EXPECT_THROW(s.run_epoch(), TransportError);
    EXPECT_EQ(s.state().epoch, 1u);
    EXPECT_EQ(s.state().history.size(), 1u);
    EXPECT_EQ(s.state().global_params, before);
}

TEST(Server, DisconnectedClientIsDiagnosed) {
    auto [server_end, client_end] = make_inproc_pair();
    client_end->send(Message::hello(7, 10));
    std::vector<std::unique_ptr<Channel>> links;
    links.push_back(std::move(server_end));
    Server s(scalar_spec(), nn::ParameterVector{{0, 0, 0}, {}}, ServerOptions{AggregationMethod::FedAvg, 0, Millis(2000)},
             std::move(links));
    s.register_clients();
    client_end->close();
    try {
        s.run_epoch();
        FAIL() << "epoch completed with a dead client";
    } catch (const TransportError& e) {
        EXPECT_NE(std::string(e.what()).find("client 7"), std::string::npos) << e.what();
    }
}

TEST(Server, ProtocolViolationsAreRejected) {
    auto a = scripted(0, 10, {1, 1}, [](std::uint32_t) { return 1.0; });  // wrong model size
    auto s = scripted_server({a}, AggregationMethod::FedAvg);
    EXPECT_THROW(s.run_epoch(), ProtocolError);
}

TEST(Client, RejectsOutOfPhaseMessages) {
    const auto spec = nn::NetworkSpec::rul_cnn(1);
    ClientState st;
    st.dataset = tiny_client(0, 3);
    ClientWorker w(spec, st);
    const auto p = nn::init_parameters(spec);
    EXPECT_THROW(w.handle(Message::parameters(MessageType::EvalAssignment, 1, 2, p.values)), ProtocolError);
    EXPECT_THROW(w.handle(Message::empty(MessageType::EpochEnd, 1, 0)), ProtocolError);
    EXPECT_TRUE(w.handle(Message::empty(MessageType::Shutdown, 0, 0)).empty());
    EXPECT_TRUE(w.finished());
}

// --- full runs --------------------------------------------------------------

TEST(Training, ZeroLearningRateKeepsInitialModel) {
    for (auto m : agg::kAllMethods) {
        auto cfg = tiny_config(m, 1);
        cfg.training.learning_rate = 0.0;
        const auto fed = tiny_federation(2);
        const auto result = run_training(cfg, fed);
        const auto init = nn::init_parameters(cfg.spec);
        EXPECT_EQ(result.final_state.global_params, init) << agg::to_string(m);
        double untrained = 0.0;
        for (const auto& c : fed) untrained += evaluate_model_on_validation(cfg.spec, init, *c.dataset, Metric::SSE);
        EXPECT_EQ(result.final_state.history[0].global_val_loss, untrained);
    }
}

TEST(Training, IdenticalClientsFedAvgEqualsLocalModel) {
    auto cfg = tiny_config(AggregationMethod::FedAvg, 1);
    auto ds = tiny_client(0, 8);
    auto twin = std::make_shared<ClientDataset>(*ds);
    twin->client_id = 1;
    const std::vector<ClientSetup> fed = {{ds, 99}, {twin, 99}};
    const auto result = run_training(cfg, fed);

    ClientState solo;
    solo.dataset = ds;
    solo.train_seed = 99;
    train_local_epoch(cfg.spec, solo, nn::init_parameters(cfg.spec), 1, cfg.training);
    EXPECT_EQ(result.final_state.global_params.values, solo.local_params.values);
}

TEST(Training, AllMethodsAgreeOnIdenticalClients) {
    auto ds = tiny_client(0, 12);
    std::vector<ClientSetup> fed;
    for (int i = 0; i < 3; ++i) {
        auto copy = std::make_shared<ClientDataset>(*ds);
        copy->client_id = i;
        fed.push_back({copy, 1234});
    }
    std::vector<std::vector<nn::ParameterVector>> per_method;
    for (auto m : agg::kAllMethods) {
        std::vector<nn::ParameterVector> trail;
        auto cfg = tiny_config(m, 2);
        cfg.mode = ExecutionMode::SingleThreaded;
        const auto r = run_training(cfg, fed);
        trail.push_back(r.final_state.global_params);
        trail.push_back(r.best_params);
        per_method.push_back(trail);
    }
    for (std::size_t k = 1; k < per_method.size(); ++k)
        EXPECT_EQ(per_method[k], per_method[0]) << agg::to_string(agg::kAllMethods[k]);
}

TEST(Training, ReturnsBestCheckpointAndIsDeterministic) {
    auto cfg = tiny_config(AggregationMethod::RandomSoftmax, 3);
    const auto fed = tiny_federation(3, 4);
    const auto a = run_training(cfg, fed);
    const auto b = run_training(cfg, fed);
    EXPECT_EQ(a.final_state.history, b.final_state.history);
    EXPECT_EQ(a.best_params, b.best_params);
    EXPECT_EQ(a.best_params, a.final_state.best_checkpoint.params);
    double best = a.final_state.history[0].global_val_loss;
    for (const auto& r : a.final_state.history) best = std::min(best, r.global_val_loss);
    EXPECT_EQ(a.final_state.best_checkpoint.global_val_loss, best);
}

TEST(Training, BackendsAndModesAreEquivalent) {
    auto cfg = tiny_config(AggregationMethod::FullSoftmax, 2);
    const auto fed = tiny_federation(3, 6);
    const auto inproc = run_training(cfg, fed);
    cfg.transport = TransportKind::Tcp;
    const auto tcp = run_training(cfg, fed);
    cfg.transport = TransportKind::Inproc;
    cfg.mode = ExecutionMode::SingleThreaded;
    const auto single = run_training(cfg, fed);
    EXPECT_EQ(inproc.final_state.history, tcp.final_state.history);
    EXPECT_EQ(inproc.final_state.history, single.final_state.history);
    EXPECT_EQ(inproc.best_params, tcp.best_params);
    EXPECT_EQ(inproc.best_params, single.best_params);
}

TEST(Training, OptimizerResetChangesTrajectory) {
    auto cfg = tiny_config(AggregationMethod::FedAvg, 2);
    const auto fed = tiny_federation(2, 9);
    const auto carried = run_training(cfg, fed);
    cfg.training.reset_optimizer = true;
    const auto reset = run_training(cfg, fed);
    EXPECT_EQ(carried.final_state.history[0], reset.final_state.history[0]);
    EXPECT_NE(carried.final_state.global_params, reset.final_state.global_params);
}

}  // namespace
}  // namespace fedrul::fl
