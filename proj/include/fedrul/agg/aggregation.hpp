#pragma once

// Server-side aggregation of local models: FedAvg, cross-client evaluation
// scores under the full and random validation policies, and the best-model
// and softmax aggregation policies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedrul/nn/network.hpp"
#include "fedrul/util/error.hpp"
#include "fedrul/util/random.hpp"

namespace fedrul::agg {

using nn::ParameterVector;

enum class AggregationMethod : std::uint8_t { FedAvg, RandomBest, RandomSoftmax, FullBest, FullSoftmax };

inline constexpr AggregationMethod kAllMethods[] = {AggregationMethod::FedAvg, AggregationMethod::RandomBest,
                                                    AggregationMethod::RandomSoftmax, AggregationMethod::FullBest,
                                                    AggregationMethod::FullSoftmax};

inline std::string_view to_string(AggregationMethod m) {
    switch (m) {
        case AggregationMethod::FedAvg: return "fedavg";
        case AggregationMethod::RandomBest: return "random-best";
        case AggregationMethod::RandomSoftmax: return "random-softmax";
        case AggregationMethod::FullBest: return "full-best";
        case AggregationMethod::FullSoftmax: return "full-softmax";
    }
    return "?";
}

inline std::optional<AggregationMethod> parse_method(std::string_view name) {
    for (auto m : kAllMethods)
        if (to_string(m) == name) return m;
    return std::nullopt;
}

inline bool uses_full_policy(AggregationMethod m) {
    return m == AggregationMethod::FullBest || m == AggregationMethod::FullSoftmax;
}
inline bool uses_random_policy(AggregationMethod m) {
    return m == AggregationMethod::RandomBest || m == AggregationMethod::RandomSoftmax;
}
inline bool selects_best(AggregationMethod m) {
    return m == AggregationMethod::RandomBest || m == AggregationMethod::FullBest;
}
inline bool weights_softmax(AggregationMethod m) {
    return m == AggregationMethod::RandomSoftmax || m == AggregationMethod::FullSoftmax;
}

struct EvaluationScore {
    int client_id = 0;
    double score = 0.0;

    bool operator==(const EvaluationScore&) const = default;
};

/// evaluator[j] is the position of the client that evaluates model j.
struct Assignment {
    std::vector<int> client_ids;
    std::vector<std::size_t> evaluator;

    std::size_t size() const noexcept { return evaluator.size(); }
    bool operator==(const Assignment&) const = default;
};

struct ClientWeights {
    std::vector<double> alpha;

    std::size_t size() const noexcept { return alpha.size(); }
    bool operator==(const ClientWeights&) const = default;
};

namespace detail {

inline void check_same_length(std::span<const ParameterVector> params, const char* what) {
    require(!params.empty(), what);
    for (const auto& p : params)
        if (p.size() != params.front().size())
            throw ContractError(std::string(what) + ": parameter vectors differ in length");
}

/// sum_i weight_i * params_i, accumulated in double.
inline ParameterVector weighted_sum(std::span<const ParameterVector> params, std::span<const double> weights) {
    const std::size_t n = params.front().size();
    std::vector<double> acc(n, 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double w = weights[i];
        const float* src = params[i].values.data();
        for (std::size_t k = 0; k < n; ++k) acc[k] += w * static_cast<double>(src[k]);
    }
    ParameterVector out;
    out.values.assign(acc.begin(), acc.end());
    out.layout = params.front().layout;
    return out;
}

}  // namespace detail

/// Median; even counts average the middle pair.
inline double median(std::vector<double> values) {
    require(!values.empty(), "median of an empty set");
    const std::size_t n = values.size();
    std::sort(values.begin(), values.end());
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// Dataset-size weighted average, w_G = sum_i (|T_i| / n) w_i.
inline ParameterVector fedavg(std::span<const ParameterVector> params, std::span<const std::size_t> n_train) {
    detail::check_same_length(params, "fedavg");
    require(n_train.size() == params.size(), "fedavg: one training-set size per model is required");
    double total = 0.0;
    for (auto n : n_train) {
        require(n >= 1, "fedavg: training-set sizes must be positive");
        total += static_cast<double>(n);
    }
    std::vector<double> fractions(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) fractions[i] = static_cast<double>(n_train[i]) / total;
    return detail::weighted_sum(params, fractions);
}

/// E_j = median over evaluators i of losses[i][j] (full validation policy).
inline std::vector<EvaluationScore> eval_full(std::span<const int> client_ids,
                                              const std::vector<std::vector<double>>& losses) {
    const std::size_t n = client_ids.size();
    require(n >= 1, "eval_full: no clients");
    if (losses.size() != n) throw ContractError("eval_full: loss matrix needs one row per evaluating client");
    for (const auto& row : losses) {
        if (row.size() != n) throw ContractError("eval_full: loss matrix has missing entries");
        for (double v : row)
            if (!std::isfinite(v) || v < 0.0) throw ContractError("eval_full: losses must be finite and non-negative");
    }
    std::vector<EvaluationScore> out(n);
    std::vector<double> column(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) column[i] = losses[i][j];
        out[j] = {client_ids[j], median(column)};
    }
    return out;
}

inline bool is_derangement(const Assignment& a) {
    const std::size_t n = a.size();
    if (a.client_ids.size() != n) return false;
    std::vector<bool> used(n, false);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = a.evaluator[j];
        if (i >= n || used[i]) return false;
        if (n >= 2 && i == j) return false;
        used[i] = true;
    }
    return true;
}

/// E_j is the single loss reported for model j by its assigned evaluator
/// (random validation policy).
inline std::vector<EvaluationScore> eval_random(const Assignment& assignment, std::span<const double> losses) {
    if (!is_derangement(assignment)) throw ContractError("eval_random: assignment is not a derangement");
    if (losses.size() != assignment.size()) throw ContractError("eval_random: one loss per assigned model is required");
    std::vector<EvaluationScore> out(losses.size());
    for (std::size_t j = 0; j < losses.size(); ++j) {
        if (!std::isfinite(losses[j]) || losses[j] < 0.0)
            throw ContractError("eval_random: losses must be finite and non-negative");
        out[j] = {assignment.client_ids[j], losses[j]};
    }
    return out;
}

/// Uniform random derangement by rejection sampling over permutations.
inline Assignment draw_assignment(std::span<const int> client_ids, std::uint64_t seed) {
    const std::size_t n = client_ids.size();
    if (n < 2) throw ContractError("draw_assignment: the random policy needs at least 2 clients");
    Rng rng(derive_seed(seed, 0xA551));
    Assignment a{{client_ids.begin(), client_ids.end()}, std::vector<std::size_t>(n)};
    for (;;) {
        std::iota(a.evaluator.begin(), a.evaluator.end(), std::size_t{0});
        rng.shuffle(a.evaluator);
        if (is_derangement(a)) return a;
    }
}

inline constexpr double kScoreEpsilon = 1e-12;

/// Softmax of the z-scored inverse evaluation scores. A_i = 1/max(E_i, eps);
/// sigma uses the N-1 denominator; a degenerate sigma yields uniform weights.
inline ClientWeights softmax_weights(std::span<const EvaluationScore> scores) {
    const std::size_t n = scores.size();
    if (n < 2) throw ContractError("softmax_weights: at least 2 clients are required");
    std::vector<double> inv(n);
    for (std::size_t i = 0; i < n; ++i) {
        require(scores[i].score >= 0.0 && !std::isnan(scores[i].score), "softmax_weights: scores must be >= 0");
        inv[i] = 1.0 / std::max(scores[i].score, kScoreEpsilon);
    }
    const double mu = std::accumulate(inv.begin(), inv.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double a : inv) ss += (a - mu) * (a - mu);
    const double sigma = std::sqrt(ss / static_cast<double>(n - 1));

    ClientWeights w;
    if (!(sigma >= 1e-12)) {
        w.alpha.assign(n, 1.0 / static_cast<double>(n));
        return w;
    }
    std::vector<double> z(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = (inv[i] - mu) / sigma;
    const double zmax = *std::max_element(z.begin(), z.end());
    double denom = 0.0;
    w.alpha.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        w.alpha[i] = std::exp(z[i] - zmax);
        denom += w.alpha[i];
    }
    for (double& a : w.alpha) a /= denom;
    return w;
}

/// w_G = sum_i alpha_i w_i.
inline ParameterVector aggregate_softmax(std::span<const ParameterVector> params, const ClientWeights& weights) {
    detail::check_same_length(params, "aggregate_softmax");
    if (weights.size() != params.size()) throw ContractError("aggregate_softmax: one weight per model is required");
    const double sum = std::accumulate(weights.alpha.begin(), weights.alpha.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9) throw ContractError("aggregate_softmax: weights must sum to 1");
    for (double a : weights.alpha)
        if (!(a >= 0.0)) throw ContractError("aggregate_softmax: weights must be non-negative");
    return detail::weighted_sum(params, weights.alpha);
}

struct Selection {
    ParameterVector params;
    int client_id = 0;
    std::size_t position = 0;
};

/// The model with the lowest evaluation score; ties go to the lowest client id.
inline Selection select_best(std::span<const EvaluationScore> scores, std::span<const ParameterVector> params) {
    require(!scores.empty(), "select_best: no scores");
    require(scores.size() == params.size(), "select_best: one model per score is required");
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const auto& s = scores[i];
        const auto& b = scores[best];
        if (s.score < b.score || (s.score == b.score && s.client_id < b.client_id)) best = i;
    }
    return {params[best], scores[best].client_id, best};
}

}  // namespace fedrul::agg
