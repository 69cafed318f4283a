#include "fedbench/fedalgo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedbench {
namespace {

std::vector<const ClientUpdate*> by_client_id(std::span<const ClientUpdate> updates) {
    std::vector<const ClientUpdate*> sorted;
    sorted.reserve(updates.size());
    for (const auto& u : updates) sorted.push_back(&u);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
    return sorted;
}

Batch<double> gather(const Dataset& ds, std::span<const std::size_t> rows) {
    Batch<double> batch;
    batch.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
    batch.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        batch.features.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(rows[r]));
        batch.labels[static_cast<Eigen::Index>(r)] = ds.labels[static_cast<Eigen::Index>(rows[r])];
    }
    return batch;
}

}  // namespace

std::string_view to_string(AlgorithmKind kind) {
    return kind == AlgorithmKind::fedavg ? "fedavg" : "fedcurv";
}

AlgorithmKind algorithm_kind_from_string(std::string_view name) {
    if (name == "fedavg") return AlgorithmKind::fedavg;
    if (name == "fedcurv") return AlgorithmKind::fedcurv;
    throw std::invalid_argument("unknown algorithm '" + std::string(name) + "'");
}

void AlgorithmConfig::validate() const {
    if (epochs_per_round < 1) throw std::invalid_argument("algorithm: epochs_per_round must be >= 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("algorithm: lambda must be >= 0");
}

void CompensatedSum::add(const Vector<double>& x, double weight) {
    if (x.size() != sum_.size()) throw std::invalid_argument("compensated sum: dimension mismatch");
    for (Eigen::Index i = 0; i < sum_.size(); ++i) {
        const double term = weight * x[i];
        const double t = sum_[i] + term;
        if (std::abs(sum_[i]) >= std::abs(term))
            carry_[i] += (sum_[i] - t) + term;
        else
            carry_[i] += (term - t) + sum_[i];
        sum_[i] = t;
    }
}

PenaltyView penalty_view(const FedCurvPenaltyState& state, std::uint32_t client_id) {
    PenaltyView view{state.sum_fisher, state.sum_fisher_params};
    if (auto it = state.per_client.find(client_id); it != state.per_client.end()) {
        view.sum_fisher -= it->second.fisher;
        view.sum_fisher_params -= it->second.fisher_times_params;
    }
    return view;
}

double penalty_value(const PenaltyView& view, const Vector<double>& theta, double lambda) {
    return lambda * (theta.dot(view.sum_fisher.cwiseProduct(theta)) - 2.0 * theta.dot(view.sum_fisher_params));
}

Vector<double> penalty_gradient(const PenaltyView& view, const Vector<double>& theta, double lambda) {
    return 2.0 * lambda * (view.sum_fisher.cwiseProduct(theta) - view.sum_fisher_params);
}

ClientUpdate local_train(const ModelSpec& spec, const Vector<double>& global_params, const Dataset& client_data,
                         OptimizerState<double>& optimizer, const AlgorithmConfig& algo,
                         const PenaltyView* penalty, std::uint64_t seed, std::uint32_t client_id) {
    algo.validate();
    const std::size_t n = client_data.size();
    if (n == 0) throw std::invalid_argument("local_train: empty client data");
    if (penalty && algo.kind != AlgorithmKind::fedcurv)
        throw std::invalid_argument("local_train: penalty supplied to a fedavg client");
    if (penalty && (penalty->sum_fisher.size() != global_params.size() ||
                    penalty->sum_fisher_params.size() != global_params.size()))
        throw std::invalid_argument("local_train: penalty state has the wrong dimension");
    const bool use_penalty = penalty && algo.lambda > 0.0;

    Vector<double> theta = global_params;
    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batch_size =
        algo.batch_size == AlgorithmConfig::kFullBatch ? n : std::min(algo.batch_size, n);
    const bool full_batch = batch_size == n;

    // A full batch is order independent; keep it in dataset order.
    std::optional<Batch<double>> whole;
    if (full_batch) whole = Batch<double>{client_data.features, client_data.labels};

    Batch<double> scratch;
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < algo.epochs_per_round; ++epoch) {
        if (!full_batch) std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t len = std::min(batch_size, n - start);
            if (!full_batch) scratch = gather(client_data, std::span(order).subspan(start, len));
            auto step = loss_and_gradient(spec, theta, full_batch ? *whole : scratch);
            if (use_penalty) {
                step.loss += penalty_value(*penalty, theta, algo.lambda);
                step.grad += penalty_gradient(*penalty, theta, algo.lambda);
            }
            optimizer_step(optimizer, theta, step.grad);
            loss_sum += step.loss;
            ++steps;
        }
    }

    ClientUpdate update;
    update.client_id = client_id;
    update.sample_count = n;
    update.local_loss = loss_sum / static_cast<double>(steps);
    if (algo.kind == AlgorithmKind::fedcurv) {
        const Batch<double> all = whole ? *whole : Batch<double>{client_data.features, client_data.labels};
        update.fisher = fisher_diagonal(spec, theta, all);
        update.fisher_times_params = update.fisher->values.cwiseProduct(theta);
    }
    update.params = std::move(theta);
    return update;
}

Vector<double> aggregate_fedavg(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
    const Eigen::Index d = updates.front().params.size();
    double total = 0.0;
    for (const auto& u : updates) {
        if (u.params.size() != d) throw std::invalid_argument("aggregate: dimension mismatch");
        if (u.sample_count < 1) throw std::invalid_argument("aggregate: update with zero samples");
        total += static_cast<double>(u.sample_count);
    }
    CompensatedSum acc(d);
    for (const ClientUpdate* u : by_client_id(updates))
        acc.add(u->params, static_cast<double>(u->sample_count) / total);
    return acc.result();
}

void update_penalty_state(FedCurvPenaltyState& state, std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw std::invalid_argument("penalty state: no updates");
    const Eigen::Index d = updates.front().params.size();
    CompensatedSum fisher_sum(d);
    CompensatedSum fisher_params_sum(d);
    std::map<std::uint32_t, FisherContribution> per_client;
    for (const ClientUpdate* u : by_client_id(updates)) {
        if (!u->fisher || !u->fisher_times_params)
            throw std::invalid_argument("penalty state: update from client " + std::to_string(u->client_id) +
                                        " carries no Fisher diagonal");
        if (u->fisher->values.size() != d || u->fisher_times_params->size() != d)
            throw std::invalid_argument("penalty state: dimension mismatch");
        fisher_sum.add(u->fisher->values);
        fisher_params_sum.add(*u->fisher_times_params);
        per_client[u->client_id] = {u->fisher->values, *u->fisher_times_params};
    }
    state.sum_fisher = fisher_sum.result();
    state.sum_fisher_params = fisher_params_sum.result();
    state.per_client = std::move(per_client);
    ++state.round;
}

std::size_t payload_size(std::size_t d, AlgorithmKind kind) {
    return kind == AlgorithmKind::fedcurv ? 3 * d : d;
}

}  // namespace fedbench
