#include "fedbench/orchestrator.hpp"

#include "fedbench/wire.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace fedbench {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void quantize_update(ClientUpdate& u) {
    u.params = quantize_f32(u.params);
    u.local_loss = static_cast<float>(u.local_loss);
    if (u.fisher) u.fisher->values = quantize_f32(u.fisher->values);
    if (u.fisher_times_params) u.fisher_times_params = quantize_f32(*u.fisher_times_params);
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
    workers = std::clamp<std::size_t>(workers, 1, n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

void FederationConfig::validate() const {
    if (num_clients < 1) throw std::invalid_argument("federation: num_clients must be >= 1");
    if (rounds < 1) throw std::invalid_argument("federation: rounds must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("federation: eval_every must be >= 1");
    if (num_clients > 1 && partition.num_clients != num_clients)
        throw std::invalid_argument("federation: partition.num_clients must equal num_clients");
    if (!(optimizer.lr > 0.0)) throw std::invalid_argument("federation: optimizer lr must be > 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
        throw std::invalid_argument("federation: adam betas must lie in [0, 1)");
    if (!(optimizer.eps > 0.0)) throw std::invalid_argument("federation: adam eps must be > 0");
    model.validate();
    algo.validate();
    if (num_clients > 1) partition.validate();
}

Vector<double> quantize_f32(const Vector<double>& v) {
    return v.cast<float>().cast<double>();
}

OptimizerState<double> make_optimizer(const OptimizerConfig& cfg, Eigen::Index d) {
    auto state = make_optimizer<double>(cfg.kind, cfg.lr, d);
    state.adam_beta1 = cfg.beta1;
    state.adam_beta2 = cfg.beta2;
    state.adam_eps = cfg.eps;
    return state;
}

AggregatorCore::AggregatorCore(const FederationConfig& cfg, const Dataset& test) : cfg_(cfg), test_(test) {
    cfg_.validate();
    if (test.size() == 0) throw std::invalid_argument("federation: empty test set");
    global_ = init_params<double>(cfg_.model, cfg_.master_seed).values;
}

ModelBroadcast AggregatorCore::broadcast() const {
    const bool f32 = cfg_.precision == WirePrecision::f32;
    ModelBroadcast b;
    b.round = round_ + 1;
    b.params = f32 ? quantize_f32(global_) : global_;
    if (cfg_.algo.kind == AlgorithmKind::fedcurv && penalty_.round > 0) {
        b.sum_fisher = f32 ? quantize_f32(penalty_.sum_fisher) : penalty_.sum_fisher;
        b.sum_fisher_params = f32 ? quantize_f32(penalty_.sum_fisher_params) : penalty_.sum_fisher_params;
    }
    return b;
}

std::optional<RoundMetrics> AggregatorCore::finish_round(std::vector<ClientUpdate> updates, std::uint64_t bytes_up,
                                                         std::uint64_t bytes_down, double wall_ms) {
    if (finished()) throw std::logic_error("federation: all rounds already aggregated");
    if (updates.size() != cfg_.num_clients)
        throw std::invalid_argument("federation: expected " + std::to_string(cfg_.num_clients) + " updates, got " +
                                    std::to_string(updates.size()));
    std::sort(updates.begin(), updates.end(),
              [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });

    global_ = aggregate_fedavg(updates);
    if (cfg_.algo.kind == AlgorithmKind::fedcurv) update_penalty_state(penalty_, updates);
    ++round_;

    pending_up_ += bytes_up;
    pending_down_ += bytes_down;
    pending_ms_ += wall_ms;
    if (round_ % cfg_.eval_every != 0 && round_ != cfg_.rounds) return std::nullopt;

    double loss = 0.0;
    for (const auto& u : updates) loss += u.local_loss;
    RoundMetrics m;
    m.round = round_;
    m.global_top1 = evaluate_global(cfg_.model, global_, test_);
    m.mean_local_loss = loss / static_cast<double>(updates.size());
    m.bytes_up = pending_up_;
    m.bytes_down = pending_down_;
    m.wall_ms = cfg_.record_wall_time ? pending_ms_ : 0.0;
    pending_up_ = pending_down_ = 0;
    pending_ms_ = 0.0;
    return m;
}

CollaboratorCore::CollaboratorCore(const FederationConfig& cfg, std::uint32_t client_id, Dataset shard)
    : cfg_(cfg), client_id_(client_id), shard_(std::move(shard)) {
    if (shard_.size() == 0) throw std::invalid_argument("collaborator: empty shard");
    optimizer_ = make_optimizer(cfg_.optimizer, static_cast<Eigen::Index>(parameter_count(cfg_.model)));
}

ClientUpdate CollaboratorCore::train_round(const ModelBroadcast& model) {
    const auto d = static_cast<Eigen::Index>(parameter_count(cfg_.model));
    if (model.params.size() != d) throw std::invalid_argument("collaborator: model dimension mismatch");
    if (cfg_.reset_optimizer_per_round) optimizer_ = make_optimizer(cfg_.optimizer, d);

    std::optional<PenaltyView> view;
    if (model.sum_fisher) {
        if (cfg_.algo.kind != AlgorithmKind::fedcurv)
            throw std::invalid_argument("collaborator: penalty terms sent to a fedavg client");
        view = PenaltyView{*model.sum_fisher, *model.sum_fisher_params};
        if (last_contribution_) {
            view->sum_fisher -= last_contribution_->fisher;
            view->sum_fisher_params -= last_contribution_->fisher_times_params;
        }
    }

    auto update = local_train(cfg_.model, model.params, shard_, optimizer_, cfg_.algo, view ? &*view : nullptr,
                              stream_seed(cfg_.master_seed, client_id_, model.round), client_id_);
    if (cfg_.precision == WirePrecision::f32) quantize_update(update);
    if (update.fisher) last_contribution_ = FisherContribution{update.fisher->values, *update.fisher_times_params};
    return update;
}

std::vector<Dataset> client_shards(const FederationConfig& cfg, const Dataset& train, const PartitionPlan& plan) {
    if (plan.assignments.size() != cfg.num_clients)
        throw std::invalid_argument("federation: plan has " + std::to_string(plan.assignments.size()) +
                                    " clients, config has " + std::to_string(cfg.num_clients));
    std::vector<Dataset> shards;
    for (const auto& indices : plan.assignments) shards.push_back(subset(train, indices));
    return shards;
}

PartitionPlan federation_plan(const FederationConfig& cfg, const Dataset& train) {
    if (cfg.num_clients > 1) return make_partition(train, cfg.partition);
    PartitionPlan whole;
    whole.assignments.emplace_back(train.size());
    std::iota(whole.assignments[0].begin(), whole.assignments[0].end(), std::size_t{0});
    whole.spec = cfg.partition;
    whole.spec.num_clients = 1;
    summarize(whole, train);
    return whole;
}

FederationResult run_federation(const FederationConfig& cfg, const Dataset& train, const Dataset& test) {
    cfg.validate();
    return run_federation(cfg, train, test, federation_plan(cfg, train));
}

FederationResult run_federation(const FederationConfig& cfg, const Dataset& train, const Dataset& test,
                                const PartitionPlan& plan) {
    AggregatorCore server(cfg, test);
    std::vector<CollaboratorCore> clients;
    auto shards = client_shards(cfg, train, plan);
    for (std::size_t i = 0; i < shards.size(); ++i)
        clients.emplace_back(cfg, static_cast<std::uint32_t>(i), std::move(shards[i]));

    const std::size_t d = server.dim();
    const bool fedcurv = cfg.algo.kind == AlgorithmKind::fedcurv;
    FederationResult result;
    while (!server.finished()) {
        const auto start = Clock::now();
        const ModelBroadcast model = server.broadcast();
        std::vector<ClientUpdate> updates(clients.size());
        parallel_for(clients.size(), cfg.workers, [&](std::size_t i) { updates[i] = clients[i].train_round(model); });

        const std::uint64_t down =
            clients.size() * (wire::model_frame_size(d, model.sum_fisher.has_value()) + wire::round_done_frame_size());
        const std::uint64_t up = clients.size() * wire::update_frame_size(d, fedcurv);
        if (auto row = server.finish_round(std::move(updates), up, down, elapsed_ms(start)))
            result.metrics.push_back(*row);
    }
    result.final_params = server.global();
    return result;
}

double evaluate_global(const ModelSpec& spec, const Vector<double>& params, const Dataset& test) {
    return top1_accuracy(spec, params, test.features, test.labels);
}

std::vector<double> run_centralized(const FederationConfig& cfg, const Dataset& train, const Dataset& test) {
    FederationConfig pooled = cfg;
    pooled.num_clients = 1;
    pooled.rounds = cfg.rounds * cfg.algo.epochs_per_round;
    pooled.algo.kind = AlgorithmKind::fedavg;
    pooled.algo.epochs_per_round = 1;
    pooled.eval_every = 1;
    std::vector<double> curve;
    for (const auto& m : run_federation(pooled, train, test).metrics) curve.push_back(m.global_top1);
    return curve;
}

std::uint64_t params_digest(const Vector<double>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(params[i]));
        const std::uint8_t bytes[4] = {static_cast<std::uint8_t>(bits), static_cast<std::uint8_t>(bits >> 8),
                                       static_cast<std::uint8_t>(bits >> 16), static_cast<std::uint8_t>(bits >> 24)};
        h = wire::fnv1a(bytes, h);
    }
    return h;
}

std::uint64_t shard_digest(const Dataset& shard) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (Eigen::Index r = 0; r < shard.features.rows(); ++r) {
        const auto* row = reinterpret_cast<const std::uint8_t*>(shard.features.row(r).data());
        h = wire::fnv1a({row, static_cast<std::size_t>(shard.features.cols()) * sizeof(double)}, h);
        const auto label = static_cast<std::uint32_t>(shard.labels[r]);
        const std::uint8_t lb[4] = {static_cast<std::uint8_t>(label), static_cast<std::uint8_t>(label >> 8),
                                    static_cast<std::uint8_t>(label >> 16), static_cast<std::uint8_t>(label >> 24)};
        h = wire::fnv1a(lb, h);
    }
    return h;
}

}  // namespace fedbench
