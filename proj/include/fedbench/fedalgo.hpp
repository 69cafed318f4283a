#pragma once

// FedAvg and FedCurv: local training and server-side aggregation over flat
// parameter vectors.

#include "fedbench/data.hpp"
#include "fedbench/model.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>

namespace fedbench {

enum class AlgorithmKind { fedavg, fedcurv };

std::string_view to_string(AlgorithmKind kind);
AlgorithmKind algorithm_kind_from_string(std::string_view name);

struct AlgorithmConfig {
    static constexpr std::size_t kFullBatch = 0;

    AlgorithmKind kind = AlgorithmKind::fedavg;
    std::size_t epochs_per_round = 1;
    std::size_t batch_size = 64;  // kFullBatch means the whole client dataset
    double lambda = 1.0;          // fedcurv penalty weight

    void validate() const;

    friend bool operator==(const AlgorithmConfig&, const AlgorithmConfig&) = default;
};

struct ClientUpdate {
    std::uint32_t client_id = 0;
    Vector<double> params;
    std::size_t sample_count = 0;
    std::optional<FisherDiagonal<double>> fisher;
    std::optional<Vector<double>> fisher_times_params;
    double local_loss = 0.0;
};

struct FisherContribution {
    Vector<double> fisher;
    Vector<double> fisher_times_params;
};

struct FedCurvPenaltyState {
    std::size_t round = 0;
    Vector<double> sum_fisher;         // A = sum_j F_j
    Vector<double> sum_fisher_params;  // b = sum_j F_j * theta_j
    std::map<std::uint32_t, FisherContribution> per_client;
};

/// The penalty terms a client sees: the sums with its own previous
/// contribution removed.
struct PenaltyView {
    Vector<double> sum_fisher;
    Vector<double> sum_fisher_params;
};

PenaltyView penalty_view(const FedCurvPenaltyState& state, std::uint32_t client_id);

/// lambda * (theta' (A . theta) - 2 theta' b). The constant term of the full
/// quadratic is omitted.
double penalty_value(const PenaltyView& view, const Vector<double>& theta, double lambda);
Vector<double> penalty_gradient(const PenaltyView& view, const Vector<double>& theta, double lambda);

/// E epochs of mini-batch training from `global_params`. Batches follow a
/// seeded shuffle per epoch; the short last batch is kept. FedCurv updates
/// also carry the Fisher diagonal at the final local parameters.
ClientUpdate local_train(const ModelSpec& spec, const Vector<double>& global_params, const Dataset& client_data,
                         OptimizerState<double>& optimizer, const AlgorithmConfig& algo,
                         const PenaltyView* penalty, std::uint64_t seed, std::uint32_t client_id = 0);

/// Sample-weighted mean of the update parameters. Updates are combined in
/// client_id order with compensated summation, so the result does not
/// depend on the order of `updates`.
Vector<double> aggregate_fedavg(std::span<const ClientUpdate> updates);

/// Replaces the state with this round's sums and increments the round.
void update_penalty_state(FedCurvPenaltyState& state, std::span<const ClientUpdate> updates);

/// Real-valued entries an update puts on the wire: d for FedAvg, 3d for FedCurv.
std::size_t payload_size(std::size_t d, AlgorithmKind kind);
inline std::size_t payload_size(const ClientUpdate& update, AlgorithmKind kind) {
    return payload_size(static_cast<std::size_t>(update.params.size()), kind);
}

/// Neumaier-compensated accumulation of vectors.
class CompensatedSum {
public:
    explicit CompensatedSum(Eigen::Index d) : sum_(Vector<double>::Zero(d)), carry_(Vector<double>::Zero(d)) {}

    void add(const Vector<double>& x, double weight = 1.0);
    Vector<double> result() const { return sum_ + carry_; }

private:
    Vector<double> sum_;
    Vector<double> carry_;
};

}  // namespace fedbench
