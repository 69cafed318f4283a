#pragma once

#include "fedbench/data.hpp"
#include "fedbench/fedalgo.hpp"
#include "fedbench/model.hpp"
#include "fedbench/partition.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace fedbench {

/// f32 rounds everything that would cross the wire, so an in-process run
/// reproduces a networked one exactly.
enum class WirePrecision { f64, f32 };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct FederationConfig {
    std::size_t num_clients = 10;
    std::size_t rounds = 10;
    AlgorithmConfig algo;
    ModelSpec model;
    OptimizerConfig optimizer;
    PartitionSpec partition;
    std::uint64_t master_seed = 0;
    std::size_t eval_every = 1;
    bool reset_optimizer_per_round = false;
    std::size_t workers = 1;
    WirePrecision precision = WirePrecision::f64;
    bool record_wall_time = false;

    void validate() const;

    friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

struct RoundMetrics {
    std::size_t round = 0;
    double global_top1 = 0.0;
    double mean_local_loss = 0.0;
    std::uint64_t bytes_up = 0;    // UPDATE frames since the previous row
    std::uint64_t bytes_down = 0;  // MODEL and ROUND_DONE frames since the previous row
    double wall_ms = 0.0;          // zero unless record_wall_time
};

struct FederationResult {
    std::vector<RoundMetrics> metrics;
    Vector<double> final_params;
};

/// What the aggregator sends a client at the start of a round.
struct ModelBroadcast {
    std::size_t round = 0;
    Vector<double> params;
    std::optional<Vector<double>> sum_fisher;
    std::optional<Vector<double>> sum_fisher_params;
};

Vector<double> quantize_f32(const Vector<double>& v);

/// Server side of one federation: global parameters, FedCurv sums, and the
/// evaluation schedule.
class AggregatorCore {
public:
    AggregatorCore(const FederationConfig& cfg, const Dataset& test);

    std::size_t dim() const { return static_cast<std::size_t>(global_.size()); }
    std::size_t next_round() const { return round_ + 1; }
    bool finished() const { return round_ >= cfg_.rounds; }
    const Vector<double>& global() const { return global_; }
    const FedCurvPenaltyState& penalty_state() const { return penalty_; }

    ModelBroadcast broadcast() const;

    /// Aggregates one round. Returns a metrics row on evaluation rounds.
    std::optional<RoundMetrics> finish_round(std::vector<ClientUpdate> updates, std::uint64_t bytes_up,
                                             std::uint64_t bytes_down, double wall_ms);

private:
    FederationConfig cfg_;
    const Dataset& test_;
    Vector<double> global_;
    FedCurvPenaltyState penalty_;
    std::size_t round_ = 0;
    std::uint64_t pending_up_ = 0;
    std::uint64_t pending_down_ = 0;
    double pending_ms_ = 0.0;
};

/// Client side: owns the shard, optimizer state, and its last Fisher contribution.
class CollaboratorCore {
public:
    CollaboratorCore(const FederationConfig& cfg, std::uint32_t client_id, Dataset shard);

    std::uint32_t client_id() const { return client_id_; }
    const Dataset& shard() const { return shard_; }

    ClientUpdate train_round(const ModelBroadcast& model);

private:
    FederationConfig cfg_;
    std::uint32_t client_id_;
    Dataset shard_;
    OptimizerState<double> optimizer_;
    std::optional<FisherContribution> last_contribution_;
};

OptimizerState<double> make_optimizer(const OptimizerConfig& cfg, Eigen::Index d);

/// cfg.partition over `train`; a single client gets every index.
PartitionPlan federation_plan(const FederationConfig& cfg, const Dataset& train);

/// Client shards for cfg.partition over `train`.
std::vector<Dataset> client_shards(const FederationConfig& cfg, const Dataset& train, const PartitionPlan& plan);

FederationResult run_federation(const FederationConfig& cfg, const Dataset& train, const Dataset& test);
/// Same, with a precomputed plan.
FederationResult run_federation(const FederationConfig& cfg, const Dataset& train, const Dataset& test,
                                const PartitionPlan& plan);

double evaluate_global(const ModelSpec& spec, const Vector<double>& params, const Dataset& test);

/// Pooled training for rounds * epochs_per_round epochs; one accuracy per epoch.
std::vector<double> run_centralized(const FederationConfig& cfg, const Dataset& train, const Dataset& test);

/// 64-bit digest of the f32 encoding of a parameter vector.
std::uint64_t params_digest(const Vector<double>& params);
/// 64-bit digest of a shard's features and labels.
std::uint64_t shard_digest(const Dataset& shard);

}  // namespace fedbench
