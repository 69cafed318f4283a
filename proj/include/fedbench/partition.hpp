#pragma once

// Deterministic client partitions: the iid split plus five non-iid skews.

#include "fedbench/data.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedbench {

enum class PartitionKind {
    uniform,
    quantity_skew,
    labels_quantity_skew,
    dirichlet_labels_skew,
    pathological_labels_skew,
    covariate_shift,
};

std::string_view to_string(PartitionKind kind);
PartitionKind partition_kind_from_string(std::string_view name);

struct PartitionSpec {
    PartitionKind kind = PartitionKind::uniform;
    std::size_t num_clients = 10;
    double alpha = 2.0;                  // quantity skew, power density exponent
    double beta = 0.5;                   // dirichlet concentration
    std::size_t classes_per_client = 2;  // labels quantity skew
    std::size_t shards_per_client = 2;   // pathological skew
    std::uint64_t seed = 0;

    /// Checks the ranges that do not depend on the dataset.
    void validate() const;

    friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

struct ClientSummary {
    std::size_t sample_count = 0;
    std::vector<std::size_t> label_histogram;
};

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> assignments;  // one sorted index list per client
    PartitionSpec spec;
    std::vector<ClientSummary> provenance;
    std::optional<Matrix<double>> dirichlet_draws;  // K x N, row k is p_k
    std::string method_note;

    std::size_t num_clients() const { return assignments.size(); }
};

PartitionPlan partition_uniform(const Dataset& ds, std::size_t num_clients, std::uint64_t seed);
PartitionPlan partition_quantity_skew(const Dataset& ds, std::size_t num_clients, double alpha,
                                      std::uint64_t seed);
PartitionPlan partition_labels_quantity_skew(const Dataset& ds, std::size_t num_clients,
                                             std::size_t classes_per_client, std::uint64_t seed);
PartitionPlan partition_dirichlet(const Dataset& ds, std::size_t num_clients, double beta,
                                  std::uint64_t seed);
PartitionPlan partition_pathological(const Dataset& ds, std::size_t num_clients,
                                     std::size_t shards_per_client, std::uint64_t seed);
PartitionPlan partition_covariate_shift(const Dataset& ds, std::size_t num_clients, std::uint64_t seed);

/// Dispatches on spec.kind.
PartitionPlan make_partition(const Dataset& ds, const PartitionSpec& spec);

/// Client shares of the power density alpha * x^(alpha-1) integrated over N
/// equal sub-intervals of (0, 1].
std::vector<double> power_shares(std::size_t num_clients, double alpha);

/// Rounds total * weights[i] / sum(weights) to integers summing to `total`.
/// Remainders are broken toward the lower index.
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights);

struct PrincipalComponent {
    Vector<double> direction;  // unit norm, largest-magnitude coordinate positive
    Vector<double> scores;     // one per sample, on standardized features
    int iterations = 0;
};

/// First principal component of the standardized features by power iteration.
PrincipalComponent first_principal_component(const Matrix<double>& features, int max_iterations = 100,
                                             double tolerance = 1e-9);

struct PlanReport {
    std::vector<std::string> violations;
    std::vector<std::size_t> counts;
    std::vector<double> label_entropy_bits;
    double min_share = 0.0;
    double max_share = 0.0;

    bool ok() const { return violations.empty(); }
};

/// Never throws on a malformed plan; problems are reported as violations.
PlanReport validate_plan(const PartitionPlan& plan, const Dataset& ds);

/// Recomputes provenance from the assignments.
void summarize(PartitionPlan& plan, const Dataset& ds);

}  // namespace fedbench
