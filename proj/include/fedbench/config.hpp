#pragma once

// Experiment files, dataset sources, and the on-disk output formats
// (metrics.csv, summary.json, plan.json).

#include "fedbench/orchestrator.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedbench {

using Json = nlohmann::ordered_json;

/// Invalid experiment file. The message names the offending key.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class DatasetSource { blobs, mnist, cifar10, csv };

struct DatasetConfig {
    DatasetSource source = DatasetSource::blobs;

    // blobs
    std::size_t num_classes = 10;
    std::size_t per_class = 100;
    std::size_t test_per_class = 50;
    std::size_t input_dim = 16;
    double spread = 0.1;
    std::uint64_t seed = 0;

    // mnist
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;

    // cifar10
    std::vector<std::string> train_files;
    std::vector<std::string> test_files;

    // csv; without a test file the train file is split by test_fraction
    std::string train_file;
    std::string test_file;
    std::string label_column = "label";
    double test_fraction = 0.2;

    bool normalize = true;

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct GridConfig {
    std::vector<AlgorithmKind> algorithms;
    std::vector<PartitionKind> skews;
    std::vector<std::size_t> rounds;
    std::vector<std::size_t> epochs;
    std::size_t workers = 1;

    std::size_t cell_count() const { return algorithms.size() * skews.size() * rounds.size() * epochs.size(); }

    friend bool operator==(const GridConfig&, const GridConfig&) = default;
};

/// One experiment. federation.model.input_dim and num_classes may be zero,
/// meaning "take them from the dataset".
struct ExperimentFile {
    DatasetConfig dataset;
    FederationConfig federation;
    std::string output_dir = "out";
    std::optional<GridConfig> grid;

    friend bool operator==(const ExperimentFile&, const ExperimentFile&) = default;
};

ExperimentFile parse_experiment(const Json& doc);
ExperimentFile load_experiment(const std::filesystem::path& path);
Json to_json(const ExperimentFile& exp);

/// Sets both the master seed and the partition seed.
void override_seed(ExperimentFile& exp, std::uint64_t seed);

struct DataSplits {
    Dataset train;
    Dataset test;
};

/// Loads (or generates) both splits and normalizes them with train statistics
/// when requested.
DataSplits load_datasets(const DatasetConfig& cfg);

/// Fills model dimensions from the training set and validates the result.
/// Throws ConfigError on a mismatch with explicitly configured dimensions.
FederationConfig resolve_federation(const ExperimentFile& exp, const Dataset& train);

// metrics.csv

inline constexpr const char* kMetricsHeader =
    "round,algo,skew,epochs_per_round,global_top1,mean_local_loss,bytes_up,bytes_down,wall_ms,seed";

/// Shortest round-trip decimal form, independent of the C locale.
std::string format_number(double value);

void write_metrics_csv(std::ostream& out, const FederationConfig& cfg, const std::vector<RoundMetrics>& rows);
void write_metrics_csv(const std::filesystem::path& path, const FederationConfig& cfg,
                       const std::vector<RoundMetrics>& rows);

struct RunSummary {
    double final_top1 = 0.0;
    double best_top1 = 0.0;
    std::size_t best_round = 0;
    std::size_t rounds = 0;
};

RunSummary summarize_run(const std::vector<RoundMetrics>& rows);
Json summary_json(const FederationConfig& cfg, const std::string& dataset_name,
                  const std::vector<RoundMetrics>& rows);

// plan.json

Json plan_to_json(const PartitionPlan& plan, const Dataset& ds);
PartitionPlan plan_from_json(const Json& doc);

/// Writes `doc` with two-space indentation and a trailing newline.
void write_json(const std::filesystem::path& path, const Json& doc);
Json read_json(const std::filesystem::path& path);

}  // namespace fedbench
