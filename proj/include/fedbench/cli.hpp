#pragma once

// Subcommands behind the fedbench executable. Each returns a process exit
// code: 0 on success, 2 for configuration errors, 3 for runtime errors.

#include "fedbench/config.hpp"

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace fedbench::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;  // directory, or the plan file for `partition`
    std::optional<std::size_t> workers;
};

/// metrics.csv and summary.json in the output directory. With `net`, the
/// federation runs over loopback TCP with one thread per collaborator.
int cmd_run(const CommonOptions& opts, bool net, std::ostream& log);

/// Writes the partition plan JSON (default <output_dir>/plan.json).
int cmd_partition(const CommonOptions& opts, std::ostream& log);

/// Runs every (algorithm, skew, rounds, epochs) cell of the config's grid.
/// Writes cells/<cell>/metrics.csv, cells/<cell>/summary.json, table.csv and
/// failures.json.
int cmd_grid(const CommonOptions& opts, std::ostream& log);

struct NetFlags {
    std::string address;  // --bind for the aggregator, --connect for a collaborator
    std::optional<std::uint32_t> client_id;
    std::optional<std::string> plan;  // collaborator: shard from an exported plan
    std::chrono::milliseconds round_timeout{120'000};
};

int cmd_aggregator(const CommonOptions& opts, const NetFlags& net, std::ostream& log);
int cmd_collaborator(const CommonOptions& opts, const NetFlags& net, std::ostream& log);

/// Name of a grid cell's output directory.
std::string cell_name(AlgorithmKind algo, PartitionKind skew, std::size_t rounds, std::size_t epochs);

}  // namespace fedbench::cli
