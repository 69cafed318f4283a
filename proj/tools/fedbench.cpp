#include "fedbench/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace fedbench::cli;

    CLI::App app{"Federated learning experiments: FedAvg and FedCurv over non-iid partitions"};
    app.require_subcommand(1);

    CommonOptions common;
    NetFlags net_flags;
    bool net = false;
    long timeout_s = 120;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t workers = 1;
    std::uint32_t client_id = 0;
    std::string plan;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config, "Experiment JSON file")->required();
        cmd->add_option("--seed", seed, "Override the master and partition seeds");
        cmd->add_option("--workers", workers, "Parallel client or cell workers")->check(CLI::PositiveNumber);
    };

    auto* run = app.add_subcommand("run", "Run one federation and write metrics.csv and summary.json");
    add_common(run);
    run->add_option("--out", out, "Output directory");
    run->add_flag("--net", net, "Run over loopback TCP instead of in-process");

    auto* partition = app.add_subcommand("partition", "Export the partition plan as JSON");
    add_common(partition);
    partition->add_option("--out", out, "Plan file (default <output_dir>/plan.json)");

    auto* grid = app.add_subcommand("grid", "Run the config's algorithm x skew x rounds x epochs grid");
    add_common(grid);
    grid->add_option("--out", out, "Output directory");

    auto* aggregator = app.add_subcommand("aggregator", "Serve a federation over TCP");
    add_common(aggregator);
    aggregator->add_option("--out", out, "Output directory");
    aggregator->add_option("--bind", net_flags.address, "host:port to listen on")->required();
    aggregator->add_option("--round-timeout", timeout_s, "Seconds to wait for a round's updates")
        ->check(CLI::PositiveNumber);

    auto* collaborator = app.add_subcommand("collaborator", "Join a federation and train on one shard");
    add_common(collaborator);
    collaborator->add_option("--connect", net_flags.address, "Aggregator host:port")->required();
    collaborator->add_option("--client-id", client_id, "This collaborator's id")->required();
    collaborator->add_option("--plan", plan, "Take the shard from an exported plan");
    collaborator->add_option("--round-timeout", timeout_s, "Seconds to wait for the aggregator")
        ->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    auto* cmd = app.get_subcommands().front();
    if (cmd->count("--seed")) common.seed = seed;
    if (cmd->count("--workers")) common.workers = workers;
    if (cmd->count("--out")) common.out = out;
    net_flags.round_timeout = std::chrono::seconds(timeout_s);
    if (cmd == collaborator) {
        net_flags.client_id = client_id;
        if (!plan.empty()) net_flags.plan = plan;
    }

    if (cmd == run) return cmd_run(common, net, std::cerr);
    if (cmd == partition) return cmd_partition(common, std::cerr);
    if (cmd == grid) return cmd_grid(common, std::cerr);
    if (cmd == aggregator) return cmd_aggregator(common, net_flags, std::cerr);
    return cmd_collaborator(common, net_flags, std::cerr);
}
