#include "fedbench/cli.hpp"

#include "fedbench/net.hpp"

#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

namespace fedbench::cli {
namespace fs = std::filesystem;

namespace {

struct Prepared {
    ExperimentFile exp;
    DataSplits data;
    FederationConfig cfg;
    fs::path out_dir;
};

ExperimentFile load_with_overrides(const CommonOptions& opts) {
    if (opts.config.empty()) throw ConfigError("--config is required");
    auto exp = load_experiment(opts.config);
    if (opts.seed) override_seed(exp, *opts.seed);
    if (opts.workers) {
        if (*opts.workers < 1) throw ConfigError("--workers must be >= 1");
        exp.federation.workers = *opts.workers;
        if (exp.grid) exp.grid->workers = *opts.workers;
    }
    if (opts.out) exp.output_dir = *opts.out;
    return exp;
}

Prepared prepare(const CommonOptions& opts) {
    Prepared p;
    p.exp = load_with_overrides(opts);
    p.data = load_datasets(p.exp.dataset);
    p.cfg = resolve_federation(p.exp, p.data.train);
    p.out_dir = p.exp.output_dir;
    return p;
}

template <typename Fn>
int guarded(std::ostream& log, Fn fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        log << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

void write_outputs(const fs::path& dir, const FederationConfig& cfg, const std::string& dataset,
                   const std::vector<RoundMetrics>& rows) {
    fs::create_directories(dir);
    write_metrics_csv(dir / "metrics.csv", cfg, rows);
    write_json(dir / "summary.json", summary_json(cfg, dataset, rows));
}

std::vector<RoundMetrics> run_over_loopback(const FederationConfig& cfg, const DataSplits& data) {
    const auto plan = federation_plan(cfg, data.train);
    const auto shards = client_shards(cfg, data.train, plan);
    net::Aggregator aggregator(cfg, data.train, data.test, "127.0.0.1:0");
    const std::string address = "127.0.0.1:" + std::to_string(aggregator.port());

    std::vector<net::CollaboratorReport> reports(shards.size());
    net::AggregatorReport result;
    {
        std::vector<std::jthread> collaborators;
        for (std::size_t i = 0; i < shards.size(); ++i)
            collaborators.emplace_back([&, i] {
                reports[i] = net::run_collaborator(address, static_cast<std::uint32_t>(i), shards[i], cfg);
            });
        result = aggregator.run();
    }
    if (!result.ok) throw std::runtime_error("aggregator: " + result.error);
    for (std::size_t i = 0; i < reports.size(); ++i)
        if (!reports[i].ok) throw std::runtime_error("collaborator " + std::to_string(i) + ": " + reports[i].error);
    return result.metrics;
}

}  // namespace

std::string cell_name(AlgorithmKind algo, PartitionKind skew, std::size_t rounds, std::size_t epochs) {
    return std::string(to_string(algo)) + "_" + std::string(to_string(skew)) + "_T" + std::to_string(rounds) + "_E" +
           std::to_string(epochs);
}

int cmd_run(const CommonOptions& opts, bool net, std::ostream& log) {
    return guarded(log, [&] {
        auto p = prepare(opts);
        const auto rows = net ? run_over_loopback(p.cfg, p.data) : run_federation(p.cfg, p.data.train, p.data.test).metrics;
        write_outputs(p.out_dir, p.cfg, p.data.train.name, rows);
        const auto s = summarize_run(rows);
        log << "final top1 " << format_number(s.final_top1) << ", best " << format_number(s.best_top1) << " at round "
            << s.best_round << "; wrote " << (p.out_dir / "metrics.csv").string() << '\n';
        return kExitOk;
    });
}

int cmd_partition(const CommonOptions& opts, std::ostream& log) {
    return guarded(log, [&] {
        auto exp = load_with_overrides(CommonOptions{opts.config, opts.seed, std::nullopt, opts.workers});
        const auto data = load_datasets(exp.dataset);
        const auto cfg = resolve_federation(exp, data.train);
        if (cfg.num_clients < 2) throw ConfigError("partition needs federation.num_clients >= 2");
        const auto plan = make_partition(data.train, cfg.partition);
        const auto report = validate_plan(plan, data.train);
        if (!report.ok()) throw std::runtime_error("generated plan is invalid: " + report.violations.front());

        const fs::path path = opts.out ? fs::path(*opts.out) : fs::path(exp.output_dir) / "plan.json";
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_json(path, plan_to_json(plan, data.train));
        log << to_string(cfg.partition.kind) << " plan for " << plan.num_clients() << " clients, sizes "
            << report.counts.front();
        for (std::size_t i = 1; i < report.counts.size(); ++i) log << ' ' << report.counts[i];
        log << "; wrote " << path.string() << '\n';
        return kExitOk;
    });
}

int cmd_grid(const CommonOptions& opts, std::ostream& log) {
    return guarded(log, [&] {
        auto p = prepare(opts);
        if (!p.exp.grid) throw ConfigError("config has no grid section");
        const GridConfig& grid = *p.exp.grid;

        struct Cell {
            AlgorithmKind algo;
            PartitionKind skew;
            std::size_t rounds;
            std::size_t epochs;
            std::string name;
            std::optional<RunSummary> summary;
            std::string error;
        };
        std::vector<Cell> cells;
        for (auto algo : grid.algorithms)
            for (auto skew : grid.skews)
                for (auto rounds : grid.rounds)
                    for (auto epochs : grid.epochs)
                        cells.push_back({algo, skew, rounds, epochs, cell_name(algo, skew, rounds, epochs), {}, {}});

        // One plan per skew, shared by every algorithm and schedule.
        std::map<PartitionKind, PartitionPlan> plans;
        std::map<PartitionKind, std::string> plan_errors;
        for (auto skew : grid.skews) {
            if (plans.contains(skew) || plan_errors.contains(skew)) continue;
            FederationConfig cfg = p.cfg;
            cfg.partition.kind = skew;
            try {
                plans.emplace(skew, federation_plan(cfg, p.data.train));
            } catch (const std::exception& e) {
                plan_errors.emplace(skew, std::string("partition failed: ") + e.what());
            }
        }

        const fs::path cells_dir = p.out_dir / "cells";
        std::mutex log_mutex;
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < cells.size(); i = next++) {
                Cell& cell = cells[i];
                try {
                    if (auto it = plan_errors.find(cell.skew); it != plan_errors.end())
                        throw std::runtime_error(it->second);
                    FederationConfig cfg = p.cfg;
                    cfg.algo.kind = cell.algo;
                    cfg.partition.kind = cell.skew;
                    cfg.rounds = cell.rounds;
                    cfg.algo.epochs_per_round = cell.epochs;
                    const auto rows = run_federation(cfg, p.data.train, p.data.test, plans.at(cell.skew)).metrics;
                    write_outputs(cells_dir / cell.name, cfg, p.data.train.name, rows);
                    cell.summary = summarize_run(rows);
                    std::lock_guard lock(log_mutex);
                    log << cell.name << ": best " << format_number(cell.summary->best_top1) << '\n';
                } catch (const std::exception& e) {
                    cell.error = e.what();
                    std::lock_guard lock(log_mutex);
                    log << cell.name << ": FAILED: " << cell.error << '\n';
                }
            }
        };
        {
            std::vector<std::jthread> pool;
            const auto n = std::min(grid.workers, cells.size());
            for (std::size_t w = 0; w < n; ++w) pool.emplace_back(worker);
        }

        // Combined table: one row per (dataset, skew, epochs), one column per (rounds, algorithm).
        fs::create_directories(p.out_dir);
        std::ofstream table(p.out_dir / "table.csv", std::ios::binary);
        if (!table) throw std::runtime_error("cannot write " + (p.out_dir / "table.csv").string());
        table << "dataset,skew,epochs";
        for (auto rounds : grid.rounds)
            for (auto algo : grid.algorithms) table << ",T" << std::to_string(rounds) << '_' << to_string(algo);
        table << '\n';
        for (auto skew : grid.skews)
            for (auto epochs : grid.epochs) {
                table << p.data.train.name << ',' << to_string(skew) << ',' << std::to_string(epochs);
                for (auto rounds : grid.rounds)
                    for (auto algo : grid.algorithms) {
                        table << ',';
                        for (const auto& c : cells)
                            if (c.algo == algo && c.skew == skew && c.rounds == rounds && c.epochs == epochs &&
                                c.summary)
                                table << format_number(c.summary->best_top1);
                    }
                table << '\n';
            }

        Json failures = Json::array();
        for (const auto& c : cells)
            if (!c.summary) failures.push_back(Json{{"cell", c.name}, {"error", c.error}});
        write_json(p.out_dir / "failures.json",
                   Json{{"total", cells.size()}, {"failed", failures.size()}, {"cells", failures}});
        log << (cells.size() - failures.size()) << " of " << cells.size() << " cells completed\n";
        return failures.empty() ? kExitOk : kExitRuntime;
    });
}

int cmd_aggregator(const CommonOptions& opts, const NetFlags& flags, std::ostream& log) {
    return guarded(log, [&] {
        auto p = prepare(opts);
        if (flags.address.empty()) throw ConfigError("--bind is required");
        net::NetOptions options;
        options.round_timeout = flags.round_timeout;
        net::Aggregator aggregator(p.cfg, p.data.train, p.data.test, flags.address, options);
        log << "aggregator listening on port " << aggregator.port() << " for " << p.cfg.num_clients
            << " collaborators" << std::endl;
        const auto report = aggregator.run();
        if (report.rejected_joins) log << report.rejected_joins << " late JOIN(s) rejected\n";
        if (!report.ok) throw std::runtime_error(report.error);
        FederationConfig wire_cfg = p.cfg;
        wire_cfg.precision = WirePrecision::f32;
        write_outputs(p.out_dir, wire_cfg, p.data.train.name, report.metrics);
        log << report.rounds_completed << " rounds completed\n";
        return kExitOk;
    });
}

int cmd_collaborator(const CommonOptions& opts, const NetFlags& flags, std::ostream& log) {
    return guarded(log, [&] {
        auto p = prepare(opts);
        if (flags.address.empty()) throw ConfigError("--connect is required");
        if (!flags.client_id) throw ConfigError("--client-id is required");
        const auto id = *flags.client_id;
        if (id >= p.cfg.num_clients)
            throw ConfigError("--client-id " + std::to_string(id) + " is out of range for " +
                              std::to_string(p.cfg.num_clients) + " clients");

        PartitionPlan plan;
        if (flags.plan) {
            plan = plan_from_json(read_json(*flags.plan));
            const auto report = validate_plan(plan, p.data.train);
            if (!report.ok()) throw ConfigError("plan " + *flags.plan + ": " + report.violations.front());
        } else {
            plan = federation_plan(p.cfg, p.data.train);
        }
        if (plan.num_clients() != p.cfg.num_clients) throw ConfigError("plan client count differs from the config");
        const auto shard = subset(p.data.train, plan.assignments[id]);

        net::NetOptions options;
        options.round_timeout = flags.round_timeout;
        const auto report = net::run_collaborator(flags.address, id, shard, p.cfg, options);
        if (!report.ok) throw std::runtime_error(report.error);
        log << "collaborator " << id << ": " << report.rounds_trained << " rounds trained\n";
        return kExitOk;
    });
}

}  // namespace fedbench::cli
