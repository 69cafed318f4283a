#include "fedbench/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fedbench {
namespace {

std::string_view to_string(DatasetSource s) {
    switch (s) {
        case DatasetSource::blobs: return "blobs";
        case DatasetSource::mnist: return "mnist";
        case DatasetSource::cifar10: return "cifar10";
        case DatasetSource::csv: return "csv";
    }
    return "?";
}

DatasetSource dataset_source_from_string(const std::string& name, const std::string& where) {
    if (name == "blobs") return DatasetSource::blobs;
    if (name == "mnist") return DatasetSource::mnist;
    if (name == "cifar10") return DatasetSource::cifar10;
    if (name == "csv") return DatasetSource::csv;
    throw ConfigError(where + ": unknown dataset source '" + name + "' (expected blobs, mnist, cifar10 or csv)");
}

std::string_view to_string(ModelKind k) {
    return k == ModelKind::softmax_regression ? "softmax_regression" : "mlp_one_hidden";
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

// Reads typed fields from one JSON object and remembers which keys were
// consumed, so leftovers can be reported as unknown.
class Section {
public:
    Section(const Json& node, std::string path) : node_(node), path_(std::move(path)) {
        if (!node_.is_object()) throw ConfigError(path_ + " must be an object");
    }

    const std::string& path() const { return path_; }
    bool has(const std::string& key) const { return node_.contains(key); }

    const Json* find(const std::string& key) {
        used_.insert(key);
        auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }

    const Json& require(const std::string& key) {
        const Json* v = find(key);
        if (!v) throw ConfigError(where(key) + " is required");
        return *v;
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        const Json* v = find(key);
        if (!v) return fallback;
        return as_count(*v, where(key));
    }

    std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
        const Json* v = find(key);
        if (!v) return fallback;
        if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
            throw ConfigError(where(key) + " must be a non-negative integer");
        return v->get<std::uint64_t>();
    }

    double real(const std::string& key, double fallback) {
        const Json* v = find(key);
        if (!v) return fallback;
        if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
        return v->get<double>();
    }

    bool flag(const std::string& key, bool fallback) {
        const Json* v = find(key);
        if (!v) return fallback;
        if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
        return v->get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback) {
        const Json* v = find(key);
        if (!v) return fallback;
        if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
        return v->get<std::string>();
    }

    std::vector<std::string> texts(const std::string& key) {
        const Json* v = find(key);
        if (!v) return {};
        if (!v->is_array()) throw ConfigError(where(key) + " must be an array of strings");
        std::vector<std::string> out;
        for (const auto& item : *v) {
            if (!item.is_string()) throw ConfigError(where(key) + " must be an array of strings");
            out.push_back(item.get<std::string>());
        }
        return out;
    }

    std::vector<std::size_t> counts(const std::string& key) {
        const Json* v = find(key);
        if (!v) return {};
        if (!v->is_array()) throw ConfigError(where(key) + " must be an array of integers");
        std::vector<std::size_t> out;
        for (const auto& item : *v) out.push_back(as_count(item, where(key)));
        return out;
    }

    std::optional<Section> child(const std::string& key) {
        const Json* v = find(key);
        if (!v) return std::nullopt;
        return Section(*v, where(key));
    }

    void finish() const {
        for (auto it = node_.begin(); it != node_.end(); ++it)
            if (!used_.contains(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + path_);
    }

    std::string where(const std::string& key) const { return path_ + "." + key; }

private:
    static std::size_t as_count(const Json& v, const std::string& where) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            throw ConfigError(where + " must be a non-negative integer");
        return v.get<std::size_t>();
    }

    const Json& node_;
    std::string path_;
    std::set<std::string> used_;
};

DatasetConfig parse_dataset(Section s) {
    DatasetConfig d;
    d.source = dataset_source_from_string(s.text("source", ""), s.where("source"));
    switch (d.source) {
        case DatasetSource::blobs:
            d.num_classes = s.count("num_classes", d.num_classes);
            d.per_class = s.count("per_class", d.per_class);
            d.test_per_class = s.count("test_per_class", d.test_per_class);
            d.input_dim = s.count("input_dim", d.input_dim);
            d.spread = s.real("spread", d.spread);
            d.seed = s.seed("seed", d.seed);
            if (d.num_classes < 2 || d.per_class < 1 || d.test_per_class < 1 || d.input_dim < 1)
                throw ConfigError(s.path() + ": blobs need num_classes >= 2 and positive sizes");
            if (!(d.spread >= 0.0)) throw ConfigError(s.where("spread") + " must be >= 0");
            break;
        case DatasetSource::mnist:
            d.train_images = s.text("train_images", "");
            d.train_labels = s.text("train_labels", "");
            d.test_images = s.text("test_images", "");
            d.test_labels = s.text("test_labels", "");
            if (d.train_images.empty() || d.train_labels.empty() || d.test_images.empty() || d.test_labels.empty())
                throw ConfigError(s.path() + ": mnist needs train_images, train_labels, test_images and test_labels");
            break;
        case DatasetSource::cifar10:
            d.train_files = s.texts("train_files");
            d.test_files = s.texts("test_files");
            if (d.train_files.empty() || d.test_files.empty())
                throw ConfigError(s.path() + ": cifar10 needs train_files and test_files");
            break;
        case DatasetSource::csv:
            d.train_file = s.text("train_file", "");
            d.test_file = s.text("test_file", "");
            d.label_column = s.text("label_column", d.label_column);
            d.test_fraction = s.real("test_fraction", d.test_fraction);
            d.seed = s.seed("seed", d.seed);
            if (d.train_file.empty()) throw ConfigError(s.where("train_file") + " is required");
            if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
                throw ConfigError(s.where("test_fraction") + " must lie in (0, 1)");
            break;
    }
    d.normalize = s.flag("normalize", d.normalize);
    s.finish();
    return d;
}

Json dataset_json(const DatasetConfig& d) {
    Json j;
    j["source"] = to_string(d.source);
    switch (d.source) {
        case DatasetSource::blobs:
            j["num_classes"] = d.num_classes;
            j["per_class"] = d.per_class;
            j["test_per_class"] = d.test_per_class;
            j["input_dim"] = d.input_dim;
            j["spread"] = d.spread;
            j["seed"] = d.seed;
            break;
        case DatasetSource::mnist:
            j["train_images"] = d.train_images;
            j["train_labels"] = d.train_labels;
            j["test_images"] = d.test_images;
            j["test_labels"] = d.test_labels;
            break;
        case DatasetSource::cifar10:
            j["train_files"] = d.train_files;
            j["test_files"] = d.test_files;
            break;
        case DatasetSource::csv:
            j["train_file"] = d.train_file;
            if (!d.test_file.empty()) j["test_file"] = d.test_file;
            j["label_column"] = d.label_column;
            j["test_fraction"] = d.test_fraction;
            j["seed"] = d.seed;
            break;
    }
    j["normalize"] = d.normalize;
    return j;
}

template <typename Fn>
auto translate(const std::string& where, Fn fn) {
    try {
        return fn();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

GridConfig parse_grid(Section s) {
    GridConfig g;
    for (const auto& name : s.texts("algorithms"))
        g.algorithms.push_back(translate(s.where("algorithms"), [&] { return algorithm_kind_from_string(name); }));
    for (const auto& name : s.texts("skews"))
        g.skews.push_back(translate(s.where("skews"), [&] { return partition_kind_from_string(name); }));
    g.rounds = s.counts("rounds");
    g.epochs = s.counts("epochs");
    g.workers = s.count("workers", g.workers);
    s.finish();
    if (g.algorithms.empty() || g.skews.empty() || g.rounds.empty() || g.epochs.empty())
        throw ConfigError(s.path() + " needs nonempty algorithms, skews, rounds and epochs");
    for (auto r : g.rounds)
        if (r < 1) throw ConfigError(s.where("rounds") + " entries must be >= 1");
    for (auto e : g.epochs)
        if (e < 1) throw ConfigError(s.where("epochs") + " entries must be >= 1");
    if (g.workers < 1) throw ConfigError(s.where("workers") + " must be >= 1");
    return g;
}

Json grid_json(const GridConfig& g) {
    Json j;
    j["algorithms"] = Json::array();
    for (auto a : g.algorithms) j["algorithms"].push_back(to_string(a));
    j["skews"] = Json::array();
    for (auto k : g.skews) j["skews"].push_back(to_string(k));
    j["rounds"] = g.rounds;
    j["epochs"] = g.epochs;
    j["workers"] = g.workers;
    return j;
}

}  // namespace

ExperimentFile parse_experiment(const Json& doc) {
    ExperimentFile exp;
    Section top(doc, "config");
    auto& fed = exp.federation;

    exp.dataset = parse_dataset(Section(top.require("dataset"), "dataset"));

    if (auto s = top.child("model")) {
        const auto kind = s->text("kind", "softmax_regression");
        if (kind == "softmax_regression")
            fed.model.kind = ModelKind::softmax_regression;
        else if (kind == "mlp_one_hidden")
            fed.model.kind = ModelKind::mlp_one_hidden;
        else
            throw ConfigError(s->where("kind") + ": unknown model '" + kind + "'");
        fed.model.input_dim = s->count("input_dim", 0);
        fed.model.num_classes = s->count("num_classes", 0);
        fed.model.hidden_dim = s->count("hidden_dim", fed.model.kind == ModelKind::mlp_one_hidden ? 32 : 0);
        fed.model.init_scale = s->real("init_scale", fed.model.init_scale);
        s->finish();
    }

    if (auto s = top.child("algorithm")) {
        fed.algo.kind = translate(s->where("kind"), [&] { return algorithm_kind_from_string(s->text("kind", "fedavg")); });
        fed.algo.epochs_per_round = s->count("epochs_per_round", fed.algo.epochs_per_round);
        if (const Json* b = s->find("batch_size"); b && b->is_string()) {
            if (b->get<std::string>() != "full")
                throw ConfigError(s->where("batch_size") + " must be a positive integer or \"full\"");
            fed.algo.batch_size = AlgorithmConfig::kFullBatch;
        } else if (b) {
            fed.algo.batch_size = s->count("batch_size", 0);
            if (fed.algo.batch_size < 1)
                throw ConfigError(s->where("batch_size") + " must be a positive integer or \"full\"");
        }
        fed.algo.lambda = s->real("lambda", fed.algo.lambda);
        s->finish();
    }

    if (auto s = top.child("optimizer")) {
        const auto kind = s->text("kind", "adam");
        if (kind == "adam")
            fed.optimizer.kind = OptimizerKind::adam;
        else if (kind == "sgd")
            fed.optimizer.kind = OptimizerKind::sgd;
        else
            throw ConfigError(s->where("kind") + ": unknown optimizer '" + kind + "'");
        fed.optimizer.lr = s->real("lr", fed.optimizer.lr);
        fed.optimizer.beta1 = s->real("beta1", fed.optimizer.beta1);
        fed.optimizer.beta2 = s->real("beta2", fed.optimizer.beta2);
        fed.optimizer.eps = s->real("eps", fed.optimizer.eps);
        s->finish();
    }

    std::optional<std::uint64_t> partition_seed;
    if (auto s = top.child("partition")) {
        fed.partition.kind =
            translate(s->where("kind"), [&] { return partition_kind_from_string(s->text("kind", "uniform")); });
        fed.partition.alpha = s->real("alpha", fed.partition.alpha);
        fed.partition.beta = s->real("beta", fed.partition.beta);
        fed.partition.classes_per_client = s->count("classes_per_client", fed.partition.classes_per_client);
        fed.partition.shards_per_client = s->count("shards_per_client", fed.partition.shards_per_client);
        if (s->has("seed")) partition_seed = s->seed("seed", 0);
        s->finish();
    }

    if (auto s = top.child("federation")) {
        fed.num_clients = s->count("num_clients", fed.num_clients);
        fed.rounds = s->count("rounds", fed.rounds);
        fed.eval_every = s->count("eval_every", fed.eval_every);
        fed.master_seed = s->seed("seed", fed.master_seed);
        fed.workers = s->count("workers", fed.workers);
        fed.reset_optimizer_per_round = s->flag("reset_optimizer_per_round", fed.reset_optimizer_per_round);
        fed.record_wall_time = s->flag("record_wall_time", fed.record_wall_time);
        s->finish();
    }
    fed.partition.num_clients = fed.num_clients;
    fed.partition.seed = partition_seed.value_or(fed.master_seed);
    if (fed.workers < 1) throw ConfigError("federation.workers must be >= 1");

    exp.output_dir = top.text("output_dir", exp.output_dir);
    if (auto s = top.child("grid")) exp.grid = parse_grid(std::move(*s));
    top.finish();

    // Everything except the data-dependent dimensions can be checked now.
    FederationConfig probe = fed;
    if (probe.model.input_dim == 0) probe.model.input_dim = 1;
    if (probe.model.num_classes == 0) probe.model.num_classes = 2;
    translate("config", [&] {
        probe.validate();
        return 0;
    });
    return exp;
}

ExperimentFile load_experiment(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    return parse_experiment(doc);
}

Json to_json(const ExperimentFile& exp) {
    const auto& fed = exp.federation;
    Json j;
    j["dataset"] = dataset_json(exp.dataset);

    Json model;
    model["kind"] = to_string(fed.model.kind);
    if (fed.model.input_dim) model["input_dim"] = fed.model.input_dim;
    if (fed.model.num_classes) model["num_classes"] = fed.model.num_classes;
    model["hidden_dim"] = fed.model.hidden_dim;
    model["init_scale"] = fed.model.init_scale;
    j["model"] = model;

    Json algo;
    algo["kind"] = to_string(fed.algo.kind);
    algo["epochs_per_round"] = fed.algo.epochs_per_round;
    if (fed.algo.batch_size == AlgorithmConfig::kFullBatch)
        algo["batch_size"] = "full";
    else
        algo["batch_size"] = fed.algo.batch_size;
    algo["lambda"] = fed.algo.lambda;
    j["algorithm"] = algo;

    j["optimizer"] = Json{{"kind", to_string(fed.optimizer.kind)},
                          {"lr", fed.optimizer.lr},
                          {"beta1", fed.optimizer.beta1},
                          {"beta2", fed.optimizer.beta2},
                          {"eps", fed.optimizer.eps}};

    j["partition"] = Json{{"kind", to_string(fed.partition.kind)},
                          {"alpha", fed.partition.alpha},
                          {"beta", fed.partition.beta},
                          {"classes_per_client", fed.partition.classes_per_client},
                          {"shards_per_client", fed.partition.shards_per_client},
                          {"seed", fed.partition.seed}};

    j["federation"] = Json{{"num_clients", fed.num_clients},
                           {"rounds", fed.rounds},
                           {"eval_every", fed.eval_every},
                           {"seed", fed.master_seed},
                           {"workers", fed.workers},
                           {"reset_optimizer_per_round", fed.reset_optimizer_per_round},
                           {"record_wall_time", fed.record_wall_time}};

    j["output_dir"] = exp.output_dir;
    if (exp.grid) j["grid"] = grid_json(*exp.grid);
    return j;
}

void override_seed(ExperimentFile& exp, std::uint64_t seed) {
    exp.federation.master_seed = seed;
    exp.federation.partition.seed = seed;
}

DataSplits load_datasets(const DatasetConfig& cfg) {
    DataSplits s;
    switch (cfg.source) {
        case DatasetSource::blobs:
            s.train = synthetic_blobs(cfg.num_classes, cfg.per_class, cfg.input_dim, cfg.spread, cfg.seed);
            s.test = synthetic_blobs(cfg.num_classes, cfg.test_per_class, cfg.input_dim, cfg.spread,
                                     mix64(cfg.seed ^ 0x74657374ULL));
            s.train.name = s.test.name = "blobs";
            break;
        case DatasetSource::mnist:
            s.train = load_mnist_idx(cfg.train_images, cfg.train_labels);
            s.test = load_mnist_idx(cfg.test_images, cfg.test_labels);
            break;
        case DatasetSource::cifar10: {
            std::vector<std::filesystem::path> train(cfg.train_files.begin(), cfg.train_files.end());
            std::vector<std::filesystem::path> test(cfg.test_files.begin(), cfg.test_files.end());
            s.train = load_cifar10_binary(train);
            s.test = load_cifar10_binary(test);
            break;
        }
        case DatasetSource::csv: {
            auto all = load_csv(cfg.train_file, cfg.label_column);
            if (!cfg.test_file.empty()) {
                s.train = std::move(all);
                s.test = load_csv(cfg.test_file, cfg.label_column);
                if (s.test.num_classes != s.train.num_classes || s.test.input_dim() != s.train.input_dim())
                    throw FormatError("csv test file does not match the train file's columns or label set");
                break;
            }
            std::vector<std::size_t> order(all.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng(mix64(cfg.seed ^ 0x73706c6974ULL));
            std::shuffle(order.begin(), order.end(), rng);
            const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(all.size())));
            if (n_test < 1 || n_test >= all.size()) throw FormatError("csv too small to split into train and test");
            std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
            std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
            std::sort(test.begin(), test.end());
            std::sort(train.begin(), train.end());
            s.train = subset(all, train);
            s.test = subset(all, test);
            break;
        }
    }
    validate_dataset(s.train, true);
    validate_dataset(s.test);
    if (cfg.normalize) {
        const auto stats = fit_normalization(s.train);
        s.train = apply_normalization(s.train, stats);
        s.test = apply_normalization(s.test, stats);
    }
    return s;
}

FederationConfig resolve_federation(const ExperimentFile& exp, const Dataset& train) {
    FederationConfig cfg = exp.federation;
    auto& m = cfg.model;
    if (m.input_dim != 0 && m.input_dim != train.input_dim())
        throw ConfigError("model.input_dim is " + std::to_string(m.input_dim) + " but the dataset has " +
                          std::to_string(train.input_dim()) + " features");
    if (m.num_classes != 0 && m.num_classes != train.num_classes)
        throw ConfigError("model.num_classes is " + std::to_string(m.num_classes) + " but the dataset has " +
                          std::to_string(train.num_classes) + " classes");
    m.input_dim = train.input_dim();
    m.num_classes = train.num_classes;
    translate("config", [&] {
        cfg.validate();
        return 0;
    });
    return cfg;
}

std::string format_number(double value) {
    if (value == 0.0) return "0";
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), end);
}

void write_metrics_csv(std::ostream& out, const FederationConfig& cfg, const std::vector<RoundMetrics>& rows) {
    const std::string algo(to_string(cfg.algo.kind));
    const std::string skew(to_string(cfg.partition.kind));
    out << kMetricsHeader << '\n';
    for (const auto& r : rows) {
        // std::to_string and to_chars ignore the stream's locale.
        out << std::to_string(r.round) + ',' + algo + ',' + skew + ',' + std::to_string(cfg.algo.epochs_per_round) +
                   ',' + format_number(r.global_top1) + ',' + format_number(r.mean_local_loss) + ',' +
                   std::to_string(r.bytes_up) + ',' + std::to_string(r.bytes_down) + ',' + format_number(r.wall_ms) +
                   ',' + std::to_string(cfg.master_seed) + '\n';
    }
}

void write_metrics_csv(const std::filesystem::path& path, const FederationConfig& cfg,
                       const std::vector<RoundMetrics>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_metrics_csv(out, cfg, rows);
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

RunSummary summarize_run(const std::vector<RoundMetrics>& rows) {
    RunSummary s;
    if (rows.empty()) return s;
    s.final_top1 = rows.back().global_top1;
    s.rounds = rows.back().round;
    s.best_top1 = -1.0;
    for (const auto& r : rows)
        if (r.global_top1 > s.best_top1) {
            s.best_top1 = r.global_top1;
            s.best_round = r.round;
        }
    return s;
}

Json summary_json(const FederationConfig& cfg, const std::string& dataset_name, const std::vector<RoundMetrics>& rows) {
    const auto s = summarize_run(rows);
    std::uint64_t up = 0, down = 0;
    for (const auto& r : rows) {
        up += r.bytes_up;
        down += r.bytes_down;
    }
    Json j;
    j["dataset"] = dataset_name;
    j["algo"] = to_string(cfg.algo.kind);
    j["skew"] = to_string(cfg.partition.kind);
    j["num_clients"] = cfg.num_clients;
    j["rounds"] = cfg.rounds;
    j["epochs_per_round"] = cfg.algo.epochs_per_round;
    j["seed"] = cfg.master_seed;
    j["final_top1"] = s.final_top1;
    j["best_top1"] = s.best_top1;
    j["best_round"] = s.best_round;
    j["total_bytes_up"] = up;
    j["total_bytes_down"] = down;
    return j;
}

Json plan_to_json(const PartitionPlan& plan, const Dataset& ds) {
    const auto& spec = plan.spec;
    Json j;
    j["spec"] = Json{{"kind", to_string(spec.kind)},
                     {"num_clients", spec.num_clients},
                     {"alpha", spec.alpha},
                     {"beta", spec.beta},
                     {"classes_per_client", spec.classes_per_client},
                     {"shards_per_client", spec.shards_per_client}};
    j["seed"] = spec.seed;
    j["dataset"] = Json{{"name", ds.name}, {"size", ds.size()}, {"num_classes", ds.num_classes}};
    j["method"] = plan.method_note;
    Json clients = Json::array();
    for (std::size_t i = 0; i < plan.assignments.size(); ++i) {
        std::vector<std::size_t> hist(ds.num_classes, 0);
        for (auto idx : plan.assignments[i]) ++hist[static_cast<std::size_t>(ds.labels[static_cast<Eigen::Index>(idx)])];
        Json h;
        for (std::size_t k = 0; k < hist.size(); ++k) h[std::to_string(k)] = hist[k];
        clients.push_back(Json{{"id", i}, {"sample_count", plan.assignments[i].size()}, {"indices", plan.assignments[i]},
                               {"label_histogram", h}});
    }
    j["clients"] = clients;
    if (plan.dirichlet_draws) {
        Json draws = Json::array();
        const auto& p = *plan.dirichlet_draws;
        for (Eigen::Index k = 0; k < p.rows(); ++k) {
            Json row = Json::array();
            for (Eigen::Index c = 0; c < p.cols(); ++c) row.push_back(p(k, c));
            draws.push_back(row);
        }
        j["dirichlet_draws"] = draws;
    }
    return j;
}

PartitionPlan plan_from_json(const Json& doc) {
    try {
        PartitionPlan plan;
        const auto& spec = doc.at("spec");
        plan.spec.kind = partition_kind_from_string(spec.at("kind").get<std::string>());
        plan.spec.num_clients = spec.at("num_clients").get<std::size_t>();
        plan.spec.alpha = spec.at("alpha").get<double>();
        plan.spec.beta = spec.at("beta").get<double>();
        plan.spec.classes_per_client = spec.at("classes_per_client").get<std::size_t>();
        plan.spec.shards_per_client = spec.at("shards_per_client").get<std::size_t>();
        plan.spec.seed = doc.at("seed").get<std::uint64_t>();
        plan.method_note = doc.value("method", std::string{});
        const auto num_classes = doc.at("dataset").at("num_classes").get<std::size_t>();
        for (const auto& c : doc.at("clients")) {
            plan.assignments.push_back(c.at("indices").get<std::vector<std::size_t>>());
            ClientSummary summary;
            summary.sample_count = plan.assignments.back().size();
            summary.label_histogram.assign(num_classes, 0);
            for (const auto& [key, count] : c.at("label_histogram").items()) {
                const auto k = std::stoul(key);
                if (k >= num_classes) throw ConfigError("plan: histogram class " + key + " out of range");
                summary.label_histogram[k] = count.get<std::size_t>();
            }
            plan.provenance.push_back(std::move(summary));
        }
        if (doc.contains("dirichlet_draws")) {
            const auto& rows = doc.at("dirichlet_draws");
            const auto k = static_cast<Eigen::Index>(rows.size());
            const auto n = k ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
            Matrix<double> p(k, n);
            for (Eigen::Index r = 0; r < k; ++r) {
                if (static_cast<Eigen::Index>(rows.at(static_cast<std::size_t>(r)).size()) != n)
                    throw ConfigError("plan: ragged dirichlet_draws");
                for (Eigen::Index c = 0; c < n; ++c)
                    p(r, c) = rows.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
            }
            plan.dirichlet_draws = std::move(p);
        }
        return plan;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("plan: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("plan: ") + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
}

}  // namespace fedbench
