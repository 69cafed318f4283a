#include "fedbench/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fedbench {
namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

// Splits `order` into consecutive chunks of the given sizes.
std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order,
                                            const std::vector<std::size_t>& sizes) {
    std::vector<std::vector<std::size_t>> out(sizes.size());
    std::size_t at = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        out[c].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                      order.begin() + static_cast<std::ptrdiff_t>(at + sizes[c]));
        at += sizes[c];
    }
    return out;
}

std::vector<std::size_t> equal_sizes(std::size_t total, std::size_t parts) {
    std::vector<std::size_t> sizes(parts, total / parts);
    for (std::size_t i = 0; i < total % parts; ++i) ++sizes[i];
    return sizes;
}

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (Eigen::Index i = 0; i < ds.labels.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(static_cast<std::size_t>(i));
    return by_class;
}

PartitionPlan finish(std::vector<std::vector<std::size_t>> assignments, PartitionSpec spec,
                     const Dataset& ds, std::string note) {
    PartitionPlan plan;
    for (auto& a : assignments) std::sort(a.begin(), a.end());
    plan.assignments = std::move(assignments);
    plan.spec = spec;
    plan.method_note = std::move(note);
    summarize(plan, ds);
    return plan;
}

void require_clients(const Dataset& ds, std::size_t num_clients, const char* who) {
    if (num_clients < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 clients");
    if (ds.size() < num_clients)
        throw std::invalid_argument(std::string(who) + ": fewer samples than clients");
}

}  // namespace

std::string_view to_string(PartitionKind kind) {
    switch (kind) {
        case PartitionKind::uniform: return "uniform";
        case PartitionKind::quantity_skew: return "quantity_skew";
        case PartitionKind::labels_quantity_skew: return "labels_quantity_skew";
        case PartitionKind::dirichlet_labels_skew: return "dirichlet_labels_skew";
        case PartitionKind::pathological_labels_skew: return "pathological_labels_skew";
        case PartitionKind::covariate_shift: return "covariate_shift";
    }
    return "unknown";
}

PartitionKind partition_kind_from_string(std::string_view name) {
    for (auto k : {PartitionKind::uniform, PartitionKind::quantity_skew, PartitionKind::labels_quantity_skew,
                   PartitionKind::dirichlet_labels_skew, PartitionKind::pathological_labels_skew,
                   PartitionKind::covariate_shift})
        if (to_string(k) == name) return k;
    throw std::invalid_argument("unknown partition kind '" + std::string(name) + "'");
}

void PartitionSpec::validate() const {
    if (num_clients < 2) throw std::invalid_argument("partition: num_clients must be >= 2");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("partition: alpha must be > 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("partition: beta must be > 0");
    if (classes_per_client < 1) throw std::invalid_argument("partition: classes_per_client must be >= 1");
    if (shards_per_client < 1) throw std::invalid_argument("partition: shards_per_client must be >= 1");
}

std::vector<double> power_shares(std::size_t num_clients, double alpha) {
    const double n = static_cast<double>(num_clients);
    const double denom = std::pow(n, alpha);
    std::vector<double> q(num_clients);
    for (std::size_t i = 0; i < num_clients; ++i) {
        const double x = static_cast<double>(i);
        q[i] = (std::pow(x + 1.0, alpha) - std::pow(x, alpha)) / denom;
    }
    return q;
}

std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (weights.empty() || !(sum > 0.0)) throw std::invalid_argument("largest_remainder: weights must sum > 0");
    std::vector<std::size_t> counts(weights.size());
    std::vector<long long> remainder_key(weights.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double quota = static_cast<double>(total) * weights[i] / sum;
        // Absorb rounding noise so exact integer quotas stay exact.
        const double floor_q = std::floor(quota + 1e-9);
        counts[i] = static_cast<std::size_t>(floor_q);
        remainder_key[i] = std::llround(std::max(0.0, quota - floor_q) * 1e8);
        assigned += counts[i];
    }
    auto order = iota_indices(weights.size());
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder_key[a] > remainder_key[b]; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k % order.size()]];
    while (assigned > total) {
        // Only reachable through the 1e-9 nudge; take back from the largest count.
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    return counts;
}

PartitionPlan partition_uniform(const Dataset& ds, std::size_t num_clients, std::uint64_t seed) {
    require_clients(ds, num_clients, "uniform");
    Rng rng(seed);
    auto order = iota_indices(ds.size());
    std::shuffle(order.begin(), order.end(), rng);
    PartitionSpec spec{.kind = PartitionKind::uniform, .num_clients = num_clients, .seed = seed};
    return finish(chunk(order, equal_sizes(ds.size(), num_clients)), spec, ds,
                  "random permutation split into equal parts (+-1)");
}

PartitionPlan partition_quantity_skew(const Dataset& ds, std::size_t num_clients, double alpha,
                                      std::uint64_t seed) {
    require_clients(ds, num_clients, "quantity_skew");
    if (!(alpha > 0.0)) throw std::invalid_argument("quantity_skew: alpha must be > 0");
    const auto counts = largest_remainder(ds.size(), power_shares(num_clients, alpha));
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] == 0)
            throw std::invalid_argument("quantity_skew: client " + std::to_string(i) +
                                        " would receive 0 samples");
    Rng rng(seed);
    auto order = iota_indices(ds.size());
    std::shuffle(order.begin(), order.end(), rng);
    PartitionSpec spec{.kind = PartitionKind::quantity_skew, .num_clients = num_clients, .alpha = alpha,
                       .seed = seed};
    return finish(chunk(order, counts), spec, ds,
                  "shares ((i+1)^a - i^a)/N^a of a shuffled dataset, largest-remainder rounding");
}

PartitionPlan partition_labels_quantity_skew(const Dataset& ds, std::size_t num_clients,
                                             std::size_t classes_per_client, std::uint64_t seed) {
    require_clients(ds, num_clients, "labels_quantity_skew");
    const std::size_t k = ds.num_classes;
    if (classes_per_client < 1 || classes_per_client > k)
        throw std::invalid_argument("labels_quantity_skew: classes_per_client must be in [1, num_classes]");
    if (num_clients * classes_per_client < k)
        throw std::invalid_argument("labels_quantity_skew: num_clients * classes_per_client < num_classes");

    Rng rng(seed);
    auto classes = iota_indices(k);
    std::shuffle(classes.begin(), classes.end(), rng);

    std::vector<std::vector<std::size_t>> owners(k);
    for (std::size_t client = 0; client < num_clients; ++client)
        for (std::size_t j = 0; j < classes_per_client; ++j)
            owners[classes[(client * classes_per_client + j) % k]].push_back(client);

    auto by_class = indices_by_class(ds);
    std::vector<std::vector<std::size_t>> assignments(num_clients);
    for (std::size_t c = 0; c < k; ++c) {
        auto& members = by_class[c];
        if (members.size() < owners[c].size())
            throw std::invalid_argument("labels_quantity_skew: class " + std::to_string(c) + " has " +
                                        std::to_string(members.size()) + " samples for " +
                                        std::to_string(owners[c].size()) + " owners");
        std::shuffle(members.begin(), members.end(), rng);
        const auto parts = chunk(members, equal_sizes(members.size(), owners[c].size()));
        for (std::size_t o = 0; o < owners[c].size(); ++o)
            assignments[owners[c][o]].insert(assignments[owners[c][o]].end(), parts[o].begin(), parts[o].end());
    }
    PartitionSpec spec{.kind = PartitionKind::labels_quantity_skew, .num_clients = num_clients,
                       .classes_per_client = classes_per_client, .seed = seed};
    return finish(std::move(assignments), spec, ds,
                  "class slots dealt round-robin over a shuffled class list; each class split evenly among owners");
}

PartitionPlan partition_dirichlet(const Dataset& ds, std::size_t num_clients, double beta,
                                  std::uint64_t seed) {
    require_clients(ds, num_clients, "dirichlet");
    if (!(beta > 0.0)) throw std::invalid_argument("dirichlet: beta must be > 0");

    Rng rng(seed);
    std::gamma_distribution<double> gamma(beta, 1.0);
    const std::size_t k = ds.num_classes;
    Matrix<double> draws(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(num_clients));
    auto by_class = indices_by_class(ds);
    std::vector<std::vector<std::size_t>> assignments(num_clients);

    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> p(num_clients);
        double sum = 0.0;
        // Tiny beta can underflow every draw to zero; redraw in that case.
        for (int attempt = 0; attempt < 64 && !(sum > 0.0); ++attempt) {
            for (auto& v : p) v = gamma(rng);
            sum = std::accumulate(p.begin(), p.end(), 0.0);
        }
        if (!(sum > 0.0)) std::fill(p.begin(), p.end(), sum = 1.0);
        for (std::size_t j = 0; j < num_clients; ++j) {
            p[j] /= sum;
            draws(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = p[j];
        }
        auto& members = by_class[c];
        std::shuffle(members.begin(), members.end(), rng);
        const auto parts = chunk(members, largest_remainder(members.size(), p));
        for (std::size_t j = 0; j < num_clients; ++j)
            assignments[j].insert(assignments[j].end(), parts[j].begin(), parts[j].end());
    }

    for (std::size_t j = 0; j < num_clients; ++j) {
        if (!assignments[j].empty()) continue;
        auto largest = std::max_element(assignments.begin(), assignments.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
        assignments[j].push_back(largest->back());
        largest->pop_back();
    }

    PartitionSpec spec{.kind = PartitionKind::dirichlet_labels_skew, .num_clients = num_clients, .beta = beta,
                       .seed = seed};
    auto plan = finish(std::move(assignments), spec, ds,
                       "per-class Dir(beta) proportions, largest-remainder counts; an empty client takes one "
                       "sample from the largest client");
    plan.dirichlet_draws = std::move(draws);
    return plan;
}

PartitionPlan partition_pathological(const Dataset& ds, std::size_t num_clients, std::size_t shards_per_client,
                                     std::uint64_t seed) {
    require_clients(ds, num_clients, "pathological");
    if (shards_per_client < 1) throw std::invalid_argument("pathological: shards_per_client must be >= 1");
    const std::size_t num_shards = num_clients * shards_per_client;
    if (ds.size() < num_shards) throw std::invalid_argument("pathological: fewer samples than shards");

    auto sorted = iota_indices(ds.size());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [&](std::size_t a, std::size_t b) { return ds.labels[static_cast<Eigen::Index>(a)] <
                                                                ds.labels[static_cast<Eigen::Index>(b)]; });
    const std::size_t shard_size = ds.size() / num_shards;
    std::vector<std::size_t> sizes(num_shards, shard_size);
    sizes.back() += ds.size() % num_shards;
    const auto shards = chunk(sorted, sizes);

    Rng rng(seed);
    auto deal = iota_indices(num_shards);
    std::shuffle(deal.begin(), deal.end(), rng);
    std::vector<std::vector<std::size_t>> assignments(num_clients);
    for (std::size_t client = 0; client < num_clients; ++client)
        for (std::size_t j = 0; j < shards_per_client; ++j) {
            const auto& shard = shards[deal[client * shards_per_client + j]];
            assignments[client].insert(assignments[client].end(), shard.begin(), shard.end());
        }
    PartitionSpec spec{.kind = PartitionKind::pathological_labels_skew, .num_clients = num_clients,
                       .shards_per_client = shards_per_client, .seed = seed};
    return finish(std::move(assignments), spec, ds,
                  "label-sorted data cut into N*shards_per_client shards (remainder on the last), "
                  "dealt shuffled");
}

PrincipalComponent first_principal_component(const Matrix<double>& features, int max_iterations,
                                             double tolerance) {
    const auto n = features.rows();
    const auto d = features.cols();
    if (n < 2 || d < 1) throw std::invalid_argument("pca: need at least 2 samples and 1 feature");

    const Vector<double> mean = features.colwise().mean().transpose();
    Matrix<double> z = features.rowwise() - mean.transpose();
    Vector<double> scale = (z.array().square().colwise().sum() / static_cast<double>(n)).sqrt().matrix().transpose();
    bool any_variance = false;
    for (Eigen::Index j = 0; j < d; ++j) {
        if (scale[j] > 1e-12 * std::max(1.0, std::abs(mean[j]))) {
            any_variance = true;
        } else {
            scale[j] = 1.0;
            z.col(j).setZero();
        }
    }
    if (!any_variance) throw std::invalid_argument("pca: all features are constant");
    z.array().rowwise() /= scale.transpose().array();

    // Fixed pseudo-random start; generic, so not orthogonal to the top eigenvector.
    Vector<double> v(d);
    for (Eigen::Index j = 0; j < d; ++j)
        v[j] = 0.5 + static_cast<double>(mix64(static_cast<std::uint64_t>(j)) >> 11) * 0x1.0p-53;
    v.normalize();

    PrincipalComponent pc;
    for (pc.iterations = 0; pc.iterations < max_iterations;) {
        Vector<double> w = z.transpose() * (z * v);
        const double norm = w.norm();
        if (!(norm > 0.0)) throw std::invalid_argument("pca: no principal direction");
        w /= norm;
        ++pc.iterations;
        const double change = (w - v).norm();
        v = std::move(w);
        if (change < tolerance) break;
    }
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v[pivot] < 0) v = -v;
    pc.direction = v;
    pc.scores = z * v;
    return pc;
}

PartitionPlan partition_covariate_shift(const Dataset& ds, std::size_t num_clients, std::uint64_t seed) {
    require_clients(ds, num_clients, "covariate_shift");
    if (ds.input_dim() < 1) throw std::invalid_argument("covariate_shift: no features");
    const auto pc = first_principal_component(ds.features);
    auto order = iota_indices(ds.size());
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pc.scores[static_cast<Eigen::Index>(a)] < pc.scores[static_cast<Eigen::Index>(b)];
    });
    PartitionSpec spec{.kind = PartitionKind::covariate_shift, .num_clients = num_clients, .seed = seed};
    return finish(chunk(order, equal_sizes(ds.size(), num_clients)), spec, ds,
                  "samples sorted by first principal component score of standardized features, split into "
                  "contiguous equal blocks");
}

PartitionPlan make_partition(const Dataset& ds, const PartitionSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case PartitionKind::uniform: return partition_uniform(ds, spec.num_clients, spec.seed);
        case PartitionKind::quantity_skew:
            return partition_quantity_skew(ds, spec.num_clients, spec.alpha, spec.seed);
        case PartitionKind::labels_quantity_skew:
            return partition_labels_quantity_skew(ds, spec.num_clients, spec.classes_per_client, spec.seed);
        case PartitionKind::dirichlet_labels_skew:
            return partition_dirichlet(ds, spec.num_clients, spec.beta, spec.seed);
        case PartitionKind::pathological_labels_skew:
            return partition_pathological(ds, spec.num_clients, spec.shards_per_client, spec.seed);
        case PartitionKind::covariate_shift:
            return partition_covariate_shift(ds, spec.num_clients, spec.seed);
    }
    throw std::invalid_argument("unknown partition kind");
}

void summarize(PartitionPlan& plan, const Dataset& ds) {
    plan.provenance.clear();
    for (const auto& indices : plan.assignments) {
        ClientSummary s;
        s.sample_count = indices.size();
        s.label_histogram.assign(ds.num_classes, 0);
        for (auto i : indices)
            if (i < ds.size()) ++s.label_histogram[static_cast<std::size_t>(ds.labels[static_cast<Eigen::Index>(i)])];
        plan.provenance.push_back(std::move(s));
    }
}

PlanReport validate_plan(const PartitionPlan& plan, const Dataset& ds) {
    PlanReport report;
    auto& v = report.violations;
    if (plan.assignments.size() != plan.spec.num_clients)
        v.push_back("client count " + std::to_string(plan.assignments.size()) + " differs from spec num_clients " +
                    std::to_string(plan.spec.num_clients));

    std::vector<int> owner(ds.size(), -1);
    std::size_t total = 0;
    for (std::size_t c = 0; c < plan.assignments.size(); ++c) {
        const auto& indices = plan.assignments[c];
        const auto tag = "client " + std::to_string(c) + ": ";
        total += indices.size();
        report.counts.push_back(indices.size());
        if (indices.empty()) v.push_back(tag + "empty client");
        if (!std::is_sorted(indices.begin(), indices.end())) v.push_back(tag + "indices not sorted ascending");

        std::vector<double> hist(ds.num_classes, 0.0);
        for (auto i : indices) {
            if (i >= ds.size()) {
                v.push_back(tag + "index " + std::to_string(i) + " out of range");
                continue;
            }
            if (owner[i] >= 0) {
                v.push_back(tag + "index " + std::to_string(i) + " also assigned to client " +
                            std::to_string(owner[i]) + " (disjointness)");
                continue;
            }
            owner[i] = static_cast<int>(c);
            hist[static_cast<std::size_t>(ds.labels[static_cast<Eigen::Index>(i)])] += 1.0;
        }
        double entropy = 0.0;
        const double sum = std::accumulate(hist.begin(), hist.end(), 0.0);
        for (double h : hist)
            if (h > 0) entropy -= (h / sum) * std::log2(h / sum);
        report.label_entropy_bits.push_back(entropy);

        if (c < plan.provenance.size()) {
            const auto& p = plan.provenance[c];
            if (p.sample_count != indices.size()) v.push_back(tag + "provenance sample_count mismatch");
            if (p.label_histogram.size() == hist.size()) {
                for (std::size_t k = 0; k < hist.size(); ++k)
                    if (static_cast<double>(p.label_histogram[k]) != hist[k]) {
                        v.push_back(tag + "provenance label histogram mismatch");
                        break;
                    }
            }
        }
    }
    if (total > 0) {
        const auto [lo, hi] = std::minmax_element(report.counts.begin(), report.counts.end());
        report.min_share = static_cast<double>(*lo) / static_cast<double>(total);
        report.max_share = static_cast<double>(*hi) / static_cast<double>(total);
    }
    if (plan.dirichlet_draws) {
        const auto& draws = *plan.dirichlet_draws;
        for (Eigen::Index k = 0; k < draws.rows(); ++k)
            if (std::abs(draws.row(k).sum() - 1.0) > 1e-9 || (draws.row(k).array() < 0).any())
                v.push_back("dirichlet draw for class " + std::to_string(k) + " is not on the simplex");
    }
    return report;
}

}  // namespace fedbench
