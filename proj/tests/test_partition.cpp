#include "fedbench/partition.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <set>

using namespace fedbench;

namespace {

constexpr PartitionKind kAllKinds[] = {
    PartitionKind::uniform,
    PartitionKind::quantity_skew,
    PartitionKind::labels_quantity_skew,
    PartitionKind::dirichlet_labels_skew,
    PartitionKind::pathological_labels_skew,
    PartitionKind::covariate_shift,
};

Dataset balanced(std::size_t classes, std::size_t per_class, std::uint64_t seed = 1, std::size_t dim = 5) {
    return synthetic_blobs(classes, per_class, dim, 1.0, seed);
}

std::vector<std::size_t> sizes(const PartitionPlan& plan) {
    std::vector<std::size_t> out;
    for (const auto& a : plan.assignments) out.push_back(a.size());
    return out;
}

std::set<int> labels_of(const Dataset& ds, const std::vector<std::size_t>& indices) {
    std::set<int> out;
    for (auto i : indices) out.insert(ds.labels[static_cast<Eigen::Index>(i)]);
    return out;
}

// Largest remainder for weights w_i / denom in exact integer arithmetic:
// floor(total * w_i / denom) plus one for the largest remainders, lower index first.
std::vector<std::size_t> integer_largest_remainder(std::size_t total, const std::vector<std::size_t>& w,
                                                   std::size_t denom) {
    std::vector<std::size_t> counts(w.size()), rem(w.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        counts[i] = total * w[i] / denom;
        rem[i] = total * w[i] % denom;
        assigned += counts[i];
    }
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[order[k]];
    return counts;
}

void check_structure(const PartitionPlan& plan, const Dataset& ds) {
    std::vector<int> seen(ds.size(), 0);
    std::size_t total = 0;
    for (const auto& a : plan.assignments) {
        CHECK(!a.empty());
        CHECK(std::is_sorted(a.begin(), a.end()));
        for (auto i : a) {
            REQUIRE(i < ds.size());
            ++seen[i];
        }
        total += a.size();
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int s) { return s <= 1; }));
    CHECK(static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1)) == total);
}

}  // namespace

TEST_CASE("partition kind names round-trip") {
    for (auto kind : kAllKinds) CHECK(partition_kind_from_string(to_string(kind)) == kind);
    CHECK_THROWS_AS(partition_kind_from_string("iid"), std::invalid_argument);
}

TEST_CASE("spec validation") {
    PartitionSpec s;
    CHECK_NOTHROW(s.validate());
    s.num_clients = 1;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.alpha = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.beta = -1;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = {};
    s.shards_per_client = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("uniform sizes") {
    auto plan = partition_uniform(balanced(10, 100), 10, 3);
    for (auto s : sizes(plan)) CHECK(s == 100);

    const auto ds = synthetic_blobs(1, 1003, 2, 1.0, 1);
    auto odd = sizes(partition_uniform(ds, 10, 3));
    CHECK(std::count(odd.begin(), odd.end(), 100) == 7);
    CHECK(std::count(odd.begin(), odd.end(), 101) == 3);
    CHECK_THROWS_AS(partition_uniform(synthetic_blobs(2, 2, 2, 1.0, 1), 5, 1), std::invalid_argument);
}

TEST_CASE("uniform label histograms stay within 3 points of 10 percent") {
    const auto ds = balanced(10, 1000, 4, 2);
    double worst = 0.0;
    for (std::uint64_t seed = 2; seed <= 6; ++seed) {
        const auto plan = partition_uniform(ds, 10, seed);
        for (const auto& client : plan.provenance)
            for (auto count : client.label_histogram)
                worst = std::max(worst, std::abs(static_cast<double>(count) / client.sample_count - 0.1));
    }
    CHECK(worst <= 0.03);
}

TEST_CASE("uniform label deviations beyond 3 points are rare across many seeds") {
    // A 3-point deviation is about 3.3 standard deviations for 1000-sample
    // clients, so roughly 4 of 5000 cells are expected to exceed it.
    const auto ds = balanced(10, 1000, 4, 2);
    int beyond = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed)
        for (const auto& client : partition_uniform(ds, 10, seed).provenance)
            for (auto count : client.label_histogram)
                beyond += std::abs(static_cast<double>(count) / client.sample_count - 0.1) > 0.03;
    CHECK(beyond <= 12);
}

TEST_CASE("power shares integrate the density") {
    for (double q : power_shares(10, 1.0)) CHECK(q == doctest::Approx(0.1).epsilon(1e-15));
    const auto q2 = power_shares(10, 2.0);
    for (std::size_t i = 0; i < 10; ++i) CHECK(q2[i] == doctest::Approx((2.0 * i + 1) / 100.0).epsilon(1e-14));
    CHECK(q2.front() == doctest::Approx(0.01));
    CHECK(q2.back() == doctest::Approx(0.19));
    CHECK(power_shares(4, 3.0)[3] == doctest::Approx(0.578125).epsilon(1e-15));
    const auto q = power_shares(7, 2.7);
    CHECK(std::accumulate(q.begin(), q.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("largest remainder conserves totals and breaks ties toward lower index") {
    CHECK(largest_remainder(10, {1, 1, 1}) == std::vector<std::size_t>{4, 3, 3});
    CHECK(largest_remainder(7, {0.5, 0.25, 0.25}) == std::vector<std::size_t>{3, 2, 2});
    CHECK(largest_remainder(0, {1, 2}) == std::vector<std::size_t>{0, 0});
    for (std::size_t total : {1u, 17u, 999u, 1000u, 1797u}) {
        std::vector<double> w{0.3, 0.1, 0.6, 0.05};
        const auto c = largest_remainder(total, w);
        CHECK(std::accumulate(c.begin(), c.end(), std::size_t{0}) == total);
    }
}

TEST_CASE("quantity skew with alpha 2 matches integer largest-remainder rounding of (2i+1)/100") {
    std::vector<std::size_t> weights;
    for (std::size_t i = 0; i < 10; ++i) weights.push_back(2 * i + 1);
    for (std::size_t n : {1000u, 1003u, 1797u, 2011u}) {
        const auto ds = synthetic_blobs(1, n, 2, 1.0, 3);
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto plan = partition_quantity_skew(ds, 10, 2.0, seed);
            CHECK(sizes(plan) == integer_largest_remainder(n, weights, 100));
            check_structure(plan, ds);
        }
    }
}

TEST_CASE("quantity skew with alpha 1 is uniform and tiny shares are an error") {
    const auto ds = balanced(10, 100);
    for (auto s : sizes(partition_quantity_skew(ds, 10, 1.0, 1))) CHECK(s == 100);
    // Client 0 gets 1/10^4 of 50 samples, which rounds to nothing.
    CHECK_THROWS_AS(partition_quantity_skew(balanced(5, 10), 10, 4.0, 1), std::invalid_argument);
}

TEST_CASE("labels quantity skew ownership") {
    const auto ds = balanced(10, 60);
    SUBCASE("N=10, two classes each: two owners per class") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto plan = partition_labels_quantity_skew(ds, 10, 2, seed);
            std::vector<int> owners(10, 0);
            for (const auto& a : plan.assignments) {
                const auto labels = labels_of(ds, a);
                CHECK(labels.size() == 2);
                for (int k : labels) ++owners[static_cast<std::size_t>(k)];
            }
            for (int o : owners) CHECK(o == 2);
            // Each class's 60 samples are split evenly between its two owners.
            for (const auto& client : plan.provenance)
                for (auto count : client.label_histogram) CHECK((count == 0 || count == 30));
            check_structure(plan, ds);
        }
    }
    SUBCASE("N=5: one owner per class") {
        const auto plan = partition_labels_quantity_skew(ds, 5, 2, 3);
        std::vector<int> owners(10, 0);
        for (const auto& a : plan.assignments)
            for (int k : labels_of(ds, a)) ++owners[static_cast<std::size_t>(k)];
        for (int o : owners) CHECK(o == 1);
    }
    SUBCASE("uneven slot counts give floor/ceil owners") {
        const auto plan = partition_labels_quantity_skew(ds, 7, 3, 2);
        std::vector<int> owners(10, 0);
        for (const auto& a : plan.assignments) {
            CHECK(labels_of(ds, a).size() == 3);
            for (int k : labels_of(ds, a)) ++owners[static_cast<std::size_t>(k)];
        }
        for (int o : owners) CHECK((o == 2 || o == 3));
    }
    CHECK_THROWS_AS(partition_labels_quantity_skew(ds, 4, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(partition_labels_quantity_skew(ds, 10, 11, 1), std::invalid_argument);
}

TEST_CASE("dirichlet draws lie on the simplex and conserve class totals") {
    const auto ds = balanced(10, 80);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto plan = partition_dirichlet(ds, 10, 0.5, seed);
        REQUIRE(plan.dirichlet_draws.has_value());
        const auto& p = *plan.dirichlet_draws;
        CHECK(p.rows() == 10);
        CHECK(p.cols() == 10);
        CHECK(p.minCoeff() >= 0.0);
        for (Eigen::Index k = 0; k < p.rows(); ++k) CHECK(std::abs(p.row(k).sum() - 1.0) <= 1e-9);
        std::vector<std::size_t> per_class(10, 0);
        for (const auto& client : plan.provenance)
            for (std::size_t k = 0; k < 10; ++k) per_class[k] += client.label_histogram[k];
        for (auto c : per_class) CHECK(c == 80);
        check_structure(plan, ds);
    }
    CHECK_THROWS_AS(partition_dirichlet(balanced(2, 2), 5, 0.5, 1), std::invalid_argument);
}

TEST_CASE("dirichlet with a huge concentration is nearly uniform") {
    const auto ds = balanced(10, 1000, 2, 2);
    const auto plan = partition_dirichlet(ds, 10, 1e6, 7);
    for (const auto& client : plan.provenance)
        for (auto count : client.label_histogram) CHECK(std::abs(count / 1000.0 * 10.0 - 1.0) <= 0.02);
}

TEST_CASE("dirichlet repairs empty clients") {
    // Tiny beta concentrates each class on one client, leaving others empty before repair.
    const auto ds = balanced(3, 10);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto plan = partition_dirichlet(ds, 8, 0.01, seed);
        check_structure(plan, ds);
        CHECK(validate_plan(plan, ds).ok());
    }
}

TEST_CASE("pathological shards") {
    const auto ds = balanced(10, 200);
    const auto plan = partition_pathological(ds, 10, 2, 4);
    for (auto s : sizes(plan)) CHECK(s == 200);

    const auto small = balanced(10, 200, 3);
    // Oracle: stable sort by label, 20 shards of 100 positions.
    std::vector<std::size_t> sorted(small.size());
    std::iota(sorted.begin(), sorted.end(), std::size_t{0});
    std::stable_sort(sorted.begin(), sorted.end(),
                     [&](auto a, auto b) { return small.labels[static_cast<Eigen::Index>(a)] < small.labels[static_cast<Eigen::Index>(b)]; });
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto p = partition_pathological(small, 10, 2, seed);
        for (const auto& a : p.assignments) {
            const std::set<std::size_t> mine(a.begin(), a.end());
            int shards = 0;
            for (std::size_t s = 0; s < 20; ++s) {
                std::size_t inside = 0;
                for (std::size_t k = s * 100; k < (s + 1) * 100; ++k) inside += mine.count(sorted[k]);
                CHECK((inside == 0 || inside == 100));
                shards += inside == 100;
            }
            CHECK(shards == 2);
            CHECK(labels_of(small, a).size() <= 4);
        }
        CHECK(sizes(p) == std::vector<std::size_t>(10, 200));
    }
    CHECK(partition_pathological(small, 10, 2, 9).assignments == partition_pathological(small, 10, 2, 9).assignments);
}

TEST_CASE("pathological remainder goes to the last shard") {
    const auto ds = synthetic_blobs(2, 11, 2, 1.0, 1);  // 22 samples, 4 shards of 5 plus 2 extra
    const auto plan = partition_pathological(ds, 2, 2, 1);
    auto s = sizes(plan);
    std::sort(s.begin(), s.end());
    CHECK(s == std::vector<std::size_t>{10, 12});
    CHECK_THROWS_AS(partition_pathological(ds, 6, 4, 1), std::invalid_argument);
}

TEST_CASE("covariate shift on one feature gives contiguous quartiles") {
    Dataset ds;
    ds.features.resize(100, 1);
    ds.labels.resize(100);
    for (int i = 0; i < 100; ++i) {
        ds.features(i, 0) = i;
        ds.labels[i] = i % 2;
    }
    ds.num_classes = 2;
    const auto plan = partition_covariate_shift(ds, 4, 1);
    std::vector<std::vector<std::size_t>> blocks(4);
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 25; ++i) blocks[b].push_back(b * 25 + i);
    const bool ascending = plan.assignments == blocks;
    std::reverse(blocks.begin(), blocks.end());
    const bool descending = plan.assignments == blocks;
    CHECK((ascending || descending));
}

TEST_CASE("power iteration agrees with a dense eigensolver") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> normal;
    for (int trial = 0; trial < 5; ++trial) {
        // Correlated 5-feature sample with a dominant direction.
        Matrix<double> x(200, 5);
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const double t = normal(rng) * 3.0;
            for (Eigen::Index c = 0; c < 5; ++c) x(r, c) = t * (c + 1) * (trial + 1) + normal(rng) * (c + 2);
        }
        const auto pc = first_principal_component(x);
        Matrix<double> z = x.rowwise() - x.colwise().mean();
        const Vector<double> sd = (z.array().square().colwise().mean()).sqrt().transpose();
        for (Eigen::Index c = 0; c < 5; ++c) z.col(c) /= sd[c];
        const Eigen::MatrixXd cov = (z.transpose() * z) / static_cast<double>(z.rows());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        const Eigen::VectorXd top = eig.eigenvectors().col(4);
        const double cosine = std::abs(top.dot(pc.direction)) / (top.norm() * pc.direction.norm());
        CHECK(cosine >= 0.9999);
        Eigen::Index big = 0;
        pc.direction.cwiseAbs().maxCoeff(&big);
        CHECK(pc.direction[big] > 0.0);
        CHECK(pc.direction.norm() == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(first_principal_component(Matrix<double>::Constant(10, 3, 2.0)), std::invalid_argument);
}

TEST_CASE("covariate blocks are contiguous in the first component score") {
    const auto ds = balanced(10, 40, 5, 6);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto plan = partition_covariate_shift(ds, 10, seed);
        const auto scores = first_principal_component(ds.features).scores;
        std::vector<double> lo, hi;
        for (const auto& a : plan.assignments) {
            double mn = 1e300, mx = -1e300;
            for (auto i : a) {
                mn = std::min(mn, scores[static_cast<Eigen::Index>(i)]);
                mx = std::max(mx, scores[static_cast<Eigen::Index>(i)]);
            }
            lo.push_back(mn);
            hi.push_back(mx);
            CHECK((a.size() == 40));
        }
        bool up = true, down = true;
        for (std::size_t i = 0; i + 1 < lo.size(); ++i) {
            up = up && hi[i] <= lo[i + 1];
            down = down && lo[i] >= hi[i + 1];
        }
        CHECK((up || down));
    }
}

TEST_CASE("every kind yields valid disjoint plans across seeds") {
    const auto ds = balanced(10, 50, 8);
    for (auto kind : kAllKinds)
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            PartitionSpec spec;
            spec.kind = kind;
            spec.num_clients = 10;
            spec.seed = seed;
            const auto plan = make_partition(ds, spec);
            CAPTURE(to_string(kind));
            CAPTURE(seed);
            CHECK(plan.num_clients() == 10);
            CHECK(plan.spec == spec);
            check_structure(plan, ds);
            const auto report = validate_plan(plan, ds);
            CHECK(report.ok());
            std::size_t total = 0;
            for (auto c : report.counts) total += c;
            std::set<std::size_t> all;
            for (const auto& a : plan.assignments) all.insert(a.begin(), a.end());
            CHECK(all.size() == total);
            CHECK(make_partition(ds, spec).assignments == plan.assignments);
        }
}

TEST_CASE("validate_plan reports violations without throwing") {
    const auto ds = balanced(4, 10);
    auto plan = partition_uniform(ds, 4, 1);
    auto report = validate_plan(plan, ds);
    CHECK(report.ok());
    CHECK(report.counts == std::vector<std::size_t>(4, 10));
    CHECK(report.min_share == doctest::Approx(0.25));
    for (double h : report.label_entropy_bits) CHECK(h >= 0.0);

    auto dup = plan;
    dup.assignments[1].push_back(dup.assignments[0].front());
    std::sort(dup.assignments[1].begin(), dup.assignments[1].end());
    report = validate_plan(dup, ds);
    CHECK(!report.ok());
    CHECK(std::any_of(report.violations.begin(), report.violations.end(),
                      [](const std::string& v) { return v.find("disjoint") != std::string::npos; }));

    auto empty = plan;
    empty.assignments[2].clear();
    report = validate_plan(empty, ds);
    CHECK(std::any_of(report.violations.begin(), report.violations.end(),
                      [](const std::string& v) { return v.find("empty") != std::string::npos; }));

    auto bad = plan;
    bad.assignments[0].push_back(1000);
    CHECK_NOTHROW(report = validate_plan(bad, ds));
    CHECK(!report.ok());
}
