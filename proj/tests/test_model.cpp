#include "fedbench/model.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

using namespace fedbench;

namespace {

ModelSpec softmax_spec(std::size_t in, std::size_t classes) {
    return {ModelKind::softmax_regression, in, classes, 0, 0.01};
}

ModelSpec mlp_spec(std::size_t in, std::size_t hidden, std::size_t classes) {
    return {ModelKind::mlp_one_hidden, in, classes, hidden, 0.01};
}

template <typename S>
Batch<S> random_batch(const ModelSpec& spec, std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<int> label(0, static_cast<int>(spec.num_classes) - 1);
    Batch<S> b;
    b.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.input_dim));
    b.labels.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index r = 0; r < b.features.rows(); ++r) {
        for (Eigen::Index c = 0; c < b.features.cols(); ++c) b.features(r, c) = static_cast<S>(normal(rng));
        b.labels[r] = label(rng);
    }
    return b;
}

Vector<double> random_params(const ModelSpec& spec, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector<double> theta(static_cast<Eigen::Index>(parameter_count(spec)));
    for (auto& v : theta) v = normal(rng);
    return theta;
}

// Scalar reference forward pass. Weight (i, j) of a fan_in x fan_out matrix
// sits at offset + i + j * fan_in.
template <typename T>
std::vector<T> oracle_logits(const ModelSpec& spec, const std::vector<T>& theta, const std::vector<T>& x) {
    const std::size_t in = spec.input_dim, C = spec.num_classes;
    std::vector<T> logits(C);
    if (spec.kind == ModelKind::softmax_regression) {
        for (std::size_t c = 0; c < C; ++c) {
            T z = theta[in * C + c];
            for (std::size_t i = 0; i < in; ++i) z += x[i] * theta[i + c * in];
            logits[c] = z;
        }
        return logits;
    }
    const std::size_t H = spec.hidden_dim;
    std::vector<T> h(H);
    for (std::size_t k = 0; k < H; ++k) {
        T z = theta[in * H + k];
        for (std::size_t i = 0; i < in; ++i) z += x[i] * theta[i + k * in];
        h[k] = std::tanh(z);
    }
    const std::size_t o2 = in * H + H;
    for (std::size_t c = 0; c < C; ++c) {
        T z = theta[o2 + H * C + c];
        for (std::size_t k = 0; k < H; ++k) z += h[k] * theta[o2 + k + c * H];
        logits[c] = z;
    }
    return logits;
}

template <typename T>
T oracle_loss(const ModelSpec& spec, const std::vector<T>& theta, const Batch<double>& b) {
    T total = 0;
    for (Eigen::Index s = 0; s < b.features.rows(); ++s) {
        std::vector<T> x(spec.input_dim);
        for (std::size_t i = 0; i < spec.input_dim; ++i) x[i] = b.features(s, static_cast<Eigen::Index>(i));
        const auto z = oracle_logits(spec, theta, x);
        const T m = *std::max_element(z.begin(), z.end());
        T sum = 0;
        for (T v : z) sum += std::exp(v - m);
        total += m + std::log(sum) - z[static_cast<std::size_t>(b.labels[s])];
    }
    return total / static_cast<T>(b.features.rows());
}

std::vector<long double> widen(const Vector<double>& v) { return {v.begin(), v.end()}; }

// Max over coordinates of |a - f| / max(|a|, |f|, floor).
double max_relative_error(const Vector<double>& analytic, const std::vector<long double>& fd, double floor) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double f = static_cast<double>(fd[static_cast<std::size_t>(i)]);
        const double denom = std::max({std::abs(analytic[i]), std::abs(f), floor});
        worst = std::max(worst, std::abs(analytic[i] - f) / denom);
    }
    return worst;
}

std::vector<long double> central_difference(const ModelSpec& spec, const Vector<double>& theta, const Batch<double>& b,
                                            long double h) {
    auto t = widen(theta);
    std::vector<long double> g(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const long double keep = t[i];
        t[i] = keep + h;
        const long double up = oracle_loss(spec, t, b);
        t[i] = keep - h;
        const long double down = oracle_loss(spec, t, b);
        t[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

}  // namespace

TEST_CASE("parameter layout arithmetic") {
    CHECK(parameter_count(softmax_spec(4, 3)) == 15);
    CHECK(parameter_count(mlp_spec(8, 16, 10)) == 314);
    const auto layout = parameter_layout(mlp_spec(8, 16, 10));
    REQUIRE(layout.size() == 4);
    CHECK(layout[0].shape == std::vector<std::size_t>{8, 16});
    CHECK(layout[3].is_bias());
}

TEST_CASE("init_params is deterministic, bounded, with zero biases") {
    const auto spec = softmax_spec(4, 3);
    const auto a = init_params(spec, 7);
    const auto b = init_params(spec, 7);
    CHECK(a.values.size() == 15);
    CHECK(a.values == b.values);
    CHECK(init_params(spec, 8).values != a.values);
    CHECK(a.values.head(12).cwiseAbs().maxCoeff() <= 0.01);
    CHECK(a.values.tail(3).isZero(0.0));

    const auto m = init_params(mlp_spec(8, 16, 10), 1);
    CHECK(m.values.size() == 314);
    CHECK(m.values.segment(128, 16).isZero(0.0));
    CHECK(m.values.tail(10).isZero(0.0));
}

TEST_CASE("invalid specs are rejected") {
    CHECK_THROWS_AS(init_params(softmax_spec(0, 3), 1), std::invalid_argument);
    CHECK_THROWS_AS(init_params(softmax_spec(3, 1), 1), std::invalid_argument);
    CHECK_THROWS_AS(init_params(mlp_spec(3, 0, 3), 1), std::invalid_argument);
}

TEST_CASE("forward_loss with zero parameters is ln C") {
    const auto spec = softmax_spec(5, 10);
    std::mt19937_64 rng(1);
    const auto batch = random_batch<double>(spec, 7, rng);
    const Vector<double> zero = Vector<double>::Zero(static_cast<Eigen::Index>(parameter_count(spec)));
    const auto out = forward_loss(spec, zero, batch);
    CHECK(out.loss == doctest::Approx(std::log(10.0)).epsilon(1e-14));
    CHECK((out.probs.array() - 0.1).abs().maxCoeff() < 1e-15);
}

TEST_CASE("forward_loss saturates on perfect logits") {
    // Identity features with a 30-unit margin on the true class.
    const auto spec = softmax_spec(3, 3);
    Batch<double> b;
    b.features = Matrix<double>::Identity(3, 3);
    b.labels = LabelVector::LinSpaced(3, 0, 2);
    Vector<double> theta = Vector<double>::Zero(12);
    for (int c = 0; c < 3; ++c) theta[c + 3 * c] = 30.0;
    CHECK(forward_loss(spec, theta, b).loss < 1e-9);
    CHECK(top1_accuracy(spec, theta, b.features, b.labels) == 1.0);
}

TEST_CASE("forward_loss matches a brute-force log-sum-exp") {
    std::mt19937_64 rng(3);
    for (const auto& spec : {softmax_spec(4, 3), mlp_spec(4, 5, 3)}) {
        const auto batch = random_batch<double>(spec, 3, rng);
        const auto theta = random_params(spec, 1.0, rng);
        const double expected = static_cast<double>(oracle_loss(spec, widen(theta), batch));
        CHECK(std::abs(forward_loss(spec, theta, batch).loss - expected) <= 1e-10);
    }
}

TEST_CASE("softmax rows sum to one for logits up to 100 in magnitude") {
    const auto spec = softmax_spec(1, 12);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> logit(-100.0, 100.0);
    Batch<double> b;
    b.features = Matrix<double>::Ones(1, 1);
    b.labels = LabelVector::Zero(1);
    for (int trial = 0; trial < 200; ++trial) {
        Vector<double> theta = Vector<double>::Zero(24);
        for (int c = 0; c < 12; ++c) theta[c] = logit(rng);
        const auto out = forward_loss(spec, theta, b);
        CHECK(std::abs(out.probs.row(0).sum() - 1.0) <= 1e-6);
        CHECK(std::isfinite(out.loss));
    }
}

TEST_CASE("gradient matches central finite differences on 50 random draws per model kind") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> dim(1, 6), classes(2, 5), hidden(1, 6), rows(1, 8);
    for (auto kind : {ModelKind::softmax_regression, ModelKind::mlp_one_hidden}) {
        double worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            ModelSpec spec{kind, static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(classes(rng)),
                           kind == ModelKind::mlp_one_hidden ? static_cast<std::size_t>(hidden(rng)) : 0, 0.01};
            const auto batch = random_batch<double>(spec, static_cast<std::size_t>(rows(rng)), rng);
            const auto theta = random_params(spec, 0.5, rng);
            const auto fd = central_difference(spec, theta, batch, 1e-5L);
            worst = std::max(worst, max_relative_error(gradient(spec, theta, batch), fd, 1e-8));
        }
        CAPTURE(static_cast<int>(kind));
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("zero inputs give a zero weight gradient and bias gradient probs minus onehot") {
    const auto spec = softmax_spec(3, 4);
    std::mt19937_64 rng(2);
    Batch<double> b;
    b.features = Matrix<double>::Zero(5, 3);
    b.labels.resize(5);
    b.labels << 0, 1, 1, 3, 2;
    const auto theta = random_params(spec, 1.0, rng);
    const auto g = gradient(spec, theta, b);
    CHECK(g.head(12).isZero(0.0));

    const auto probs = forward_loss(spec, theta, b).probs;
    Vector<double> expected = probs.colwise().mean().transpose();
    for (Eigen::Index s = 0; s < 5; ++s) expected[b.labels[s]] -= 1.0 / 5.0;
    CHECK((g.tail(4) - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("a duplicated sample has the same gradient as the single sample") {
    std::mt19937_64 rng(4);
    for (const auto& spec : {softmax_spec(3, 4), mlp_spec(3, 4, 4)}) {
        const auto one = random_batch<double>(spec, 1, rng);
        Batch<double> two;
        two.features = one.features.replicate(2, 1);
        two.labels = one.labels.replicate(2, 1);
        const auto theta = random_params(spec, 1.0, rng);
        CHECK((gradient(spec, theta, one) - gradient(spec, theta, two)).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("loss_and_gradient agrees with the separate calls") {
    std::mt19937_64 rng(6);
    const auto spec = mlp_spec(4, 3, 3);
    const auto b = random_batch<double>(spec, 6, rng);
    const auto theta = random_params(spec, 1.0, rng);
    const auto both = loss_and_gradient(spec, theta, b);
    CHECK(both.loss == doctest::Approx(forward_loss(spec, theta, b).loss).epsilon(1e-14));
    CHECK((both.grad - gradient(spec, theta, b)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("bad labels and non-finite features are rejected") {
    const auto spec = softmax_spec(2, 3);
    const Vector<double> theta = Vector<double>::Zero(9);
    Batch<double> b;
    b.features = Matrix<double>::Zero(2, 2);
    b.labels.resize(2);
    b.labels << 0, 3;
    CHECK_THROWS_AS(forward_loss(spec, theta, b), std::out_of_range);
    CHECK_THROWS_AS(gradient(spec, theta, b), std::out_of_range);
    b.labels << 0, 2;
    b.features(1, 1) = std::nan("");
    CHECK_THROWS_AS(forward_loss(spec, theta, b), std::invalid_argument);
    b.features(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(gradient(spec, theta, b), std::invalid_argument);
}

TEST_CASE("sgd step") {
    auto state = make_optimizer<double>(OptimizerKind::sgd, 0.1, 2);
    Vector<double> theta(2), g(2);
    theta << 1, 2;
    g << 10, -10;
    optimizer_step(state, theta, g);
    CHECK(theta[0] == doctest::Approx(0.0));
    CHECK(theta[1] == doctest::Approx(3.0));
    CHECK(state.step_count == 1);
}

TEST_CASE("first adam step moves each coordinate by lr against the gradient sign") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 20; ++trial) {
        auto state = make_optimizer<double>(OptimizerKind::adam, 1e-3, 6);
        Vector<double> theta(6), g(6);
        for (auto& v : theta) v = u(rng);
        for (auto& v : g) v = u(rng);
        const Vector<double> start = theta;
        optimizer_step(state, theta, g);
        for (Eigen::Index i = 0; i < 6; ++i) {
            // Closed form: m_hat = g and v_hat = g^2 after one step.
            const double expected = -1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
            CHECK(std::abs((theta[i] - start[i]) - expected) < 1e-15);
            CHECK(std::abs(std::abs(theta[i] - start[i]) - 1e-3) < 1e-6);
        }
    }
}

TEST_CASE("optimizer steps are deterministic and reject non-finite gradients") {
    auto a = make_optimizer<double>(OptimizerKind::adam, 1e-2, 3);
    auto b = a;
    Vector<double> ta = Vector<double>::Ones(3), tb = ta;
    Vector<double> g(3);
    g << 0.5, -1.5, 2.0;
    for (int i = 0; i < 3; ++i) {
        optimizer_step(a, ta, g);
        optimizer_step(b, tb, g);
    }
    CHECK(ta == tb);
    CHECK(a.first_moment == b.first_moment);
    g[1] = std::nan("");
    CHECK_THROWS_AS(optimizer_step(a, ta, g), std::invalid_argument);
    CHECK_THROWS_AS(make_optimizer<double>(OptimizerKind::sgd, 0.0, 3), std::invalid_argument);
}

TEST_CASE("100 full-batch sgd steps on separable data decrease the loss every step") {
    const auto spec = softmax_spec(2, 2);
    Batch<double> b;
    b.features.resize(8, 2);
    b.labels.resize(8);
    for (int s = 0; s < 8; ++s) {
        const double sign = s < 4 ? -1.0 : 1.0;
        b.features(s, 0) = sign * (1.0 + 0.25 * s);
        b.features(s, 1) = 0.5 * (s % 3) - 0.5;
        b.labels[s] = s < 4 ? 0 : 1;
    }
    auto theta = init_params(spec, 3).values;
    auto state = make_optimizer<double>(OptimizerKind::sgd, 0.1, theta.size());
    double previous = forward_loss(spec, theta, b).loss;
    for (int step = 0; step < 100; ++step) {
        optimizer_step(state, theta, gradient(spec, theta, b));
        const double loss = forward_loss(spec, theta, b).loss;
        REQUIRE(loss < previous);
        previous = loss;
    }
}

TEST_CASE("fisher of one sample is its squared log-likelihood gradient") {
    std::mt19937_64 rng(12);
    for (const auto& spec : {softmax_spec(3, 4), mlp_spec(3, 2, 4)}) {
        const auto b = random_batch<double>(spec, 1, rng);
        const auto theta = random_params(spec, 1.0, rng);
        const auto f = fisher_diagonal(spec, theta, b);
        CHECK(f.sample_count == 1);
        CHECK((f.values - gradient(spec, theta, b).cwiseAbs2()).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("fisher matches per-sample gradient squaring on five samples") {
    const auto spec = softmax_spec(4, 3);
    std::mt19937_64 rng(13);
    const auto b = random_batch<double>(spec, 5, rng);
    const auto theta = random_params(spec, 1.0, rng);

    // d/dW_ic of -log p_y = x_i (p_c - [c == y]); d/db_c = p_c - [c == y].
    std::vector<double> expected(15, 0.0);
    const auto t = std::vector<double>(theta.begin(), theta.end());
    for (Eigen::Index s = 0; s < 5; ++s) {
        std::vector<double> x(4);
        for (int i = 0; i < 4; ++i) x[static_cast<std::size_t>(i)] = b.features(s, i);
        auto z = oracle_logits(spec, t, x);
        const double m = *std::max_element(z.begin(), z.end());
        double sum = 0;
        for (double v : z) sum += std::exp(v - m);
        for (std::size_t c = 0; c < 3; ++c) {
            const double delta = std::exp(z[c] - m) / sum - (static_cast<int>(c) == b.labels[s] ? 1.0 : 0.0);
            for (std::size_t i = 0; i < 4; ++i) expected[i + c * 4] += (x[i] * delta) * (x[i] * delta) / 5.0;
            expected[12 + c] += delta * delta / 5.0;
        }
    }
    const auto f = fisher_diagonal(spec, theta, b);
    CHECK(f.sample_count == 5);
    for (std::size_t i = 0; i < 15; ++i) CHECK(std::abs(f.values[static_cast<Eigen::Index>(i)] - expected[i]) <= 1e-10);
}

TEST_CASE("fisher is nonnegative and invariant to row order") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        const auto spec = trial % 2 ? mlp_spec(4, 3, 3) : softmax_spec(4, 3);
        const auto b = random_batch<double>(spec, 9, rng);
        const auto theta = random_params(spec, 1.0, rng);
        std::vector<int> perm(9);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Batch<double> shuffled;
        shuffled.features = b.features(perm, Eigen::all);
        shuffled.labels = b.labels(perm);
        const auto f = fisher_diagonal(spec, theta, b).values;
        CHECK(f.minCoeff() >= 0.0);
        CHECK((f - fisher_diagonal(spec, theta, shuffled).values).cwiseAbs().maxCoeff() <= 1e-14);
    }
    Batch<double> empty;
    empty.features.resize(0, 4);
    CHECK_THROWS_AS(fisher_diagonal(softmax_spec(4, 3), Vector<double>::Zero(15).eval(), empty), std::invalid_argument);
}

TEST_CASE("top1 accuracy cases") {
    const auto spec = softmax_spec(2, 10);
    const Vector<double> zero = Vector<double>::Zero(30);
    Matrix<double> x = Matrix<double>::Ones(20, 2);
    LabelVector y(20);
    for (int i = 0; i < 20; ++i) y[i] = i % 10;
    CHECK(top1_accuracy(spec, zero, x, y) == doctest::Approx(0.1));

    // Three of four correct with hand-built logits.
    const auto small = softmax_spec(2, 2);
    Vector<double> theta(6);
    theta << 1, 0, 0, 1, 0, 0;  // logit0 = x0, logit1 = x1
    Matrix<double> f(4, 2);
    f << 2, 0, 0, 2, 3, 1, 1, 3;
    LabelVector labels(4);
    labels << 0, 1, 0, 0;
    CHECK(top1_accuracy(small, theta, f, labels) == doctest::Approx(0.75));
    CHECK_THROWS_AS(top1_accuracy(small, theta, Matrix<double>(0, 2), LabelVector(0)), std::invalid_argument);
}
