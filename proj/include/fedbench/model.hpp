#pragma once

// Small differentiable classifiers over flat parameter vectors.
//
// Parameters live in one contiguous vector; the layout lists the tensors in
// storage order. Weight matrices are stored column-major with shape
// (fan_in, fan_out), so a logit row is x * W + b.

#include "fedbench/types.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedbench {

enum class ModelKind { softmax_regression, mlp_one_hidden };

struct ModelSpec {
    ModelKind kind = ModelKind::softmax_regression;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::size_t hidden_dim = 0;  // mlp only
    double init_scale = 0.01;

    void validate() const {
        if (input_dim < 1) throw std::invalid_argument("model: input_dim must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
        if (kind == ModelKind::mlp_one_hidden && hidden_dim < 1)
            throw std::invalid_argument("model: hidden_dim must be >= 1 for mlp_one_hidden");
        if (!(init_scale >= 0.0) || !std::isfinite(init_scale))
            throw std::invalid_argument("model: init_scale must be finite and >= 0");
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct TensorSlot {
    std::string name;
    std::vector<std::size_t> shape;

    std::size_t size() const {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        return n;
    }
    bool is_bias() const { return shape.size() == 1; }

    friend bool operator==(const TensorSlot&, const TensorSlot&) = default;
};

inline std::vector<TensorSlot> parameter_layout(const ModelSpec& spec) {
    spec.validate();
    if (spec.kind == ModelKind::softmax_regression)
        return {{"W", {spec.input_dim, spec.num_classes}}, {"b", {spec.num_classes}}};
    return {{"W1", {spec.input_dim, spec.hidden_dim}},
            {"b1", {spec.hidden_dim}},
            {"W2", {spec.hidden_dim, spec.num_classes}},
            {"b2", {spec.num_classes}}};
}

inline std::size_t parameter_count(const ModelSpec& spec) {
    std::size_t d = 0;
    for (const auto& slot : parameter_layout(spec)) d += slot.size();
    return d;
}

template <typename Scalar>
struct ModelParams {
    Vector<Scalar> values;
    std::vector<TensorSlot> layout;

    Eigen::Index size() const { return values.size(); }
};

template <typename Scalar>
struct Batch {
    Matrix<Scalar> features;
    LabelVector labels;
};

template <typename Scalar>
struct FisherDiagonal {
    Vector<Scalar> values;
    std::size_t sample_count = 0;
};

enum class OptimizerKind { sgd, adam };

template <typename Scalar>
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    Scalar lr = Scalar(1e-4);
    Scalar adam_beta1 = Scalar(0.9);
    Scalar adam_beta2 = Scalar(0.999);
    Scalar adam_eps = Scalar(1e-8);
    Vector<Scalar> first_moment;
    Vector<Scalar> second_moment;
    std::uint64_t step_count = 0;
};

template <typename Scalar>
OptimizerState<Scalar> make_optimizer(OptimizerKind kind, Scalar lr, Eigen::Index d) {
    if (!(lr > 0)) throw std::invalid_argument("optimizer: lr must be > 0");
    OptimizerState<Scalar> state;
    state.kind = kind;
    state.lr = lr;
    state.first_moment = Vector<Scalar>::Zero(d);
    state.second_moment = Vector<Scalar>::Zero(d);
    return state;
}

template <typename Scalar>
struct LossAndProbs {
    Scalar loss;
    Matrix<Scalar> probs;
};

namespace detail {

template <typename Scalar>
using ColMajor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct Views {
    Eigen::Map<const ColMajor<Scalar>> w1;
    Eigen::Map<const Vector<Scalar>> b1;
    // Only meaningful for the mlp.
    Eigen::Map<const ColMajor<Scalar>> w2;
    Eigen::Map<const Vector<Scalar>> b2;
};

template <typename Scalar>
Views<Scalar> views(const ModelSpec& spec, const Vector<Scalar>& theta) {
    const auto in = static_cast<Eigen::Index>(spec.input_dim);
    const auto c = static_cast<Eigen::Index>(spec.num_classes);
    const Scalar* p = theta.data();
    if (spec.kind == ModelKind::softmax_regression) {
        return {{p, in, c}, {p + in * c, c}, {p, 0, 0}, {p, 0}};
    }
    const auto h = static_cast<Eigen::Index>(spec.hidden_dim);
    const Scalar* w2 = p + in * h + h;
    return {{p, in, h}, {p + in * h, h}, {w2, h, c}, {w2 + h * c, c}};
}

template <typename Scalar>
void check_params(const ModelSpec& spec, const Vector<Scalar>& theta) {
    spec.validate();
    if (static_cast<std::size_t>(theta.size()) != parameter_count(spec))
        throw std::invalid_argument("model: parameter vector length does not match spec");
}

template <typename Scalar, typename Features>
void check_features(const ModelSpec& spec, const Features& x) {
    if (static_cast<std::size_t>(x.cols()) != spec.input_dim)
        throw std::invalid_argument("model: feature width does not match input_dim");
    if (!x.allFinite()) throw std::invalid_argument("model: non-finite feature value");
}

template <typename Scalar>
void check_batch(const ModelSpec& spec, const Batch<Scalar>& batch) {
    if (batch.features.rows() < 1) throw std::invalid_argument("model: empty batch");
    if (batch.features.rows() != batch.labels.size())
        throw std::invalid_argument("model: feature rows and label count differ");
    check_features<Scalar>(spec, batch.features);
    for (Eigen::Index s = 0; s < batch.labels.size(); ++s) {
        const int y = batch.labels[s];
        if (y < 0 || static_cast<std::size_t>(y) >= spec.num_classes)
            throw std::out_of_range("model: label out of range");
    }
}

// Forward pass. `hidden` is left empty for softmax regression.
template <typename Scalar>
struct Activations {
    Matrix<Scalar> hidden;
    Matrix<Scalar> logits;
};

template <typename Scalar, typename Features>
Activations<Scalar> forward(const ModelSpec& spec, const Vector<Scalar>& theta, const Features& x) {
    const auto v = views(spec, theta);
    Activations<Scalar> act;
    if (spec.kind == ModelKind::softmax_regression) {
        act.logits = (x * v.w1).rowwise() + v.b1.transpose();
    } else {
        act.hidden = ((x * v.w1).rowwise() + v.b1.transpose()).array().tanh().matrix();
        act.logits = (act.hidden * v.w2).rowwise() + v.b2.transpose();
    }
    return act;
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
    Matrix<Scalar> p = logits.colwise() - logits.rowwise().maxCoeff();
    p = p.array().exp().matrix();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

// Per-sample deltas of the cross-entropy w.r.t. each layer's pre-activation.
template <typename Scalar>
struct Deltas {
    Matrix<Scalar> output;  // probs - onehot
    Matrix<Scalar> hidden;  // mlp only
};

template <typename Scalar>
Deltas<Scalar> backprop(const ModelSpec& spec, const Vector<Scalar>& theta,
                        const Activations<Scalar>& act, const LabelVector& labels) {
    Deltas<Scalar> d;
    d.output = softmax_rows(act.logits);
    for (Eigen::Index s = 0; s < labels.size(); ++s) d.output(s, labels[s]) -= Scalar(1);
    if (spec.kind == ModelKind::mlp_one_hidden) {
        const auto v = views(spec, theta);
        d.hidden = ((d.output * v.w2.transpose()).array() *
                    (Scalar(1) - act.hidden.array().square()))
                       .matrix();
    }
    return d;
}

// Writes sum_s a_s (x) g_s into a column-major (fan_in x fan_out) block and
// sum_s g_s into the following bias block, both scaled. With `squared` the
// per-sample outer products are squared elementwise before summing.
template <typename Scalar, typename Inputs>
Scalar* accumulate_layer(const Inputs& inputs, const Matrix<Scalar>& delta, Scalar scale,
                         bool squared, Scalar* out) {
    const Eigen::Index fan_in = inputs.cols();
    const Eigen::Index fan_out = delta.cols();
    Eigen::Map<ColMajor<Scalar>> w(out, fan_in, fan_out);
    Eigen::Map<Vector<Scalar>> b(out + fan_in * fan_out, fan_out);
    if (squared) {
        const Matrix<Scalar> g2 = delta.array().square().matrix();
        w.noalias() = scale * (inputs.array().square().matrix().transpose() * g2);
        b = scale * g2.colwise().sum().transpose();
    } else {
        w.noalias() = scale * (inputs.transpose() * delta);
        b = scale * delta.colwise().sum().transpose();
    }
    return out + fan_in * fan_out + fan_out;
}

template <typename Scalar>
Scalar mean_cross_entropy(const Matrix<Scalar>& logits, const LabelVector& labels) {
    const Vector<Scalar> row_max = logits.rowwise().maxCoeff();
    Scalar total = 0;
    for (Eigen::Index s = 0; s < labels.size(); ++s) {
        const Scalar lse = std::log((logits.row(s).array() - row_max[s]).exp().sum());
        total += lse - (logits(s, labels[s]) - row_max[s]);
    }
    return total / static_cast<Scalar>(labels.size());
}

template <typename Scalar>
Vector<Scalar> mean_outer(const ModelSpec& spec, const Vector<Scalar>& theta,
                          const Batch<Scalar>& batch, bool squared, Scalar* loss = nullptr) {
    check_params(spec, theta);
    check_batch(spec, batch);
    const auto act = forward(spec, theta, batch.features);
    if (loss) *loss = mean_cross_entropy(act.logits, batch.labels);
    const auto d = backprop(spec, theta, act, batch.labels);
    const Scalar scale = Scalar(1) / static_cast<Scalar>(batch.labels.size());
    Vector<Scalar> out(theta.size());
    Scalar* cursor = out.data();
    if (spec.kind == ModelKind::softmax_regression) {
        accumulate_layer(batch.features, d.output, scale, squared, cursor);
    } else {
        cursor = accumulate_layer(batch.features, d.hidden, scale, squared, cursor);
        accumulate_layer(act.hidden, d.output, scale, squared, cursor);
    }
    return out;
}

}  // namespace detail

/// Weights uniform in [-init_scale, init_scale], biases zero. Deterministic in (spec, seed).
template <typename Scalar = double>
ModelParams<Scalar> init_params(const ModelSpec& spec, std::uint64_t seed) {
    ModelParams<Scalar> params;
    params.layout = parameter_layout(spec);
    params.values = Vector<Scalar>::Zero(static_cast<Eigen::Index>(parameter_count(spec)));
    Rng rng(seed);
    std::uniform_real_distribution<double> dist(-spec.init_scale, spec.init_scale);
    Eigen::Index offset = 0;
    for (const auto& slot : params.layout) {
        const auto n = static_cast<Eigen::Index>(slot.size());
        if (!slot.is_bias()) {
            for (Eigen::Index i = 0; i < n; ++i)
                params.values[offset + i] = static_cast<Scalar>(dist(rng));
        }
        offset += n;
    }
    return params;
}

/// Mean cross-entropy and the softmax probabilities of every row.
template <typename Scalar>
LossAndProbs<Scalar> forward_loss(const ModelSpec& spec, const Vector<Scalar>& theta,
                                  const Batch<Scalar>& batch) {
    detail::check_params(spec, theta);
    detail::check_batch(spec, batch);
    const auto act = detail::forward(spec, theta, batch.features);
    const Vector<Scalar> row_max = act.logits.rowwise().maxCoeff();
    const Matrix<Scalar> shifted = act.logits.colwise() - row_max;
    const Vector<Scalar> lse = shifted.array().exp().rowwise().sum().log().matrix();
    Scalar total = 0;
    for (Eigen::Index s = 0; s < batch.labels.size(); ++s)
        total += lse[s] - shifted(s, batch.labels[s]);
    Matrix<Scalar> probs = (shifted.colwise() - lse).array().exp().matrix();
    return {total / static_cast<Scalar>(batch.labels.size()), std::move(probs)};
}

/// Gradient of the mean cross-entropy.
template <typename Scalar>
Vector<Scalar> gradient(const ModelSpec& spec, const Vector<Scalar>& theta, const Batch<Scalar>& batch) {
    return detail::mean_outer(spec, theta, batch, /*squared=*/false);
}

template <typename Scalar>
struct LossAndGradient {
    Scalar loss;
    Vector<Scalar> grad;
};

/// One forward pass for both the mean cross-entropy and its gradient.
template <typename Scalar>
LossAndGradient<Scalar> loss_and_gradient(const ModelSpec& spec, const Vector<Scalar>& theta,
                                          const Batch<Scalar>& batch) {
    LossAndGradient<Scalar> out{};
    out.grad = detail::mean_outer(spec, theta, batch, /*squared=*/false, &out.loss);
    return out;
}

/// Empirical Fisher diagonal: mean over samples of the squared per-sample
/// log-likelihood gradient at the observed label.
template <typename Scalar>
FisherDiagonal<Scalar> fisher_diagonal(const ModelSpec& spec, const Vector<Scalar>& theta,
                                       const Batch<Scalar>& data) {
    if (data.labels.size() == 0) throw std::invalid_argument("fisher: empty data");
    return {detail::mean_outer(spec, theta, data, /*squared=*/true),
            static_cast<std::size_t>(data.labels.size())};
}

template <typename Scalar>
void optimizer_step(OptimizerState<Scalar>& state, Vector<Scalar>& theta, const Vector<Scalar>& grad) {
    if (grad.size() != theta.size()) throw std::invalid_argument("optimizer: gradient length mismatch");
    if (!grad.allFinite()) throw std::invalid_argument("optimizer: non-finite gradient");
    ++state.step_count;
    if (state.kind == OptimizerKind::sgd) {
        theta.noalias() -= state.lr * grad;
        return;
    }
    if (state.first_moment.size() != theta.size()) {
        state.first_moment = Vector<Scalar>::Zero(theta.size());
        state.second_moment = Vector<Scalar>::Zero(theta.size());
    }
    const Scalar b1 = state.adam_beta1;
    const Scalar b2 = state.adam_beta2;
    state.first_moment = b1 * state.first_moment + (Scalar(1) - b1) * grad;
    state.second_moment = b2 * state.second_moment + (Scalar(1) - b2) * grad.cwiseAbs2();
    const auto t = static_cast<Scalar>(state.step_count);
    const Scalar c1 = Scalar(1) - std::pow(b1, t);
    const Scalar c2 = Scalar(1) - std::pow(b2, t);
    theta.array() -= state.lr * (state.first_moment.array() / c1) /
                     ((state.second_moment.array() / c2).sqrt() + state.adam_eps);
}

/// Predicted class per row; ties go to the lowest class index.
template <typename Scalar, typename Features>
LabelVector predict(const ModelSpec& spec, const Vector<Scalar>& theta, const Features& features) {
    detail::check_params(spec, theta);
    detail::check_features<Scalar>(spec, features);
    const auto act = detail::forward(spec, theta, features);
    LabelVector out(act.logits.rows());
    for (Eigen::Index s = 0; s < act.logits.rows(); ++s) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < act.logits.cols(); ++c)
            if (act.logits(s, c) > act.logits(s, best)) best = c;
        out[s] = static_cast<int>(best);
    }
    return out;
}

template <typename Scalar, typename Features>
double top1_accuracy(const ModelSpec& spec, const Vector<Scalar>& theta, const Features& features,
                     const LabelVector& labels) {
    if (labels.size() == 0) throw std::invalid_argument("accuracy: empty evaluation set");
    if (features.rows() != labels.size())
        throw std::invalid_argument("accuracy: feature rows and label count differ");
    const LabelVector predicted = predict(spec, theta, features);
    return static_cast<double>((predicted.array() == labels.array()).count()) /
           static_cast<double>(labels.size());
}

}  // namespace fedbench
