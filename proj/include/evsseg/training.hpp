// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include "evsseg/model.hpp"
#include "evsseg/ssl.hpp"

namespace evsseg {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

template <typename Scalar>
struct OptimizerState {
    AdamWConfig hyper;
    std::size_t step = 0;
    TensorMap<Scalar> m;
    TensorMap<Scalar> v;
};

/// One decoupled-weight-decay Adam update of every tensor that has a gradient.
/// Decay is skipped for tensors where decays(name) is false.
template <typename Scalar>
void adamw_step(TensorMap<Scalar>& params, const TensorMap<Scalar>& grads, OptimizerState<Scalar>& state) {
    for (const auto& [name, g] : grads)
        if (!g.allFinite()) throw TrainingError("non-finite gradient in tensor '" + name + "'");

    ++state.step;
    const auto& h = state.hyper;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    const auto b1 = static_cast<Scalar>(h.beta1);
    const auto b2 = static_cast<Scalar>(h.beta2);

    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end()) throw TrainingError("gradient for unknown tensor '" + name + "'");
        auto& theta = it->second;
        if (g.rows() != theta.rows() || g.cols() != theta.cols())
            throw ShapeError("gradient of '" + name + "' has the wrong shape");

        auto [mit, m_new] = state.m.try_emplace(name, Matrix<Scalar>::Zero(g.rows(), g.cols()));
        auto [vit, v_new] = state.v.try_emplace(name, Matrix<Scalar>::Zero(g.rows(), g.cols()));
        auto& m = mit->second;
        auto& v = vit->second;

        if (h.weight_decay != 0.0 && decays(name)) theta *= static_cast<Scalar>(1.0 - h.lr * h.weight_decay);
        m = b1 * m + (Scalar(1) - b1) * g;
        v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
        const auto step = static_cast<Scalar>(h.lr / bc1);
        const auto denom_scale = static_cast<Scalar>(1.0 / std::sqrt(bc2));
        theta.array() -= step * m.array() / (v.array().sqrt() * denom_scale + static_cast<Scalar>(h.eps));
    }
}

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    AdamWConfig adam;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0;
    double label1_fraction = 0;
};

template <typename Scalar>
struct TrainResult {
    ModelParams<Scalar> params;
    std::vector<EpochStats> history;
};

/// Mean cross-entropy and its gradient for one batch.
template <typename Scalar>
Scalar batch_loss_and_grads(const ModelParams<Scalar>& params, const std::vector<const EventWindow*>& windows,
                            const std::vector<int>& labels, TensorMap<Scalar>* grads) {
    Tape<Scalar> tape;
    const auto vars = grads ? bind_parameters(tape, params) : bind_constants(tape, params);
    const auto logits = forward_batch(tape, vars, params.config, windows);
    const auto loss = cross_entropy_rows(logits, labels);
    const Scalar value = loss.value()(0, 0);
    if (!std::isfinite(static_cast<double>(value))) throw NumericError("loss is not finite");
    if (grads) {
        tape.backward(loss);
        grads->clear();
        for (const auto& [name, var] : vars) grads->emplace(name, tape.grad_of(var));
    }
    return value;
}

/// Mean loss over a dataset without updating anything.
template <typename Scalar>
double dataset_loss(const ModelParams<Scalar>& params, std::span<const EventWindow> windows,
                    std::span<const int> labels, std::size_t batch_size = 32) {
    double total = 0;
    for (std::size_t start = 0; start < windows.size(); start += batch_size) {
        const std::size_t end = std::min(windows.size(), start + batch_size);
        std::vector<const EventWindow*> batch;
        std::vector<int> y;
        for (std::size_t i = start; i < end; ++i) {
            batch.push_back(&windows[i]);
            y.push_back(labels[i]);
        }
        total += static_cast<double>(batch_loss_and_grads<Scalar>(params, batch, y, nullptr)) *
                 static_cast<double>(end - start);
    }
    return total / static_cast<double>(windows.size());
}

/// Mini-batch AdamW on softmax cross-entropy; the input parameters are left untouched.
/// `on_epoch`, when set, sees each epoch's statistics and the parameters after it;
/// returning false stops training early.
template <typename Scalar, typename EpochHook = std::nullptr_t>
TrainResult<Scalar> train_classifier(const ModelParams<Scalar>& init, std::span<const EventWindow> windows,
                                     std::span<const int> labels, const TrainConfig& config,
                                     EpochHook on_epoch = nullptr) {
    if (windows.empty()) throw ConfigError("training set is empty");
    if (windows.size() != labels.size()) throw ConfigError("window and label counts differ");
    if (config.batch_size < 1) throw ConfigError("batch size must be >= 1");

    TrainResult<Scalar> result{init, {}};
    OptimizerState<Scalar> opt;
    opt.hyper = config.adam;
    std::mt19937_64 rng(config.seed);

    const double label1 =
        static_cast<double>(std::count(labels.begin(), labels.end(), 1)) / static_cast<double>(labels.size());
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    TensorMap<Scalar> grads;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<const EventWindow*> batch;
            std::vector<int> y;
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(&windows[order[k]]);
                y.push_back(labels[order[k]]);
            }
            const Scalar loss = batch_loss_and_grads(result.params, batch, y, &grads);
            total += static_cast<double>(loss) * static_cast<double>(end - start);
            adamw_step(result.params.tensors, grads, opt);
        }
        result.history.push_back({epoch, total / static_cast<double>(order.size()), label1});
        if constexpr (!std::is_same_v<EpochHook, std::nullptr_t>) {
            if (!on_epoch(result.history.back(), result.params)) break;
        }
    }
    return result;
}

enum class ThresholdMode { Median, Fixed };

struct SslConfig {
    ThresholdMode mode = ThresholdMode::Median;
    double threshold = 0.5;  // used when mode == Fixed
    TrainConfig train;
};

/// Threshold and labels the pretext task uses for `windows`.
struct SslTargets {
    double threshold = 0;
    std::vector<double> entropies;
    std::vector<int> labels;
};

inline SslTargets make_ssl_targets(std::span<const EventWindow> windows, const SslConfig& config) {
    SslTargets t;
    t.entropies = window_entropies(windows);
    if (config.mode == ThresholdMode::Fixed) {
        check_fixed_threshold(config.threshold);
        t.threshold = config.threshold;
    } else {
        t.threshold = calibrate_threshold(std::span<const double>(t.entropies));
    }
    t.labels = ssl_labels(t.entropies, t.threshold);
    return t;
}

/// Trains the model on polarity-entropy labels. The model must carry the SSL head.
template <typename Scalar>
TrainResult<Scalar> pretrain(const ModelParams<Scalar>& model, std::span<const EventWindow> windows,
                             const SslConfig& config) {
    if (model.config.head != HeadKind::SslClassifier)
        throw ConfigError("pretrain needs an ssl_classifier head, model has " + to_string(model.config.head));
    if (windows.empty()) throw ConfigError("pretraining set is empty");
    const auto targets = make_ssl_targets(windows, config);
    return train_classifier(model, windows, std::span<const int>(targets.labels), config.train);
}

}  // namespace evsseg
