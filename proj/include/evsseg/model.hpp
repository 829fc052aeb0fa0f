// SPDX-License-Identifier: Apache-2.0
//
// The event transformer: input projection, learned positional table, a stack of
// pre-LayerNorm blocks with probabilistic multi-head attention, mean pooling over
// tokens, a GeLU trunk and a swappable two-class head.
#pragma once

#include <cstdint>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "evsseg/event.hpp"
#include "evsseg/model_config.hpp"
#include "evsseg/prob_attention.hpp"
#include "evsseg/tensor.hpp"

namespace evsseg {

enum class InitKind { FanInUniform, Normal, Constant };

struct TensorSpec {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    InitKind init = InitKind::Constant;
    double value = 0.0;  // fan-in for FanInUniform, std for Normal, the constant otherwise
    bool head = false;

    std::size_t size() const noexcept { return rows * cols; }
};

inline constexpr double kPositionalStd = 0.02;

/// Every learnable tensor the config implies, in initialization order.
std::vector<TensorSpec> tensor_specs(const ModelConfig& config);

/// Closed-form parameter count.
std::size_t count_params(const ModelConfig& config);

struct FlopReport {
    double total = 0;
    double input = 0;
    double per_block = 0;
    double trunk = 0;
    double head = 0;
    std::string formula;
};

/// Forward FLOPs for one window: 2 per multiply-accumulate (biases count as one MAC
/// per output) plus one per attention score entry. Normalization, activations and
/// residual adds are not counted.
FlopReport count_flops(const ModelConfig& config);

/// Whether AdamW weight decay applies to the named tensor.
bool decays(const std::string& name);

std::string block_prefix(std::size_t block);
std::string head_prefix(std::size_t block, std::size_t head);

template <typename Scalar>
struct ModelParams {
    ModelConfig config;
    TensorMap<Scalar> tensors;

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors) n += static_cast<std::size_t>(t.size());
        return n;
    }

    const Matrix<Scalar>& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ShapeError("model has no tensor '" + name + "'");
        return it->second;
    }

    template <typename Other>
    ModelParams<Other> cast() const {
        ModelParams<Other> out;
        out.config = config;
        for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<Other>());
        return out;
    }
};

/// Throws ShapeError unless `tensors` holds exactly the names and shapes `config` implies.
template <typename Scalar>
void check_tensors_match(const ModelConfig& config, const TensorMap<Scalar>& tensors) {
    const auto specs = tensor_specs(config);
    for (const auto& s : specs) {
        auto it = tensors.find(s.name);
        if (it == tensors.end()) throw ShapeError("missing tensor '" + s.name + "'");
        if (static_cast<std::size_t>(it->second.rows()) != s.rows ||
            static_cast<std::size_t>(it->second.cols()) != s.cols)
            throw ShapeError("tensor '" + s.name + "' is " + Tape<Scalar>::dims(it->second) + ", expected " +
                             std::to_string(s.rows) + "x" + std::to_string(s.cols));
    }
    if (tensors.size() != specs.size()) {
        for (const auto& [name, _] : tensors) {
            bool known = false;
            for (const auto& s : specs) known = known || s.name == name;
            if (!known) throw ShapeError("unexpected tensor '" + name + "'");
        }
    }
}

namespace detail {

/// Values are drawn in double precision and rounded to float so that a freshly
/// initialized model survives a 32-bit checkpoint unchanged.
template <typename Scalar>
Matrix<Scalar> materialize(const TensorSpec& spec, std::mt19937_64& rng) {
    Matrix<Scalar> m(spec.rows, spec.cols);
    auto round = [](double v) { return static_cast<Scalar>(static_cast<float>(v)); };
    switch (spec.init) {
        case InitKind::FanInUniform: {
            const double bound = 1.0 / std::sqrt(spec.value);
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = round(dist(rng));
            break;
        }
        case InitKind::Normal: {
            std::normal_distribution<double> dist(0.0, spec.value);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = round(dist(rng));
            break;
        }
        case InitKind::Constant:
            m.setConstant(round(spec.value));
            break;
    }
    return m;
}

}  // namespace detail

/// Deterministic for a fixed seed.
template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams<Scalar> params;
    params.config = config;
    std::mt19937_64 rng(seed);
    for (const auto& spec : tensor_specs(config))
        params.tensors.emplace(spec.name, detail::materialize<Scalar>(spec, rng));
    return params;
}

/// Replaces the head with a freshly initialized head of `kind`; every other tensor is copied as is.
template <typename Scalar>
ModelParams<Scalar> swap_head(const ModelParams<Scalar>& params, HeadKind kind, std::uint64_t seed) {
    if (params.config.head == kind) {
        std::clog << "warning: model already has a " << to_string(kind) << " head; swap_head is a no-op\n";
        return params;
    }
    ModelParams<Scalar> out;
    out.config = params.config;
    out.config.head = kind;
    for (const auto& [name, t] : params.tensors)
        if (name.rfind("head.", 0) != 0) out.tensors.emplace(name, t);
    std::mt19937_64 rng(seed);
    for (const auto& spec : tensor_specs(out.config))
        if (spec.head) out.tensors.emplace(spec.name, detail::materialize<Scalar>(spec, rng));
    return out;
}

/// Registers every tensor as a differentiable leaf. `params` must outlive the tape.
template <typename Scalar>
VarMap<Scalar> bind_parameters(Tape<Scalar>& tape, const ModelParams<Scalar>& params) {
    VarMap<Scalar> vars;
    for (const auto& [name, t] : params.tensors) vars.emplace(name, tape.parameter(t));
    return vars;
}

/// Registers every tensor as a constant (forward-only evaluation).
template <typename Scalar>
VarMap<Scalar> bind_constants(Tape<Scalar>& tape, const ModelParams<Scalar>& params) {
    VarMap<Scalar> vars;
    for (const auto& [name, t] : params.tensors) vars.emplace(name, tape.constant_view(t));
    return vars;
}

namespace detail {

template <typename Scalar>
const Var<Scalar>& lookup(const VarMap<Scalar>& vars, const std::string& name) {
    auto it = vars.find(name);
    if (it == vars.end()) throw ShapeError("model has no tensor '" + name + "'");
    return it->second;
}

template <typename Scalar>
Var<Scalar> dense(const VarMap<Scalar>& vars, const std::string& prefix, const Var<Scalar>& x) {
    return linear(x, lookup(vars, prefix + ".weight"), lookup(vars, prefix + ".bias"));
}

}  // namespace detail

/// One multi-head probabilistic attention sublayer on N x d_model tokens.
template <typename Scalar>
Var<Scalar> attention_sublayer(const VarMap<Scalar>& vars, const ModelConfig& config, std::size_t block,
                               const Var<Scalar>& tokens, const Matrix<Scalar>& deltas) {
    using detail::lookup;
    std::vector<Var<Scalar>> heads;
    heads.reserve(config.n_heads);
    for (std::size_t h = 0; h < config.n_heads; ++h) {
        const std::string p = head_prefix(block, h);
        const auto q = l2_normalize_rows(linear(tokens, lookup(vars, p + ".wq")));
        const auto k = l2_normalize_rows(linear(tokens, lookup(vars, p + ".wk")));
        const auto v = linear(tokens, lookup(vars, p + ".wv"));
        ProbAttentionVars<Scalar> pv{lookup(vars, p + ".pi_logits"),   lookup(vars, p + ".gamma_logits"),
                                     lookup(vars, p + ".beta_raw"),    lookup(vars, p + ".sigma_k_raw"),
                                     lookup(vars, p + ".sigma_q_raw"), lookup(vars, p + ".sigma_delta_raw")};
        heads.push_back(matmul(prob_attention_scores(q, k, deltas, pv), v));
    }
    const auto merged = heads.size() == 1 ? heads.front() : concat(heads, Axis::Cols);
    return detail::dense(vars, block_prefix(block) + ".attn_out", merged);
}

/// Runs one window through the input projection and all blocks; returns the pooled 1 x d_model row.
template <typename Scalar>
Var<Scalar> encode_window(Tape<Scalar>& tape, const VarMap<Scalar>& vars, const ModelConfig& config,
                          const EventWindow& window) {
    using detail::lookup;
    if (window.size() != config.window)
        throw ShapeError("window has " + std::to_string(window.size()) + " events, model expects " +
                         std::to_string(config.window));
    const auto features = tape.constant(event_features<Scalar>(window));
    const Matrix<Scalar> deltas = delta_matrix<Scalar>(window);

    auto x = add(detail::dense(vars, "input", features), lookup(vars, "pos_embedding"));
    for (std::size_t b = 0; b < config.n_blocks; ++b) {
        const std::string p = block_prefix(b);
        const auto h = layer_norm(x, lookup(vars, p + ".ln1.scale"), lookup(vars, p + ".ln1.shift"));
        x = add(x, attention_sublayer(vars, config, b, h, deltas));
        auto f = layer_norm(x, lookup(vars, p + ".ln2.scale"), lookup(vars, p + ".ln2.shift"));
        for (std::size_t i = 0; i < config.block_ffn.size(); ++i)
            f = gelu(detail::dense(vars, p + ".ffn" + std::to_string(i), f));
        x = add(x, f);
    }
    return mean_rows(x);
}

/// Trunk and head applied to stacked pooled rows (B x d_model) -> B x 2 logits.
template <typename Scalar>
Var<Scalar> trunk_and_head(const VarMap<Scalar>& vars, const ModelConfig& config, Var<Scalar> pooled) {
    for (std::size_t i = 0; i < config.trunk_ffn.size(); ++i)
        pooled = gelu(detail::dense(vars, "trunk" + std::to_string(i), pooled));
    const auto& layers = config.head_layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        pooled = detail::dense(vars, "head.fc" + std::to_string(i), pooled);
        if (i + 1 < layers.size()) pooled = relu(pooled);
    }
    return pooled;
}

/// B x 2 logits for a batch of windows, recorded on `tape`.
template <typename Scalar>
Var<Scalar> forward_batch(Tape<Scalar>& tape, const VarMap<Scalar>& vars, const ModelConfig& config,
                          const std::vector<const EventWindow*>& windows) {
    if (windows.empty()) throw ShapeError("forward: empty batch");
    std::vector<Var<Scalar>> pooled;
    pooled.reserve(windows.size());
    for (const auto* w : windows) pooled.push_back(encode_window(tape, vars, config, *w));
    auto stacked = pooled.size() == 1 ? pooled.front() : concat(pooled, Axis::Rows);
    return trunk_and_head(vars, config, stacked);
}

/// Length-2 logits for a single window.
template <typename Scalar>
RowVector<Scalar> forward(const ModelParams<Scalar>& params, const EventWindow& window) {
    Tape<Scalar> tape;
    const auto vars = bind_constants(tape, params);
    return forward_batch(tape, vars, params.config, {&window}).value().row(0);
}

}  // namespace evsseg
