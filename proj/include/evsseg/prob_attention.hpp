// SPDX-License-Identifier: Apache-2.0
//
// Probabilistic attention: w_ij = P(k_j | q_i) + P(Delta_j | q_i), where both
// posteriors share a Gaussian-mixture evidence term P(q_i). With unit-norm
// queries and keys the Gaussian exponents collapse to dot products:
//
//   P(k_j | q_i)     = (pi_j / s_k) exp[-(1 - q_i.k_j) / s_k^2] / Z_i
//   P(Delta_j | q_i) = (beta_j / s_d) exp[-(1 - Delta_ij)^2 / (2 s_d^2)] / Z_i
//   Z_i              = sum_k (gamma_k / s_q) exp[-(1 - q_i.k_k) / s_q^2]
//
// Everything is evaluated in log space; Z_i goes through log-sum-exp.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "evsseg/tensor.hpp"

namespace evsseg {

inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kBetaInit = 0.1;
// Width of the spatial Gaussian at init, in units of the normalized distance. With 1.0 the
// spatial term outweighs the softmax term several times over at N=50 and the residual stream
// grows block to block; 0.3 keeps it a small correction at typical in-window distances.
inline constexpr double kSigmaDeltaInit = 0.3;

template <typename Scalar>
Scalar softplus(Scalar x) {
    return x > Scalar(20) ? x : std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

/// Inverse of softplus for y > 0.
template <typename Scalar>
Scalar softplus_inverse(Scalar y) {
    return y > Scalar(20) ? y : std::log(std::expm1(y));
}

template <typename Scalar>
RowVector<Scalar> log_softmax(const RowVector<Scalar>& logits) {
    const Scalar m = logits.maxCoeff();
    const Scalar lse = m + std::log((logits.array() - m).exp().sum());
    return (logits.array() - lse).matrix();
}

/// Query/key/value projections for one head; each is d x d_e.
template <typename Scalar>
struct ProjectionWeights {
    Matrix<Scalar> wq, wk, wv;
};

/// Unconstrained per-head parameters as stored in a checkpoint.
template <typename Scalar>
struct ProbAttentionRaw {
    RowVector<Scalar> pi_logits, gamma_logits, beta_raw;
    Scalar sigma_k_raw{}, sigma_q_raw{}, sigma_delta_raw{};
};

/// Constrained per-head parameters: pi and gamma on the simplex, beta >= 0, sigmas > 0.
template <typename Scalar>
struct ProbAttentionParams {
    RowVector<Scalar> log_pi, log_gamma, beta;
    Scalar sigma_k{}, sigma_q{}, sigma_delta{};

    Eigen::Index size() const noexcept { return beta.size(); }
    RowVector<Scalar> pi() const { return log_pi.array().exp().matrix(); }
    RowVector<Scalar> gamma() const { return log_gamma.array().exp().matrix(); }

    static ProbAttentionParams from_raw(const ProbAttentionRaw<Scalar>& raw) {
        const auto floor = static_cast<Scalar>(kSigmaFloor);
        ProbAttentionParams p;
        p.log_pi = log_softmax<Scalar>(raw.pi_logits);
        p.log_gamma = log_softmax<Scalar>(raw.gamma_logits);
        p.beta = raw.beta_raw.unaryExpr([](Scalar v) { return softplus(v); });
        p.sigma_k = softplus(raw.sigma_k_raw) + floor;
        p.sigma_q = softplus(raw.sigma_q_raw) + floor;
        p.sigma_delta = softplus(raw.sigma_delta_raw) + floor;
        return p;
    }

    /// Uniform pi and gamma, sigma_k = sigma_q = d^(1/4), the given beta and sigma_delta.
    /// With beta = 0 the scores equal softmax(q.k / sqrt(d)).
    static ProbAttentionParams matched(Eigen::Index n, Eigen::Index head_dim, Scalar beta = Scalar(0),
                                       Scalar sigma_delta = Scalar(1)) {
        ProbAttentionParams p;
        const Scalar log_uniform = -std::log(static_cast<Scalar>(n));
        p.log_pi = RowVector<Scalar>::Constant(n, log_uniform);
        p.log_gamma = RowVector<Scalar>::Constant(n, log_uniform);
        p.beta = RowVector<Scalar>::Constant(n, beta);
        p.sigma_k = p.sigma_q = std::pow(static_cast<Scalar>(head_dim), Scalar(0.25));
        p.sigma_delta = sigma_delta;
        return p;
    }
};

/// Raw values that reproduce ProbAttentionParams::matched(n, d, softplus(beta_raw)).
template <typename Scalar>
ProbAttentionRaw<Scalar> matched_raw(Eigen::Index n, Eigen::Index head_dim, Scalar beta = static_cast<Scalar>(kBetaInit),
                                     Scalar sigma_delta = static_cast<Scalar>(kSigmaDeltaInit)) {
    const auto floor = static_cast<Scalar>(kSigmaFloor);
    const Scalar sigma = std::pow(static_cast<Scalar>(head_dim), Scalar(0.25));
    ProbAttentionRaw<Scalar> raw;
    raw.pi_logits = RowVector<Scalar>::Zero(n);
    raw.gamma_logits = RowVector<Scalar>::Zero(n);
    raw.beta_raw = RowVector<Scalar>::Constant(n, softplus_inverse(beta));
    raw.sigma_k_raw = raw.sigma_q_raw = softplus_inverse(sigma - floor);
    raw.sigma_delta_raw = softplus_inverse(sigma_delta - floor);
    return raw;
}

/// Q = tokens W_q^T, K = tokens W_k^T, V = tokens W_v^T; Q and K rows are L2-normalized.
template <typename Scalar>
struct Projected {
    Matrix<Scalar> q, k, v;
};

template <typename Scalar>
Projected<Scalar> project_qkv(const Matrix<Scalar>& tokens, const ProjectionWeights<Scalar>& w) {
    if (w.wq.cols() != tokens.cols() || w.wk.cols() != tokens.cols() || w.wv.cols() != tokens.cols())
        throw ShapeError("project_qkv: tokens are " + Tape<Scalar>::dims(tokens) + " but W_q is " +
                         Tape<Scalar>::dims(w.wq));
    if (w.wq.rows() != w.wk.rows())
        throw ShapeError("project_qkv: W_q and W_k disagree on head dim");
    Projected<Scalar> out;
    out.q = l2_normalize_rows_value<Scalar>(tokens * w.wq.transpose());
    out.k = l2_normalize_rows_value<Scalar>(tokens * w.wk.transpose());
    out.v = tokens * w.wv.transpose();
    return out;
}

/// Scaled dot-product attention scores softmax(Q K^T / sqrt(d)).
template <typename Scalar>
Matrix<Scalar> softmax_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k) {
    if (q.cols() != k.cols()) throw ShapeError("softmax_attention: head dims differ");
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
    return softmax_rows_value<Scalar>((q * k.transpose()) * scale);
}

namespace detail {

template <typename Scalar>
void check_deltas(const Eigen::Ref<const Matrix<Scalar>>& deltas) {
    if ((deltas.array() < Scalar(0)).any() || (deltas.array() > Scalar(1)).any())
        throw PreconditionError("spatial distances must be normalized to [0, 1]");
}

template <typename Scalar>
void check_params(const ProbAttentionParams<Scalar>& p, Eigen::Index n) {
    if (p.log_pi.size() != n || p.log_gamma.size() != n || p.beta.size() != n)
        throw ShapeError("attention priors have length " + std::to_string(p.beta.size()) + ", expected " +
                         std::to_string(n));
}

/// Log of each mixture component (gamma_k / s_q) exp[-(1 - s_ik)/s_q^2], for a similarity matrix S.
template <typename Scalar>
Matrix<Scalar> log_evidence_terms(const Matrix<Scalar>& sim, const ProbAttentionParams<Scalar>& p) {
    const Scalar inv_var = Scalar(1) / (p.sigma_q * p.sigma_q);
    Matrix<Scalar> c = (sim.array() - Scalar(1)).matrix() * inv_var;
    c.rowwise() += p.log_gamma;
    c.array() -= std::log(p.sigma_q);
    return c;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_logsumexp(const Matrix<Scalar>& c) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(c.rows());
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
        const Scalar m = c.row(i).maxCoeff();
        out(i) = m + std::log((c.row(i).array() - m).exp().sum());
    }
    return out;
}

/// Intermediate quantities of one score evaluation, kept for the backward pass.
template <typename Scalar>
struct ScoreParts {
    Matrix<Scalar> key_term;      // P(k_j | q_i)
    Matrix<Scalar> spatial_unit;  // P(Delta_j | q_i) / beta_j
    Matrix<Scalar> evidence;      // softmax_k of the mixture logs, i.e. d log Z_i / d c_ik
    Matrix<Scalar> scores;
};

template <typename Scalar>
ScoreParts<Scalar> score_parts(const Matrix<Scalar>& sim, const Matrix<Scalar>& deltas,
                               const ProbAttentionParams<Scalar>& p) {
    const Eigen::Index n = sim.cols();
    check_params(p, n);
    if (deltas.rows() != sim.rows() || deltas.cols() != n)
        throw ShapeError("spatial distances are " + Tape<Scalar>::dims(deltas) + ", scores are " +
                         Tape<Scalar>::dims(sim));
    check_deltas<Scalar>(deltas);

    const Matrix<Scalar> c = log_evidence_terms(sim, p);
    const auto log_z = row_logsumexp(c);

    ScoreParts<Scalar> parts;
    parts.evidence = (c.colwise() - log_z).array().exp().matrix();

    const Scalar inv_var_k = Scalar(1) / (p.sigma_k * p.sigma_k);
    Matrix<Scalar> a = (sim.array() - Scalar(1)).matrix() * inv_var_k;
    a.rowwise() += p.log_pi;
    a.array() -= std::log(p.sigma_k);
    parts.key_term = (a.colwise() - log_z).array().exp().matrix();

    const Scalar inv_2var_d = Scalar(1) / (Scalar(2) * p.sigma_delta * p.sigma_delta);
    Matrix<Scalar> b = -(Scalar(1) - deltas.array()).square().matrix() * inv_2var_d;
    b.array() -= std::log(p.sigma_delta);
    parts.spatial_unit = (b.colwise() - log_z).array().exp().matrix();

    // beta enters in log space so a zero beta contributes exactly zero even when Z underflows
    b.rowwise() += p.beta.array().log().matrix();
    parts.scores = parts.key_term + (b.colwise() - log_z).array().exp().matrix();
    return parts;
}

}  // namespace detail

/// Gaussian-mixture evidence Z_i for a single unit-norm query row against all keys.
template <typename Scalar>
Scalar gmm_denominator(const RowVector<Scalar>& q, const Matrix<Scalar>& k, const ProbAttentionParams<Scalar>& p) {
    detail::check_params(p, k.rows());
    const Matrix<Scalar> sim = q * k.transpose();
    return std::exp(detail::row_logsumexp(detail::log_evidence_terms(sim, p))(0));
}

/// P(k_j | q_i) for every key j.
template <typename Scalar>
RowVector<Scalar> key_posterior_term(const RowVector<Scalar>& q, const Matrix<Scalar>& k,
                                     const ProbAttentionParams<Scalar>& p) {
    const Matrix<Scalar> sim = q * k.transpose();
    const Matrix<Scalar> zeros = Matrix<Scalar>::Zero(1, k.rows());
    return detail::score_parts(sim, zeros, p).key_term.row(0);
}

/// P(Delta_j | q_i) for every key j, given normalized distances from event i.
template <typename Scalar>
RowVector<Scalar> spatial_posterior_term(const RowVector<Scalar>& q, const RowVector<Scalar>& deltas,
                                         const Matrix<Scalar>& k, const ProbAttentionParams<Scalar>& p) {
    const Matrix<Scalar> sim = q * k.transpose();
    const Matrix<Scalar> d = deltas;
    auto parts = detail::score_parts(sim, d, p);
    return (parts.spatial_unit.row(0).array() * p.beta.array()).matrix();
}

/// Full N x N score matrix from normalized Q, K and the pairwise distance matrix.
/// Rows are not renormalized.
template <typename Scalar>
Matrix<Scalar> prob_attention_scores(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& deltas,
                                     const ProbAttentionParams<Scalar>& p) {
    if (q.cols() != k.cols()) throw ShapeError("prob_attention_scores: head dims differ");
    return detail::score_parts<Scalar>(q * k.transpose(), deltas, p).scores;
}

/// Same as prob_attention_scores, starting from a precomputed similarity matrix q_i.k_j.
template <typename Scalar>
Matrix<Scalar> prob_attention_scores_from_similarity(const Matrix<Scalar>& sim, const Matrix<Scalar>& deltas,
                                                     const ProbAttentionParams<Scalar>& p) {
    return detail::score_parts<Scalar>(sim, deltas, p).scores;
}

template <typename Scalar>
Matrix<Scalar> attention_output(const Matrix<Scalar>& scores, const Matrix<Scalar>& v) {
    if (scores.cols() != v.rows()) throw ShapeError("attention_output: scores and values disagree on N");
    return scores * v;
}

/// Per-head weights for the multi-head forward.
template <typename Scalar>
struct HeadWeights {
    ProjectionWeights<Scalar> proj;
    ProbAttentionParams<Scalar> prior;
};

/// Concatenated head outputs followed by an output projection (d_e x d_e, with bias).
template <typename Scalar>
Matrix<Scalar> multi_head(const Matrix<Scalar>& tokens, const std::vector<HeadWeights<Scalar>>& heads,
                          const Matrix<Scalar>& out_weight, const RowVector<Scalar>& out_bias,
                          const Matrix<Scalar>& deltas) {
    const auto n_heads = static_cast<Eigen::Index>(heads.size());
    if (n_heads < 1 || tokens.cols() % n_heads != 0)
        throw ConfigError("embedding dim " + std::to_string(tokens.cols()) + " is not divisible by " +
                          std::to_string(n_heads) + " heads");
    const Eigen::Index head_dim = tokens.cols() / n_heads;
    Matrix<Scalar> concat(tokens.rows(), tokens.cols());
    for (Eigen::Index h = 0; h < n_heads; ++h) {
        const auto& hw = heads[static_cast<std::size_t>(h)];
        if (hw.proj.wq.rows() != head_dim) throw ShapeError("multi_head: head projection has wrong output dim");
        const auto qkv = project_qkv(tokens, hw.proj);
        concat.middleCols(h * head_dim, head_dim) =
            attention_output<Scalar>(prob_attention_scores<Scalar>(qkv.q, qkv.k, deltas, hw.prior), qkv.v);
    }
    Matrix<Scalar> out = concat * out_weight.transpose();
    out.rowwise() += out_bias;
    return out;
}

/// Tape handles for one head's unconstrained attention parameters.
template <typename Scalar>
struct ProbAttentionVars {
    Var<Scalar> pi_logits, gamma_logits, beta_raw, sigma_k_raw, sigma_q_raw, sigma_delta_raw;
};

/// Differentiable probabilistic attention scores for normalized Q and K (both N x d).
template <typename Scalar>
Var<Scalar> prob_attention_scores(const Var<Scalar>& q, const Var<Scalar>& k, const Matrix<Scalar>& deltas,
                                  const ProbAttentionVars<Scalar>& pv) {
    detail::require_same_tape("prob_attention", q, k);
    if (q.cols() != k.cols()) detail::shape_error("prob_attention", q.value(), k.value());

    ProbAttentionRaw<Scalar> raw;
    raw.pi_logits = pv.pi_logits.value();
    raw.gamma_logits = pv.gamma_logits.value();
    raw.beta_raw = pv.beta_raw.value();
    raw.sigma_k_raw = pv.sigma_k_raw.value()(0, 0);
    raw.sigma_q_raw = pv.sigma_q_raw.value()(0, 0);
    raw.sigma_delta_raw = pv.sigma_delta_raw.value()(0, 0);
    auto params = ProbAttentionParams<Scalar>::from_raw(raw);

    const Matrix<Scalar> sim = q.value() * k.value().transpose();
    auto parts = detail::score_parts<Scalar>(sim, deltas, params);
    Matrix<Scalar> scores = parts.scores;

    const std::vector<std::size_t> ids{q.id(),           k.id(),           pv.pi_logits.id(),
                                       pv.gamma_logits.id(), pv.beta_raw.id(), pv.sigma_k_raw.id(),
                                       pv.sigma_q_raw.id(), pv.sigma_delta_raw.id()};
    return q.tape()->record(
        "prob_attention", std::move(scores), ids,
        [ids, raw = std::move(raw), params = std::move(params), parts = std::move(parts), sim, deltas](
            Tape<Scalar>& t, std::size_t self) {
            const auto& g = t.grad(self);
            const auto& beta = params.beta;

            // d/da_ij and d/db_ij of the log-space exponents; d/dlogZ_i collects both.
            const Matrix<Scalar> g_key = g.cwiseProduct(parts.key_term);
            const Matrix<Scalar> g_spatial_unit = g.cwiseProduct(parts.spatial_unit);
            const Matrix<Scalar> g_spatial = (g_spatial_unit.array().rowwise() * beta.array()).matrix();
            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g_logz =
                -(g_key.rowwise().sum() + g_spatial.rowwise().sum());
            const Matrix<Scalar> g_evidence = (parts.evidence.array().colwise() * g_logz.array()).matrix();

            const Scalar var_k = params.sigma_k * params.sigma_k;
            const Scalar var_q = params.sigma_q * params.sigma_q;
            const Scalar var_d = params.sigma_delta * params.sigma_delta;

            const Matrix<Scalar> g_sim = g_key / var_k + g_evidence / var_q;
            if (t.requires_grad(ids[0])) t.grad(ids[0]).noalias() += g_sim * t.value(ids[1]);
            if (t.requires_grad(ids[1])) t.grad(ids[1]).noalias() += g_sim.transpose() * t.value(ids[0]);

            auto softmax_backward = [](const RowVector<Scalar>& log_p, const RowVector<Scalar>& g_log) {
                const RowVector<Scalar> prob = log_p.array().exp().matrix();
                return RowVector<Scalar>(g_log - prob * g_log.sum());
            };
            if (t.requires_grad(ids[2]))
                t.grad(ids[2]).row(0) += softmax_backward(params.log_pi, g_key.colwise().sum());
            if (t.requires_grad(ids[3]))
                t.grad(ids[3]).row(0) += softmax_backward(params.log_gamma, g_evidence.colwise().sum());
            if (t.requires_grad(ids[4])) {
                const RowVector<Scalar> d_beta = g_spatial_unit.colwise().sum();
                t.grad(ids[4]).row(0).array() +=
                    d_beta.array() * raw.beta_raw.unaryExpr([](Scalar v) { return sigmoid(v); }).array();
            }
            const Matrix<Scalar> one_minus_sim = (Scalar(1) - sim.array()).matrix();
            if (t.requires_grad(ids[5])) {
                const Scalar s = params.sigma_k;
                const Scalar d_sigma =
                    (g_key.array() * (-Scalar(1) / s + Scalar(2) * one_minus_sim.array() / (s * var_k))).sum();
                t.grad(ids[5])(0, 0) += d_sigma * sigmoid(raw.sigma_k_raw);
            }
            if (t.requires_grad(ids[6])) {
                const Scalar s = params.sigma_q;
                const Scalar d_sigma =
                    (g_evidence.array() * (-Scalar(1) / s + Scalar(2) * one_minus_sim.array() / (s * var_q))).sum();
                t.grad(ids[6])(0, 0) += d_sigma * sigmoid(raw.sigma_q_raw);
            }
            if (t.requires_grad(ids[7])) {
                const Scalar s = params.sigma_delta;
                const Scalar d_sigma =
                    (g_spatial.array() * (-Scalar(1) / s + (Scalar(1) - deltas.array()).square() / (s * var_d))).sum();
                t.grad(ids[7])(0, 0) += d_sigma * sigmoid(raw.sigma_delta_raw);
            }
        });
}

}  // namespace evsseg
