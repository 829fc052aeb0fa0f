// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense row-major Eigen matrices. Every value
// on the tape is a 2-D matrix; vectors are 1 x n rows and scalars are 1 x 1.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <deque>
#include <vector>

#include <Eigen/Dense>

#include "evsseg/errors.hpp"
#include "evsseg/event.hpp"

namespace evsseg {

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using TensorMap = std::map<std::string, Matrix<Scalar>>;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kL2NormFloor = 1e-12;

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
class Var {
public:
    Var() = default;
    Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Matrix<Scalar>& value() const { return tape_->value(id_); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Tape<Scalar>* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    Tape<Scalar>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename Scalar>
using VarMap = std::map<std::string, Var<Scalar>>;

template <typename Scalar>
class Tape {
public:
    using Mat = Matrix<Scalar>;
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Input that never receives a gradient.
    Var<Scalar> constant(Mat value) {
        nodes_.push_back(Node{std::move(value), nullptr, {}, false, false, {}, "constant"});
        return {this, nodes_.size() - 1};
    }

    /// Non-differentiable leaf that reads `value` in place. `value` must outlive the tape.
    Var<Scalar> constant_view(const Mat& value) {
        nodes_.push_back(Node{{}, &value, {}, false, false, {}, "constant"});
        return {this, nodes_.size() - 1};
    }

    /// Differentiable leaf that reads `value` in place. `value` must outlive the tape.
    Var<Scalar> parameter(const Mat& value) {
        nodes_.push_back(Node{{}, &value, {}, true, false, {}, "parameter"});
        return {this, nodes_.size() - 1};
    }

    /// Appends an operation result. `inputs` decide whether the node needs a gradient.
    Var<Scalar> record(std::string_view op, Mat value, std::initializer_list<std::size_t> inputs, BackwardFn fn) {
        return record_impl(op, std::move(value), std::vector<std::size_t>(inputs), std::move(fn));
    }
    Var<Scalar> record(std::string_view op, Mat value, const std::vector<std::size_t>& inputs, BackwardFn fn) {
        return record_impl(op, std::move(value), inputs, std::move(fn));
    }

    const Mat& value(std::size_t id) const {
        const Node& n = nodes_[id];
        return n.external ? *n.external : n.owned;
    }

    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient slot of a node, allocated as zeros on first access.
    Mat& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.grad_ready) {
            const Mat& v = value(id);
            n.grad = Mat::Zero(v.rows(), v.cols());
            n.grad_ready = true;
        }
        return n.grad;
    }

    /// Gradient after backward(); zeros when nothing flowed into the node.
    Mat grad_of(const Var<Scalar>& v) {
        return grad(v.id());
    }

    bool has_grad(std::size_t id) const { return nodes_[id].grad_ready; }

    /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse order.
    void backward(const Var<Scalar>& loss) {
        if (loss.tape() != this)
            throw ShapeError("backward: loss belongs to a different tape");
        const Mat& v = value(loss.id());
        if (v.rows() != 1 || v.cols() != 1)
            throw ShapeError("backward: loss must be 1x1, got " + dims(v));
        if (!std::isfinite(static_cast<double>(v(0, 0))))
            throw NumericError("backward: loss is not finite");
        grad(loss.id())(0, 0) = Scalar(1);
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.backward && n.grad_ready) n.backward(*this, id);
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

    /// When enabled (the default), every recorded value is checked for NaN/Inf.
    void set_check_finite(bool on) noexcept { check_finite_ = on; }

    static std::string dims(const Mat& m) {
        return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
    }

private:
    struct Node {
        Mat owned;
        const Mat* external;
        Mat grad;
        bool requires_grad;
        bool grad_ready;
        BackwardFn backward;
        std::string_view op;
    };

    Var<Scalar> record_impl(std::string_view op, Mat value, const std::vector<std::size_t>& inputs, BackwardFn fn) {
        if (check_finite_ && !value.allFinite())
            throw NumericError(std::string(op) + ": produced a non-finite value");
        bool needs = false;
        for (auto id : inputs) needs = needs || nodes_[id].requires_grad;
        nodes_.push_back(Node{std::move(value), nullptr, {}, needs, false, needs ? std::move(fn) : BackwardFn{}, op});
        return {this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_;  // deque keeps value() references valid as nodes are appended
    bool check_finite_ = true;
};

namespace detail {

template <typename Scalar>
void require_same_tape(std::string_view op, const Var<Scalar>& a, const Var<Scalar>& b) {
    if (a.tape() != b.tape() || a.tape() == nullptr)
        throw ShapeError(std::string(op) + ": operands live on different tapes");
}

template <typename Scalar>
[[noreturn]] void shape_error(std::string_view op, const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + Tape<Scalar>::dims(a) + " and " +
                     Tape<Scalar>::dims(b));
}

}  // namespace detail

/// a (n x k) * b (k x m).
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_tape("matmul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.rows()) detail::shape_error("matmul", av, bv);
    Matrix<Scalar> out = av * bv;
    const auto ia = a.id(), ib = b.id();
    return a.tape()->record("matmul", std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
        if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
    });
}

/// x (n x in) * W^T with W (out x in), plus an optional 1 x out bias row.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>* bias = nullptr) {
    detail::require_same_tape("linear", x, weight);
    const auto& xv = x.value();
    const auto& wv = weight.value();
    if (xv.cols() != wv.cols()) detail::shape_error("linear", xv, wv);
    Matrix<Scalar> out = xv * wv.transpose();
    std::vector<std::size_t> inputs{x.id(), weight.id()};
    std::size_t ib = 0;
    const bool has_bias = bias != nullptr;
    if (has_bias) {
        detail::require_same_tape("linear", x, *bias);
        const auto& bv = bias->value();
        if (bv.rows() != 1 || bv.cols() != wv.rows()) detail::shape_error("linear(bias)", wv, bv);
        out.rowwise() += bv.row(0);
        ib = bias->id();
        inputs.push_back(ib);
    }
    const auto ix = x.id(), iw = weight.id();
    return x.tape()->record("linear", std::move(out), inputs,
                            [ix, iw, ib, has_bias](Tape<Scalar>& t, std::size_t self) {
                                const auto& g = t.grad(self);
                                if (t.requires_grad(ix)) t.grad(ix).noalias() += g * t.value(iw);
                                if (t.requires_grad(iw)) t.grad(iw).noalias() += g.transpose() * t.value(ix);
                                if (has_bias && t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
                            });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
    return linear(x, weight, &bias);
}

/// Element-wise sum of equal shapes, or a matrix plus a 1 x m row broadcast over rows.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_tape("add", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    const auto ia = a.id(), ib = b.id();
    if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
        Matrix<Scalar> out = av + bv;
        return a.tape()->record("add", std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
            const auto& g = t.grad(self);
            if (t.requires_grad(ia)) t.grad(ia) += g;
            if (t.requires_grad(ib)) t.grad(ib) += g;
        });
    }
    if (bv.rows() == 1 && bv.cols() == av.cols()) {
        Matrix<Scalar> out = av;
        out.rowwise() += bv.row(0);
        return a.tape()->record("add_row", std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
            const auto& g = t.grad(self);
            if (t.requires_grad(ia)) t.grad(ia) += g;
            if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
        });
    }
    detail::shape_error("add", av, bv);
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_tape("mul", a, b);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) detail::shape_error("mul", av, bv);
    Matrix<Scalar> out = av.cwiseProduct(bv);
    const auto ia = a.id(), ib = b.id();
    return a.tape()->record("mul", std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
        if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
    });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
    Matrix<Scalar> out = a.value() * factor;
    const auto ia = a.id();
    return a.tape()->record("scale", std::move(out), {ia}, [ia, factor](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += t.grad(self) * factor;
    });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
    Matrix<Scalar> out = a.value().array().exp().matrix();
    const auto ia = a.id();
    return a.tape()->record("exp", std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += t.grad(self).cwiseProduct(t.value(self));
    });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
    if ((a.value().array() <= Scalar(0)).any()) throw NumericError("log: non-positive input");
    Matrix<Scalar> out = a.value().array().log().matrix();
    const auto ia = a.id();
    return a.tape()->record("log", std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia).array() += t.grad(self).array() / t.value(ia).array();
    });
}

/// Sum of all elements, as a 1 x 1 value.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
    Matrix<Scalar> out(1, 1);
    out(0, 0) = a.value().sum();
    const auto ia = a.id();
    return a.tape()->record("sum", std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia).array() += t.grad(self)(0, 0);
    });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
    const auto n = static_cast<Scalar>(a.value().size());
    Matrix<Scalar> out(1, 1);
    out(0, 0) = a.value().sum() / n;
    const auto ia = a.id();
    return a.tape()->record("mean", std::move(out), {ia}, [ia, n](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia).array() += t.grad(self)(0, 0) / n;
    });
}

/// Column means: n x m -> 1 x m. Used to pool tokens.
template <typename Scalar>
Var<Scalar> mean_rows(const Var<Scalar>& a) {
    const auto n = static_cast<Scalar>(a.rows());
    Matrix<Scalar> out = a.value().colwise().sum() / n;
    const auto ia = a.id();
    return a.tape()->record("mean_rows", std::move(out), {ia}, [ia, n](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia).rowwise() += t.grad(self).row(0) / n;
    });
}

template <typename Scalar>
Matrix<Scalar> softmax_rows_value(const Matrix<Scalar>& x) {
    Matrix<Scalar> out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Scalar m = x.row(i).maxCoeff();
        out.row(i) = (x.row(i).array() - m).exp().matrix();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
    Matrix<Scalar> out = softmax_rows_value(a.value());
    const auto ia = a.id();
    return a.tape()->record("softmax_rows", std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
        const auto& y = t.value(self);
        const auto& g = t.grad(self);
        const auto dot = g.cwiseProduct(y).rowwise().sum().eval();
        Matrix<Scalar> gx = g;
        gx.colwise() -= dot;
        t.grad(ia) += gx.cwiseProduct(y);
    });
}

/// Normalizes each row to zero mean and unit variance, then applies scale and shift (both 1 x m).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& shift) {
    detail::require_same_tape("layer_norm", x, gain);
    detail::require_same_tape("layer_norm", x, shift);
    const auto& xv = x.value();
    const auto m = xv.cols();
    if (gain.rows() != 1 || gain.cols() != m) detail::shape_error("layer_norm(scale)", xv, gain.value());
    if (shift.rows() != 1 || shift.cols() != m) detail::shape_error("layer_norm(shift)", xv, shift.value());

    const auto eps = static_cast<Scalar>(kLayerNormEps);
    Matrix<Scalar> xhat(xv.rows(), m);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(xv.rows());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        const Scalar mu = xv.row(i).mean();
        const Scalar var = (xv.row(i).array() - mu).square().mean();
        inv_std(i) = Scalar(1) / std::sqrt(var + eps);
        xhat.row(i) = (xv.row(i).array() - mu).matrix() * inv_std(i);
    }
    Matrix<Scalar> out = xhat.array().rowwise() * gain.value().row(0).array();
    out.rowwise() += shift.value().row(0);

    const auto ix = x.id(), ig = gain.id(), is = shift.id();
    return x.tape()->record(
        "layer_norm", std::move(out), {ix, ig, is},
        [ix, ig, is, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<Scalar>& t, std::size_t self) {
            const auto& g = t.grad(self);
            if (t.requires_grad(ig)) t.grad(ig) += g.cwiseProduct(xhat).colwise().sum();
            if (t.requires_grad(is)) t.grad(is) += g.colwise().sum();
            if (!t.requires_grad(ix)) return;
            Matrix<Scalar> gxhat = g.array().rowwise() * t.value(ig).row(0).array();
            const auto n = static_cast<Scalar>(gxhat.cols());
            auto& gx = t.grad(ix);
            for (Eigen::Index i = 0; i < gxhat.rows(); ++i) {
                const Scalar mean_g = gxhat.row(i).sum() / n;
                const Scalar mean_gx = gxhat.row(i).dot(xhat.row(i)) / n;
                gx.row(i).array() +=
                    inv_std(i) * (gxhat.row(i).array() - mean_g - xhat.row(i).array() * mean_gx);
            }
        });
}

namespace detail {

template <typename Scalar>
constexpr Scalar kGeluC = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
template <typename Scalar>
constexpr Scalar kGeluA = static_cast<Scalar>(0.044715);

}  // namespace detail

template <typename Scalar>
Scalar gelu_value(Scalar x) {
    using detail::kGeluA, detail::kGeluC;
    return Scalar(0.5) * x * (Scalar(1) + std::tanh(kGeluC<Scalar> * (x + kGeluA<Scalar> * x * x * x)));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
    using detail::kGeluA, detail::kGeluC;
    const Scalar th = std::tanh(kGeluC<Scalar> * (x + kGeluA<Scalar> * x * x * x));
    return Scalar(0.5) * (Scalar(1) + th) +
           Scalar(0.5) * x * (Scalar(1) - th * th) * kGeluC<Scalar> * (Scalar(1) + Scalar(3) * kGeluA<Scalar> * x * x);
}

/// tanh-approximated GeLU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
    Matrix<Scalar> out = a.value().unaryExpr([](Scalar v) { return gelu_value(v); });
    const auto ia = a.id();
    return a.tape()->record("gelu", std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia) += t.grad(self).cwiseProduct(t.value(ia).unaryExpr([](Scalar v) { return gelu_derivative(v); }));
    });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
    Matrix<Scalar> out = a.value().cwiseMax(Scalar(0));
    const auto ia = a.id();
    return a.tape()->record("relu", std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
        t.grad(ia).array() += (t.value(ia).array() > Scalar(0)).select(t.grad(self).array(), Scalar(0));
    });
}

template <typename Scalar>
Matrix<Scalar> l2_normalize_rows_value(const Matrix<Scalar>& x) {
    Matrix<Scalar> out(x.rows(), x.cols());
    const auto floor = static_cast<Scalar>(kL2NormFloor);
    for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(i) / std::max(x.row(i).norm(), floor);
    return out;
}

/// Divides each row by max(||row||, 1e-12).
template <typename Scalar>
Var<Scalar> l2_normalize_rows(const Var<Scalar>& a) {
    Matrix<Scalar> out = l2_normalize_rows_value(a.value());
    const auto ia = a.id();
    return a.tape()->record("l2_normalize_rows", std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
        const auto& x = t.value(ia);
        const auto& y = t.value(self);
        const auto& g = t.grad(self);
        auto& gx = t.grad(ia);
        const auto floor = static_cast<Scalar>(kL2NormFloor);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const Scalar norm = x.row(i).norm();
            if (norm > floor)
                gx.row(i) += (g.row(i) - y.row(i) * y.row(i).dot(g.row(i))) / norm;
            else
                gx.row(i) += g.row(i) / floor;
        }
    });
}

enum class Axis { Rows, Cols };

/// Stacks parts vertically (Axis::Rows) or side by side (Axis::Cols).
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Axis axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Eigen::Index rows = 0, cols = 0;
    std::vector<std::size_t> ids;
    std::vector<Eigen::Index> offsets;
    for (const auto& p : parts) {
        detail::require_same_tape("concat", parts.front(), p);
        const auto& v = p.value();
        const auto& f = parts.front().value();
        if (axis == Axis::Rows) {
            if (v.cols() != f.cols()) detail::shape_error("concat", f, v);
            offsets.push_back(rows);
            rows += v.rows();
            cols = v.cols();
        } else {
            if (v.rows() != f.rows()) detail::shape_error("concat", f, v);
            offsets.push_back(cols);
            cols += v.cols();
            rows = v.rows();
        }
        ids.push_back(p.id());
    }
    Matrix<Scalar> out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].value();
        if (axis == Axis::Rows)
            out.middleRows(offsets[k], v.rows()) = v;
        else
            out.middleCols(offsets[k], v.cols()) = v;
    }
    return parts.front().tape()->record(
        "concat", std::move(out), ids, [ids, offsets, axis](Tape<Scalar>& t, std::size_t self) {
            const auto& g = t.grad(self);
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (!t.requires_grad(ids[k])) continue;
                auto& gk = t.grad(ids[k]);
                if (axis == Axis::Rows)
                    gk += g.middleRows(offsets[k], gk.rows());
                else
                    gk += g.middleCols(offsets[k], gk.cols());
            }
        });
}

/// Contiguous block of `count` rows or columns starting at `begin`.
template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, Axis axis, Eigen::Index begin, Eigen::Index count) {
    const auto& v = a.value();
    const Eigen::Index extent = axis == Axis::Rows ? v.rows() : v.cols();
    if (begin < 0 || count < 1 || begin + count > extent)
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + Tape<Scalar>::dims(v));
    Matrix<Scalar> out = axis == Axis::Rows ? Matrix<Scalar>(v.middleRows(begin, count))
                                            : Matrix<Scalar>(v.middleCols(begin, count));
    const auto ia = a.id();
    return a.tape()->record("slice", std::move(out), {ia}, [ia, axis, begin, count](Tape<Scalar>& t, std::size_t self) {
        if (axis == Axis::Rows)
            t.grad(ia).middleRows(begin, count) += t.grad(self);
        else
            t.grad(ia).middleCols(begin, count) += t.grad(self);
    });
}

/// Numerically stable -log softmax(row)[label].
template <typename Scalar>
Scalar cross_entropy_value(const Eigen::Ref<const RowVector<Scalar>>& logits, int label) {
    if (label < 0 || label >= logits.size())
        throw ShapeError("cross_entropy: label " + std::to_string(label) + " out of range");
    const Scalar m = logits.maxCoeff();
    const Scalar lse = m + std::log((logits.array() - m).exp().sum());
    return lse - logits(label);
}

/// Mean cross-entropy over rows of a B x C logit matrix, as a 1 x 1 value.
template <typename Scalar>
Var<Scalar> cross_entropy_rows(const Var<Scalar>& logits, const std::vector<int>& labels) {
    const auto& lv = logits.value();
    if (static_cast<std::size_t>(lv.rows()) != labels.size())
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + Tape<Scalar>::dims(lv) +
                         " logits");
    for (int y : labels)
        if (y < 0 || y >= lv.cols()) throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range");
    Matrix<Scalar> out(1, 1);
    out(0, 0) = Scalar(0);
    for (Eigen::Index i = 0; i < lv.rows(); ++i) out(0, 0) += cross_entropy_value<Scalar>(lv.row(i), labels[i]);
    const auto batch = static_cast<Scalar>(lv.rows());
    out(0, 0) /= batch;
    const auto il = logits.id();
    return logits.tape()->record("cross_entropy", std::move(out), {il},
                                 [il, labels, batch](Tape<Scalar>& t, std::size_t self) {
                                     const Scalar g = t.grad(self)(0, 0);
                                     Matrix<Scalar> d = softmax_rows_value(t.value(il));
                                     for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, labels[i]) -= Scalar(1);
                                     t.grad(il) += d * (g / batch);
                                 });
}

}  // namespace evsseg
