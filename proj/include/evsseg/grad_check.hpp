// SPDX-License-Identifier: Apache-2.0
// Central-difference check of reverse-mode gradients over named tensors.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "evsseg/tensor.hpp"

namespace evsseg {

/// Loss at the given parameters; fills `grads` (one entry per tensor) when non-null.
template <typename Scalar>
using LossFn = std::function<Scalar(const TensorMap<Scalar>& params, TensorMap<Scalar>* grads)>;

struct GradCheckOptions {
    double eps = 1e-6;
    double tol = 1e-4;
    std::size_t max_elements_per_tensor = 0;  // 0 checks every element
    std::uint64_t seed = 0;                   // picks the sampled elements
    // Further step sizes tried per element; the closest agreement counts. No single step suits
    // both strongly curved entries (want small eps) and tiny gradients near the loss's last ulp
    // (want large eps).
    std::vector<double> extra_eps;
};

struct TensorCheck {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0;
    Eigen::Index worst_index = 0;
    double analytic = 0;
    double numeric = 0;
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;
    double max_rel_error = 0;
    std::string worst_tensor;
    bool passed = true;
};

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

template <typename Scalar>
GradCheckReport grad_check(const LossFn<Scalar>& f, TensorMap<Scalar> params, const GradCheckOptions& options = {}) {
    std::vector<double> steps{options.eps};
    steps.insert(steps.end(), options.extra_eps.begin(), options.extra_eps.end());
    for (double e : steps)
        if (!(e > 0)) throw ConfigError("grad_check: eps must be > 0");
    auto eval = [&](const TensorMap<Scalar>& p, TensorMap<Scalar>* g) {
        const Scalar loss = f(p, g);
        if (!std::isfinite(static_cast<double>(loss))) throw NumericError("grad_check: loss is not finite");
        return static_cast<double>(loss);
    };

    TensorMap<Scalar> grads;
    eval(params, &grads);

    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    for (auto& [name, tensor] : params) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw ConfigError("grad_check: no gradient for '" + name + "'");
        const auto& g = git->second;
        if (g.size() != tensor.size()) throw ShapeError("grad_check: gradient of '" + name + "' has the wrong size");

        std::vector<Eigen::Index> idx(static_cast<std::size_t>(tensor.size()));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        if (options.max_elements_per_tensor && idx.size() > options.max_elements_per_tensor) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(options.max_elements_per_tensor);
            std::sort(idx.begin(), idx.end());
        }

        TensorCheck tc;
        tc.name = name;
        for (Eigen::Index k : idx) {
            Scalar& x = tensor.data()[k];
            const Scalar saved = x;
            const double analytic = static_cast<double>(g.data()[k]);
            double err = 0, numeric = 0;
            for (std::size_t si = 0; si < steps.size(); ++si) {
                const double eps = steps[si];
                x = static_cast<Scalar>(static_cast<double>(saved) + eps);
                const double up = eval(params, nullptr);
                x = static_cast<Scalar>(static_cast<double>(saved) - eps);
                const double down = eval(params, nullptr);
                x = saved;
                const double nd = (up - down) / (2 * eps);
                const double e = relative_error(analytic, nd);
                if (si == 0 || e < err) {
                    err = e;
                    numeric = nd;
                }
            }
            ++tc.checked;
            if (err > tc.max_rel_error || tc.checked == 1) {
                tc.max_rel_error = std::max(tc.max_rel_error, err);
                tc.worst_index = k;
                tc.analytic = analytic;
                tc.numeric = numeric;
            }
        }
        if (tc.max_rel_error >= report.max_rel_error) {
            report.max_rel_error = tc.max_rel_error;
            report.worst_tensor = name;
        }
        report.tensors.push_back(std::move(tc));
    }
    report.passed = report.max_rel_error < options.tol;
    return report;
}

}  // namespace evsseg
