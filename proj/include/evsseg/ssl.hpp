// SPDX-License-Identifier: Apache-2.0
//
// Polarity-entropy pretext labels. A window is labelled 1 when the binary
// entropy of its positive-event fraction exceeds a threshold a in (0, ln 2).
#pragma once

#include <numbers>
#include <span>
#include <vector>

#include "evsseg/event.hpp"

namespace evsseg {

inline constexpr double kLn2 = std::numbers::ln2;

/// Fraction of events with polarity +1.
double positive_rate(const EventWindow& w);

/// Natural-log binary entropy with 0 log 0 = 0. Throws PreconditionError outside [0, 1].
double polarity_entropy(double p_plus);

/// 1 when h > a (strictly), else 0.
inline int ssl_label(double h, double a) { return h > a ? 1 : 0; }

std::vector<double> window_entropies(std::span<const EventWindow> windows);

/// Lower median of the window entropies. Throws ConfigError when all entropies are
/// equal (the labels would be constant) or fewer than two windows are given.
double calibrate_threshold(std::span<const double> entropies);
double calibrate_threshold(std::span<const EventWindow> windows);

/// Throws ConfigError unless 0 < a < ln 2.
void check_fixed_threshold(double a);

std::vector<int> ssl_labels(std::span<const double> entropies, double a);

}  // namespace evsseg
