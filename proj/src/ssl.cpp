// SPDX-License-Identifier: Apache-2.0
#include "evsseg/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace evsseg {

double positive_rate(const EventWindow& w) {
    if (w.size() == 0) throw PreconditionError("positive_rate: empty window");
    std::size_t positives = 0;
    for (const auto& e : w.events()) positives += e.p == 1 ? 1 : 0;
    return static_cast<double>(positives) / static_cast<double>(w.size());
}

double polarity_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("polarity_entropy: p+ = " + std::to_string(p) + " outside [0, 1]");
    auto term = [](double q) { return q > 0.0 ? -q * std::log(q) : 0.0; };
    return term(p) + term(1.0 - p);
}

std::vector<double> window_entropies(std::span<const EventWindow> windows) {
    std::vector<double> out;
    out.reserve(windows.size());
    for (const auto& w : windows) out.push_back(polarity_entropy(positive_rate(w)));
    return out;
}

double calibrate_threshold(std::span<const double> entropies) {
    if (entropies.size() < 2) throw ConfigError("threshold calibration needs at least two windows");
    std::vector<double> sorted(entropies.begin(), entropies.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back())
        throw ConfigError("all windows have entropy " + std::to_string(sorted.front()) +
                          "; median calibration is degenerate, use a fixed threshold");
    return sorted[(sorted.size() - 1) / 2];
}

double calibrate_threshold(std::span<const EventWindow> windows) {
    const auto h = window_entropies(windows);
    return calibrate_threshold(std::span<const double>(h));
}

void check_fixed_threshold(double a) {
    if (!(a > 0.0 && a < kLn2))
        throw ConfigError("threshold " + std::to_string(a) + " must lie in (0, ln 2)");
}

std::vector<int> ssl_labels(std::span<const double> entropies, double a) {
    std::vector<int> out;
    out.reserve(entropies.size());
    for (double h : entropies) out.push_back(ssl_label(h, a));
    return out;
}

}  // namespace evsseg
