// SPDX-License-Identifier: Apache-2.0
#include "evsseg/event.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace evsseg {

EventWindow::EventWindow(std::vector<Event> events, SensorGeometry geometry)
    : events_(std::move(events)), geometry_(geometry) {
    if (geometry_.width < 1 || geometry_.height < 1)
        throw PreconditionError("sensor geometry must be at least 1x1");
    if (events_.empty())
        throw PreconditionError("event window must not be empty");
    for (std::size_t i = 0; i < events_.size(); ++i) {
        const Event& e = events_[i];
        if (!geometry_.contains(e.x, e.y))
            throw PreconditionError("event " + std::to_string(i) + " lies outside the sensor");
        if (e.p != 1 && e.p != -1)
            throw PreconditionError("event " + std::to_string(i) + " has polarity other than -1/+1");
        if (i > 0 && e.t < events_[i - 1].t)
            throw PreconditionError("event " + std::to_string(i) + " has a decreasing timestamp");
    }
}

std::uint32_t manhattan_delta(const Event& a, const Event& b) noexcept {
    const auto dx = a.x > b.x ? a.x - b.x : b.x - a.x;
    const auto dy = a.y > b.y ? a.y - b.y : b.y - a.y;
    return dx + dy;
}

double normalized_delta(std::uint32_t d, const SensorGeometry& geom) {
    const std::uint32_t max_d = geom.max_delta();
    if (d > max_d)
        throw PreconditionError("distance " + std::to_string(d) + " exceeds sensor maximum " + std::to_string(max_d));
    return max_d == 0 ? 0.0 : static_cast<double>(d) / max_d;
}

namespace {

// Generator constants, chosen so that median entropy calibration gives balanced
// pretext labels and the majority side of a window is recoverable from its events.
// The road side is texture-poor: its polarity rarely flips. The flip-rate ranges
// overlap so entropy alone does not decide the side.
constexpr double kSideSwitchProb = 0.004;
constexpr double kFlipRedrawProb = 0.03;
constexpr double kRoadMaxFlip = 0.15;
constexpr double kOffRoadMinFlip = 0.1;
constexpr double kOffRoadMaxFlip = 0.5;
constexpr double kEdgeBand = 8.0;
constexpr int kMaxGapUs = 200;

}  // namespace

SynthStream synth_moving_edge(const SynthOptions& opts) {
    const auto& g = opts.geometry;
    if (g.width < 1 || g.height < 1)
        throw PreconditionError("sensor geometry must be at least 1x1");
    if (opts.n_events < 1)
        throw PreconditionError("synth_moving_edge needs at least one event");

    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> gap(0, kMaxGapUs - 1);

    const double width = g.width;
    const double height = g.height;
    const double x0 = unit(rng) * width;
    bool left = unit(rng) < 0.5;
    double flip_u = unit(rng);  // position within the current side's flip-rate range
    const std::int8_t leading = opts.edge_speed >= 0.0 ? 1 : -1;

    SynthStream out;
    out.events.reserve(opts.n_events);
    out.labels.reserve(opts.n_events);
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < opts.n_events; ++i) {
        if (i > 0 && unit(rng) < kSideSwitchProb) left = !left;
        if (unit(rng) < kFlipRedrawProb) flip_u = unit(rng);
        t += 1 + static_cast<std::uint64_t>(gap(rng));

        double edge = std::fmod(x0 + opts.edge_speed * static_cast<double>(t), width);
        if (edge < 0.0) edge += width;
        const double offset = 1.0 + unit(rng) * kEdgeBand;
        const double raw_x = left ? edge - offset : edge + offset;
        const auto x = static_cast<std::uint32_t>(std::clamp(std::round(raw_x), 0.0, width - 1.0));

        const auto y = std::min(static_cast<std::uint32_t>(unit(rng) * height), g.height - 1);

        // Trailing side darkens, leading side brightens.
        std::int8_t p = left == (leading > 0) ? static_cast<std::int8_t>(-1) : static_cast<std::int8_t>(1);
        const double flip_rate =
            left ? flip_u * kRoadMaxFlip : kOffRoadMinFlip + flip_u * (kOffRoadMaxFlip - kOffRoadMinFlip);
        if (unit(rng) < flip_rate) p = static_cast<std::int8_t>(-p);

        out.events.push_back(Event{x, y, t, p});
        out.labels.push_back(static_cast<double>(x) < edge ? 1 : 0);
    }
    return out;
}

}  // namespace evsseg
