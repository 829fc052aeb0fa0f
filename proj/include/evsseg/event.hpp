// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "evsseg/errors.hpp"

namespace evsseg {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Window length that the default model is built for.
inline constexpr std::size_t kDefaultWindowSize = 50;

struct SensorGeometry {
    std::uint32_t width = 346;
    std::uint32_t height = 260;

    /// Largest Manhattan distance between two pixels on this sensor.
    std::uint32_t max_delta() const noexcept { return width + height - 2; }
    bool contains(std::uint32_t x, std::uint32_t y) const noexcept { return x < width && y < height; }
    friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

/// One camera event. Polarity is stored as -1 or +1.
struct Event {
    std::uint32_t x = 0;
    std::uint32_t y = 0;
    std::uint64_t t = 0;  // microseconds
    std::int8_t p = 1;

    friend bool operator==(const Event&, const Event&) = default;
};

/// A fixed-length run of consecutive events together with the sensor it came from.
class EventWindow {
public:
    EventWindow() = default;

    /// Throws PreconditionError when the events are empty, out of bounds,
    /// carry an invalid polarity, or have decreasing timestamps.
    EventWindow(std::vector<Event> events, SensorGeometry geometry);

    std::size_t size() const noexcept { return events_.size(); }
    const std::vector<Event>& events() const noexcept { return events_; }
    const Event& operator[](std::size_t i) const { return events_[i]; }
    const SensorGeometry& geometry() const noexcept { return geometry_; }

private:
    std::vector<Event> events_;
    SensorGeometry geometry_;
};

std::uint32_t manhattan_delta(const Event& a, const Event& b) noexcept;

/// d / (W + H - 2), or 0 on a 1x1 sensor. Throws PreconditionError when d is out of range.
double normalized_delta(std::uint32_t d, const SensorGeometry& geom);

/// N x N matrix of normalized pairwise distances; zero on the diagonal.
template <typename Scalar>
Matrix<Scalar> delta_matrix(const EventWindow& w) {
    const auto n = static_cast<Eigen::Index>(w.size());
    Matrix<Scalar> out(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            out(i, j) = static_cast<Scalar>(normalized_delta(manhattan_delta(w[i], w[j]), w.geometry()));
    return out;
}

/// Rows are (x/W, y/H, time since first event / window duration, polarity).
template <typename Scalar>
Matrix<Scalar> event_features(const EventWindow& w) {
    const auto n = static_cast<Eigen::Index>(w.size());
    Matrix<Scalar> out(n, 4);
    const auto& g = w.geometry();
    const std::uint64_t t0 = w[0].t;
    const std::uint64_t duration = w[w.size() - 1].t - t0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Event& e = w[static_cast<std::size_t>(i)];
        out(i, 0) = static_cast<Scalar>(static_cast<double>(e.x) / g.width);
        out(i, 1) = static_cast<Scalar>(static_cast<double>(e.y) / g.height);
        out(i, 2) = duration == 0 ? Scalar(0)
                                  : static_cast<Scalar>(static_cast<double>(e.t - t0) / static_cast<double>(duration));
        out(i, 3) = static_cast<Scalar>(e.p);
    }
    return out;
}

struct SynthOptions {
    SensorGeometry geometry;
    std::size_t n_events = 5000;
    double edge_speed = 0.002;  // pixels per microsecond; sign sets the direction
    std::uint64_t seed = 0;
};

struct SynthStream {
    std::vector<Event> events;
    std::vector<std::uint8_t> labels;  // 1 = left of the edge
};

/// Events scattered on both sides of a vertical edge sweeping across the sensor.
///
/// The emitting side persists for long runs and the polarity follows the side
/// (leading side takes the sign of the motion) up to a slowly varying flip rate.
/// The left side plays the road: its flip rate stays low, the right side's is
/// higher, and windows that straddle the edge mix both signs.
SynthStream synth_moving_edge(const SynthOptions& opts);

}  // namespace evsseg
