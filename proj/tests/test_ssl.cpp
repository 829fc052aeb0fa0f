#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "evsseg/ssl.hpp"
#include "evsseg/stream_io.hpp"
#include "oracles.hpp"

using namespace evsseg;

namespace {

EventWindow window_with_positives(std::size_t positives, std::size_t n = 50) {
    std::vector<Event> ev;
    for (std::size_t i = 0; i < n; ++i)
        ev.push_back({static_cast<std::uint32_t>(i), 0, i, static_cast<std::int8_t>(i < positives ? 1 : -1)});
    return EventWindow(ev, SensorGeometry{});
}

}  // namespace

TEST_CASE("positive rate") {
    CHECK(positive_rate(window_with_positives(25)) == 0.5);
    CHECK(positive_rate(window_with_positives(0)) == 0.0);
    CHECK(positive_rate(window_with_positives(10)) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(positive_rate(window_with_positives(50)) == 1.0);
}

TEST_CASE("polarity entropy") {
    CHECK(std::abs(polarity_entropy(0.5) - std::log(2.0)) < 1e-12);
    CHECK(polarity_entropy(0.0) == 0.0);
    CHECK(polarity_entropy(1.0) == 0.0);
    CHECK(polarity_entropy(0.25) == doctest::Approx(0.562335).epsilon(1e-6));
    CHECK_THROWS_AS(polarity_entropy(-0.01), PreconditionError);
    CHECK_THROWS_AS(polarity_entropy(1.01), PreconditionError);
    CHECK_THROWS_AS(polarity_entropy(std::nan("")), PreconditionError);

    for (int i = 0; i <= 1000; ++i) {
        const double p = i / 1000.0;
        const double h = polarity_entropy(p);
        CHECK(h == doctest::Approx(oracle::binary_entropy(p)).epsilon(1e-14));
        CHECK(std::abs(h - polarity_entropy(1 - p)) < 1e-15);
        CHECK(h >= 0);
        CHECK(h <= kLn2 + 1e-15);
    }
    for (int i = 1; i < 1000; ++i) {
        const double p = i / 1000.0, s = 1e-3;
        CHECK(polarity_entropy(p - s) - 2 * polarity_entropy(p) + polarity_entropy(p + s) <= 0);
    }
}

TEST_CASE("strict threshold") {
    CHECK(ssl_label(0.6, 0.5) == 1);
    CHECK(ssl_label(0.5, 0.5) == 0);
    CHECK(ssl_label(0.0, 0.1) == 0);
    CHECK(ssl_label(std::nextafter(0.5, 1.0), 0.5) == 1);
}

TEST_CASE("median calibration") {
    const std::vector<double> three{0.69, 0.1, 0.5};
    const double a = calibrate_threshold(std::span<const double>(three));
    CHECK(a == 0.5);
    CHECK(ssl_labels(three, a) == std::vector<int>{1, 0, 0});

    const std::vector<double> two{0.6, 0.2};
    CHECK(calibrate_threshold(std::span<const double>(two)) == 0.2);
    CHECK(ssl_labels(two, 0.2) == std::vector<int>{1, 0});

    const std::vector<double> same{0.3, 0.3, 0.3};
    CHECK_THROWS_AS(calibrate_threshold(std::span<const double>(same)), ConfigError);
    const std::vector<double> one{0.3};
    CHECK_THROWS_AS(calibrate_threshold(std::span<const double>(one)), ConfigError);
}

TEST_CASE("fixed threshold range") {
    CHECK_NOTHROW(check_fixed_threshold(0.5));
    CHECK_THROWS_AS(check_fixed_threshold(0.999), ConfigError);
    CHECK_THROWS_AS(check_fixed_threshold(0.0), ConfigError);
    CHECK_THROWS_AS(check_fixed_threshold(kLn2), ConfigError);
}

TEST_CASE("raising the threshold never adds label-1 windows") {
    std::vector<double> h;
    for (int i = 0; i < 200; ++i) h.push_back(polarity_entropy((i * 37 % 101) / 100.0));
    std::size_t prev = h.size() + 1;
    for (double a = 0.0; a < kLn2; a += 0.01) {
        const auto labels = ssl_labels(h, a);
        const auto ones = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
        CHECK(ones <= prev);
        prev = ones;
    }
}

TEST_CASE("median calibration balances synthetic windows") {
    for (std::uint64_t seed : {1, 2, 3}) {
        SynthOptions o;
        o.n_events = 1000 * 50;
        o.seed = seed;
        const auto s = synth_moving_edge(o);
        const auto windows = window_stream(s.events, o.geometry, 50).windows;
        REQUIRE(windows.size() == 1000);
        const auto h = window_entropies(windows);
        const double a = calibrate_threshold(std::span<const EventWindow>(windows));
        const auto labels = ssl_labels(h, a);
        const double frac = static_cast<double>(std::count(labels.begin(), labels.end(), 1)) / 1000.0;
        INFO("seed " << seed);
        CHECK(std::abs(frac - 0.5) <= 0.05);
    }
}

TEST_CASE("windows straddling the edge carry more polarity entropy") {
    SynthOptions o;
    o.n_events = 400 * 50;
    o.seed = 11;
    const auto s = synth_moving_edge(o);
    const auto windows = window_stream(s.events, o.geometry, 50).windows;
    double mixed = 0, pure = 0;
    int n_mixed = 0, n_pure = 0;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        std::size_t road = 0;
        for (std::size_t i = 0; i < 50; ++i) road += s.labels[w * 50 + i];
        const double h = polarity_entropy(positive_rate(windows[w]));
        if (road == 0 || road == 50)
            pure += h, ++n_pure;
        else
            mixed += h, ++n_mixed;
    }
    REQUIRE(n_mixed > 0);
    REQUIRE(n_pure > 0);
    CHECK(mixed / n_mixed > pure / n_pure);
}
