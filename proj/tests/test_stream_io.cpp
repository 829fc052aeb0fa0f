#include <doctest.h>

#include <cstring>
#include <sstream>

#include "evsseg/stream_io.hpp"
#include "test_util.hpp"

using namespace evsseg;
using testutil::TempDir;

namespace {
EventStream parse(const std::string& text) {
    std::istringstream in(text);
    return parse_event_text(in);
}

std::vector<Event> synth_events(std::size_t n, std::uint64_t seed = 1) {
    SynthOptions o;
    o.n_events = n;
    o.seed = seed;
    return synth_moving_edge(o).events;
}

template <typename F>
std::string error_message(F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}
}  // namespace

TEST_CASE("text event parsing") {
    const auto s = parse("346 260 signed\n1000 3 4 1\n1001 5 6 -1\n");
    CHECK(s.header.geometry == SensorGeometry{346, 260});
    CHECK(s.header.encoding == PolarityEncoding::Signed);
    REQUIRE(s.events.size() == 2);
    CHECK(s.events[0] == Event{3, 4, 1000, 1});
    CHECK(s.events[1] == Event{5, 6, 1001, -1});

    const auto z = parse("10 10 zero-one\n5 1 1 0\n6 1 1 1\n");
    CHECK(z.events[0].p == -1);
    CHECK(z.events[1].p == 1);
}

TEST_CASE("text parse errors") {
    CHECK_THROWS_AS(parse("346 260 signed\nabc\n"), ParseError);
    CHECK(error_message([] { parse("346 260 signed\nabc\n"); }).find("line 2") != std::string::npos);
    CHECK(error_message([] { parse("346 260 signed\n1 1 1 1\nabc\n"); }).find("line 3") != std::string::npos);
    CHECK_THROWS_AS(parse("346 260\n"), ParseError);
    CHECK_THROWS_AS(parse("346 260 gray\n"), ParseError);
    CHECK_THROWS_AS(parse(""), ParseError);
    CHECK_THROWS_AS(parse("0 260 signed\n"), FormatError);
    CHECK_THROWS_AS(parse("10 10 signed\n5 1 1 1\n4 1 1 1\n"), FormatError);
    CHECK_THROWS_AS(parse("10 10 signed\n5 10 1 1\n"), FormatError);
    CHECK_THROWS_AS(parse("10 10 signed\n5 1 10 1\n"), FormatError);
    CHECK_THROWS_AS(parse("10 10 signed\n5 1 1 0\n"), FormatError);
    CHECK_THROWS_AS(parse("10 10 zero-one\n5 1 1 -1\n"), FormatError);
    CHECK_THROWS_AS(parse("10 10 signed\n5 1 1 1 9\n"), ParseError);
    // equal timestamps are allowed
    CHECK(parse("10 10 signed\n5 1 1 1\n5 2 2 1\n").events.size() == 2);
}

TEST_CASE("serialize then parse is identity") {
    const auto events = synth_events(500);
    for (auto enc : {PolarityEncoding::Signed, PolarityEncoding::ZeroOne}) {
        const EventFileHeader h{SensorGeometry{}, enc};
        std::stringstream text;
        write_event_text(text, h, events);
        const auto back = parse_event_text(text);
        CHECK(back.events == events);
        CHECK(back.header.encoding == enc);

        std::stringstream bin;
        write_event_binary(bin, h, events);
        const auto bback = parse_event_binary(bin);
        CHECK(bback.events == events);
        CHECK(bback.header.geometry == h.geometry);
    }
}

TEST_CASE("file parsing detects the binary variant") {
    TempDir dir;
    const auto events = synth_events(100);
    const EventFileHeader h{SensorGeometry{}, PolarityEncoding::Signed};
    {
        std::ofstream out(dir / "e.evb", std::ios::binary);
        write_event_binary(out, h, events);
    }
    write_event_file(dir / "e.txt", h, events);
    CHECK(parse_event_file(dir / "e.evb").events == events);
    CHECK(parse_event_file(dir / "e.txt").events == events);
    CHECK_THROWS_AS(parse_event_file(dir / "missing.txt"), FormatError);

    auto bytes = testutil::read_file(dir / "e.evb");
    bytes.resize(bytes.size() - 3);
    testutil::write_file(dir / "cut.evb", bytes);
    CHECK_THROWS_AS(parse_event_file(dir / "cut.evb"), CorruptionError);
}

TEST_CASE("windowing") {
    const SensorGeometry g;
    const auto events = synth_events(120);
    auto w = window_stream(events, g, 50);
    CHECK(w.windows.size() == 2);
    CHECK(w.dropped == 20);
    CHECK(window_stream(std::span(events).first(50), g, 50).windows.size() == 1);
    CHECK(window_stream(std::span(events).first(50), g, 50).dropped == 0);
    CHECK(window_stream(std::span(events).first(49), g, 50).windows.empty());
    CHECK(window_stream(std::span(events).first(49), g, 50).dropped == 49);
    CHECK_THROWS_AS(window_stream(events, g, 0), ConfigError);

    // the windows partition the consumed prefix
    std::vector<Event> joined;
    for (const auto& win : w.windows) {
        CHECK(win.size() == 50);
        joined.insert(joined.end(), win.events().begin(), win.events().end());
    }
    CHECK(joined == std::vector<Event>(events.begin(), events.begin() + 100));

    SUBCASE("overlapping stride") {
        const auto o = window_stream(events, g, 50, 10);
        CHECK(o.windows.size() == 8);
        CHECK(o.windows[1][0] == events[10]);
        CHECK(o.dropped == 0);
    }
}

TEST_CASE("label files") {
    TempDir dir;
    const SensorGeometry g;
    const auto events = synth_events(130);
    auto windows = window_stream(events, g, 50).windows;

    SUBCASE("one label per window") {
        const std::vector<int> labels{1, 0};
        write_window_labels(dir / "w.txt", labels);
        const auto set = attach_labels(windows, read_label_file(dir / "w.txt"), 50);
        CHECK(set.labels == labels);
        CHECK(set.event_labels.empty());
        CHECK_THROWS_AS(attach_labels(std::vector<EventWindow>(windows.begin(), windows.begin() + 1),
                                      read_label_file(dir / "w.txt"), 50),
                        FormatError);
    }
    SUBCASE("per-event labels with a remainder line") {
        std::vector<std::uint8_t> ev(130, 0);
        for (std::size_t i = 0; i < 26; ++i) ev[i] = 1;  // window 0: 26 of 50 road
        for (std::size_t i = 50; i < 75; ++i) ev[i] = 1;  // window 1: exactly half
        write_event_labels(dir / "e.txt", ev, 50);
        const auto file = read_label_file(dir / "e.txt");
        CHECK(file.lines.size() == 3);
        CHECK(file.lines[2].size() == 30);
        const auto set = attach_labels(windows, file, 50);
        CHECK(set.labels == std::vector<int>{1, 0});
        CHECK(set.event_labels.size() == 2);
        CHECK(set.event_labels[0].size() == 50);
    }
    SUBCASE("malformed label files") {
        testutil::write_file(dir / "bad.txt", "0\n2\n");
        CHECK_THROWS_AS(read_label_file(dir / "bad.txt"), ParseError);
        testutil::write_file(dir / "short.txt", "0 1 0\n1 1 1\n");
        CHECK_THROWS_AS(attach_labels(windows, read_label_file(dir / "short.txt"), 50), FormatError);
    }
}

TEST_CASE("checkpoint round trip is bitwise") {
    TempDir dir;
    ModelConfig cfg;
    cfg.trunk_ffn = {32, 16};
    const auto p = init_model<double>(cfg, 3);
    save_checkpoint(p, dir / "m.ckpt");
    CHECK(std::filesystem::exists(config_path_for(dir / "m.ckpt")));
    const auto q = load_checkpoint<double>(dir / "m.ckpt");
    CHECK(q.config == p.config);
    REQUIRE(q.tensors.size() == p.tensors.size());
    for (const auto& [name, t] : p.tensors) {
        const auto& u = q.tensors.at(name);
        REQUIRE(u.rows() == t.rows());
        REQUIRE(u.cols() == t.cols());
        CHECK(std::memcmp(u.data(), t.data(), sizeof(double) * t.size()) == 0);
    }

    SUBCASE("float model") {
        const auto f = p.cast<float>();
        save_checkpoint(f, dir / "f.ckpt");
        const auto g = load_checkpoint<float>(dir / "f.ckpt");
        for (const auto& [name, t] : f.tensors)
            CHECK(std::memcmp(g.tensors.at(name).data(), t.data(), sizeof(float) * t.size()) == 0);
    }
}

TEST_CASE("checkpoint errors") {
    TempDir dir;
    ModelConfig cfg;
    cfg.trunk_ffn = {32, 16};
    const auto p = init_model<double>(cfg, 3);
    save_checkpoint(p, dir / "m.ckpt");
    const auto bytes = testutil::read_file(dir / "m.ckpt");
    CHECK(bytes.substr(0, 7) == "EVSSEG1");

    SUBCASE("bad magic") {
        auto bad = bytes;
        bad.replace(0, 7, "XXXXXXX");
        testutil::write_file(dir / "m.ckpt", bad);
        CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt"), VersionError);
    }
    SUBCASE("truncated payload") {
        testutil::write_file(dir / "m.ckpt", bytes.substr(0, bytes.size() - 5));
        CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt"), CorruptionError);
    }
    SUBCASE("different window size") {
        ModelConfig other = cfg;
        other.window = 20;
        CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt", other), ShapeError);
    }
    SUBCASE("different head") {
        ModelConfig other = cfg;
        other.head = HeadKind::SegmentationHead;
        CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt", other), ShapeError);
    }
    SUBCASE("missing config sidecar") {
        std::filesystem::remove(config_path_for(dir / "m.ckpt"));
        CHECK_THROWS_AS(load_checkpoint<double>(dir / "m.ckpt"), FormatError);
    }
    SUBCASE("layout by hand") {
        // first tensor record follows the 7-byte magic
        std::uint32_t name_len = 0;
        std::memcpy(&name_len, bytes.data() + 7, 4);
        const std::string first = p.tensors.begin()->first;
        CHECK(name_len == first.size());
        CHECK(bytes.substr(11, name_len) == first);
        std::uint32_t rank = 0;
        std::memcpy(&rank, bytes.data() + 11 + name_len, 4);
        CHECK(rank == 2);
        std::size_t expected = 7;
        for (const auto& [name, t] : p.tensors) expected += 4 + name.size() + 4 + 8 + 4 * t.size();
        CHECK(bytes.size() == expected);
    }
}
