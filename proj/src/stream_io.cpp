// SPDX-License-Identifier: Apache-2.0
#include "evsseg/stream_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "evsseg/finetune.hpp"

namespace evsseg {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kBinaryEventMagic[] = "EVB1";

std::vector<std::string_view> split_spaces(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        const std::size_t b = i;
        while (i < line.size() && line[i] != ' ') ++i;
        if (i > b) out.push_back(line.substr(b, i - b));
    }
    return out;
}

template <typename T>
bool parse_int(std::string_view s, T& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::int8_t map_polarity(long long raw, PolarityEncoding enc, std::size_t lineno) {
    if (enc == PolarityEncoding::Signed) {
        if (raw == 1 || raw == -1) return static_cast<std::int8_t>(raw);
        throw FormatError("line " + std::to_string(lineno) + ": polarity " + std::to_string(raw) +
                          " is not -1 or 1 in signed encoding");
    }
    if (raw == 0) return -1;
    if (raw == 1) return 1;
    throw FormatError("line " + std::to_string(lineno) + ": polarity " + std::to_string(raw) +
                      " is not 0 or 1 in zero-one encoding");
}

int encode_polarity(std::int8_t p, PolarityEncoding enc) {
    return enc == PolarityEncoding::Signed ? p : (p > 0 ? 1 : 0);
}

void validate_event(const Event& e, const Event* prev, const SensorGeometry& g, std::size_t lineno) {
    if (!g.contains(e.x, e.y))
        throw FormatError("line " + std::to_string(lineno) + ": pixel (" + std::to_string(e.x) + ", " +
                          std::to_string(e.y) + ") outside " + std::to_string(g.width) + "x" +
                          std::to_string(g.height) + " sensor");
    if (prev && e.t < prev->t)
        throw FormatError("line " + std::to_string(lineno) + ": timestamp " + std::to_string(e.t) +
                          " decreases (previous " + std::to_string(prev->t) + ")");
}

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return in.gcount() == static_cast<std::streamsize>(sizeof(T));
}

}  // namespace

EventStream parse_event_text(std::istream& in) {
    EventStream s;
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError(1, "missing header `W H ENC`");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    {
        const auto f = split_spaces(line);
        if (f.size() != 3 || !parse_int(f[0], s.header.geometry.width) || !parse_int(f[1], s.header.geometry.height))
            throw ParseError(1, "expected header `W H ENC`, got '" + line + "'");
        if (s.header.geometry.width < 1 || s.header.geometry.height < 1)
            throw FormatError("line 1: sensor dimensions must be >= 1");
        if (f[2] == "signed")
            s.header.encoding = PolarityEncoding::Signed;
        else if (f[2] == "zero-one")
            s.header.encoding = PolarityEncoding::ZeroOne;
        else
            throw ParseError(1, "unknown polarity encoding '" + std::string(f[2]) + "'");
    }
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_spaces(line);
        Event e;
        long long p = 0;
        if (f.size() != 4 || !parse_int(f[0], e.t) || !parse_int(f[1], e.x) || !parse_int(f[2], e.y) ||
            !parse_int(f[3], p))
            throw ParseError(lineno, "expected `t x y p`, got '" + line + "'");
        e.p = map_polarity(p, s.header.encoding, lineno);
        validate_event(e, s.events.empty() ? nullptr : &s.events.back(), s.header.geometry, lineno);
        s.events.push_back(e);
    }
    return s;
}

EventStream parse_event_binary(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kBinaryEventMagic, 4) != 0)
        throw VersionError("binary event file does not start with EVB1");
    EventStream s;
    std::uint8_t enc = 0;
    if (!get(in, s.header.geometry.width) || !get(in, s.header.geometry.height) || !get(in, enc))
        throw CorruptionError("binary event header is truncated");
    if (s.header.geometry.width < 1 || s.header.geometry.height < 1)
        throw FormatError("binary event header: sensor dimensions must be >= 1");
    if (enc > 1) throw FormatError("binary event header: unknown polarity encoding " + std::to_string(enc));
    s.header.encoding = enc == 0 ? PolarityEncoding::Signed : PolarityEncoding::ZeroOne;
    for (std::size_t record = 1;; ++record) {
        Event e;
        if (!get(in, e.t)) {
            if (in.gcount() == 0) break;
            throw CorruptionError("binary event record " + std::to_string(record) + " is truncated");
        }
        std::int8_t p = 0;
        if (!get(in, e.x) || !get(in, e.y) || !get(in, p))
            throw CorruptionError("binary event record " + std::to_string(record) + " is truncated");
        e.p = map_polarity(p, s.header.encoding, record);
        validate_event(e, s.events.empty() ? nullptr : &s.events.back(), s.header.geometry, record);
        s.events.push_back(e);
    }
    return s;
}

EventStream parse_event_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open event file " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    const bool binary = in.gcount() == 4 && std::memcmp(magic, kBinaryEventMagic, 4) == 0;
    in.clear();
    in.seekg(0);
    return binary ? parse_event_binary(in) : parse_event_text(in);
}

void write_event_text(std::ostream& out, const EventFileHeader& header, std::span<const Event> events) {
    out << header.geometry.width << ' ' << header.geometry.height << ' '
        << (header.encoding == PolarityEncoding::Signed ? "signed" : "zero-one") << '\n';
    for (const auto& e : events)
        out << e.t << ' ' << e.x << ' ' << e.y << ' ' << encode_polarity(e.p, header.encoding) << '\n';
}

void write_event_binary(std::ostream& out, const EventFileHeader& header, std::span<const Event> events) {
    out.write(kBinaryEventMagic, 4);
    put(out, header.geometry.width);
    put(out, header.geometry.height);
    put(out, static_cast<std::uint8_t>(header.encoding == PolarityEncoding::Signed ? 0 : 1));
    for (const auto& e : events) {
        put(out, e.t);
        put(out, e.x);
        put(out, e.y);
        put(out, static_cast<std::int8_t>(encode_polarity(e.p, header.encoding)));
    }
}

void write_event_file(const std::filesystem::path& path, const EventFileHeader& header, std::span<const Event> events) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write event file " + path.string());
    write_event_text(out, header, events);
    if (!out) throw FormatError("write to " + path.string() + " failed");
}

WindowedStream window_stream(std::span<const Event> events, const SensorGeometry& geometry, std::size_t n,
                             std::size_t stride) {
    if (n < 1) throw ConfigError("window size must be >= 1");
    if (stride == 0) stride = n;
    WindowedStream out;
    std::size_t covered = 0;
    for (std::size_t start = 0; start + n <= events.size(); start += stride) {
        out.windows.emplace_back(std::vector<Event>(events.begin() + static_cast<std::ptrdiff_t>(start),
                                                    events.begin() + static_cast<std::ptrdiff_t>(start + n)),
                                 geometry);
        covered = start + n;
    }
    out.dropped = events.size() - covered;
    return out;
}

LabelFile parse_label_text(std::istream& in) {
    LabelFile f;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::uint8_t> row;
        for (auto tok : split_spaces(line)) {
            if (tok != "0" && tok != "1") throw ParseError(lineno, "label '" + std::string(tok) + "' is not 0 or 1");
            row.push_back(tok == "1" ? 1 : 0);
        }
        f.lines.push_back(std::move(row));
    }
    return f;
}

LabelFile read_label_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open label file " + path.string());
    return parse_label_text(in);
}

void write_window_labels(const std::filesystem::path& path, std::span<const int> labels) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write label file " + path.string());
    for (int l : labels) out << (l ? 1 : 0) << '\n';
}

void write_event_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels, std::size_t n) {
    if (n < 1) throw ConfigError("label line length must be >= 1");
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write label file " + path.string());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out << (labels[i] ? '1' : '0');
        out << ((i + 1) % n == 0 || i + 1 == labels.size() ? '\n' : ' ');
    }
}

LabeledWindowSet attach_labels(std::vector<EventWindow> windows, const LabelFile& labels, std::size_t n) {
    LabeledWindowSet set;
    const std::size_t count = windows.size();
    bool per_window = true;
    for (const auto& line : labels.lines) per_window = per_window && line.size() == 1;
    if (n == 1) per_window = true;

    if (per_window) {
        if (labels.lines.size() != count)
            throw FormatError("label file has " + std::to_string(labels.lines.size()) + " window labels for " +
                              std::to_string(count) + " windows");
        for (const auto& line : labels.lines) set.labels.push_back(line[0]);
    } else {
        std::size_t full = 0;
        for (std::size_t i = 0; i < labels.lines.size(); ++i) {
            const auto& line = labels.lines[i];
            if (line.size() == n) {
                ++full;
                continue;
            }
            const bool trailing_remainder = i + 1 == labels.lines.size() && line.size() < n;
            if (!trailing_remainder)
                throw FormatError("label line " + std::to_string(i + 1) + " has " + std::to_string(line.size()) +
                                  " entries, expected " + std::to_string(n));
        }
        if (full != count)
            throw FormatError("label file covers " + std::to_string(full) + " windows, stream has " +
                              std::to_string(count));
        for (std::size_t i = 0; i < count; ++i) {
            set.labels.push_back(majority_label(labels.lines[i]));
            set.event_labels.push_back(labels.lines[i]);
        }
    }
    set.windows = std::move(windows);
    return set;
}

void write_checkpoint_tensors(std::ostream& out, const TensorMap<float>& tensors) {
    out.write(kCheckpointMagic, 7);
    for (const auto& [name, t] : tensors) {
        put(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put(out, std::uint32_t{2});
        put(out, static_cast<std::uint32_t>(t.rows()));
        put(out, static_cast<std::uint32_t>(t.cols()));
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
}

TensorMap<float> read_checkpoint_tensors(std::istream& in) {
    char magic[7] = {};
    in.read(magic, 7);
    if (in.gcount() != 7 || std::memcmp(magic, kCheckpointMagic, 7) != 0)
        throw VersionError("not an EVSSEG1 checkpoint");
    TensorMap<float> out;
    for (;;) {
        std::uint32_t name_len = 0;
        if (!get(in, name_len)) {
            if (in.gcount() == 0) break;
            throw CorruptionError("checkpoint truncated in a tensor header");
        }
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = 0;
        if (in.gcount() != static_cast<std::streamsize>(name_len) || !get(in, rank))
            throw CorruptionError("checkpoint truncated in a tensor header");
        if (rank < 1 || rank > 2) throw CorruptionError("tensor '" + name + "' has unsupported rank " + std::to_string(rank));
        std::uint32_t dims[2] = {1, 1};
        for (std::uint32_t r = 0; r < rank; ++r)
            if (!get(in, dims[r])) throw CorruptionError("checkpoint truncated in the dims of '" + name + "'");
        const std::uint32_t rows = rank == 2 ? dims[0] : 1;
        const std::uint32_t cols = rank == 2 ? dims[1] : dims[0];
        Matrix<float> t(rows, cols);
        const auto bytes = static_cast<std::streamsize>(t.size() * sizeof(float));
        in.read(reinterpret_cast<char*>(t.data()), bytes);
        if (in.gcount() != bytes) throw CorruptionError("payload of '" + name + "' is truncated");
        if (!out.emplace(name, std::move(t)).second) throw CorruptionError("duplicate tensor '" + name + "'");
    }
    return out;
}

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p += ".cfg";
    return p;
}

template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, const std::filesystem::path& path) {
    TensorMap<float> tensors;
    for (const auto& [name, t] : params.tensors) tensors.emplace(name, t.template cast<float>());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write checkpoint " + path.string());
    write_checkpoint_tensors(out, tensors);
    out.close();
    if (!out) throw FormatError("write to " + path.string() + " failed");
    save_model_config(params.config, config_path_for(path).string());
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    const auto tensors = read_checkpoint_tensors(in);
    const auto cfg_path = config_path_for(path);
    if (!std::filesystem::exists(cfg_path)) throw FormatError("checkpoint config " + cfg_path.string() + " is missing");
    ModelParams<Scalar> params;
    params.config = load_model_config(cfg_path.string());
    check_tensors_match(params.config, tensors);
    for (const auto& [name, t] : tensors) params.tensors.emplace(name, t.template cast<Scalar>());
    return params;
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    const auto tensors = read_checkpoint_tensors(in);
    check_tensors_match(expected, tensors);
    auto params = load_checkpoint<Scalar>(path);
    if (!(params.config == expected)) throw ShapeError("checkpoint config differs from the requested config");
    return params;
}

template void save_checkpoint<float>(const ModelParams<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const ModelParams<double>&, const std::filesystem::path&);
template ModelParams<float> load_checkpoint<float>(const std::filesystem::path&);
template ModelParams<double> load_checkpoint<double>(const std::filesystem::path&);
template ModelParams<float> load_checkpoint<float>(const std::filesystem::path&, const ModelConfig&);
template ModelParams<double> load_checkpoint<double>(const std::filesystem::path&, const ModelConfig&);

}  // namespace evsseg
