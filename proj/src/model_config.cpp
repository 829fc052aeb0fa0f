// SPDX-License-Identifier: Apache-2.0
#include "evsseg/model_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "evsseg/errors.hpp"

namespace evsseg {

std::string to_string(HeadKind kind) {
    return kind == HeadKind::SslClassifier ? "ssl_classifier" : "segmentation_head";
}

HeadKind head_kind_from_string(const std::string& s) {
    if (s == "ssl_classifier" || s == "ssl") return HeadKind::SslClassifier;
    if (s == "segmentation_head" || s == "segmentation" || s == "seg") return HeadKind::SegmentationHead;
    throw ConfigError("unknown head kind '" + s + "'");
}

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    return out;
}

std::vector<std::size_t> parse_dims(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    if (value.empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_size(key, item));
    return out;
}

std::string join(const std::vector<std::size_t>& dims) {
    std::string out;
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(dims[i]);
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

void ModelConfig::validate() const {
    if (window < 1) throw ConfigError("window must be >= 1");
    if (d_model < 1) throw ConfigError("d_model must be >= 1");
    if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
    if (d_model % n_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(n_heads) +
                          " heads");
    for (auto d : block_ffn)
        if (d < 1) throw ConfigError("block_ffn dims must be >= 1");
    for (auto d : trunk_ffn)
        if (d < 1) throw ConfigError("trunk_ffn dims must be >= 1");
    if (n_blocks > 0 && (block_ffn.empty() || block_ffn.back() != d_model))
        throw ConfigError("block_ffn must end in d_model (" + std::to_string(d_model) + ") for the residual add");
    for (const auto* dims : {&ssl_head, &seg_head}) {
        if (dims->empty() || dims->back() != 2) throw ConfigError("head layers must end in 2 classes");
        for (auto d : *dims)
            if (d < 1) throw ConfigError("head dims must be >= 1");
    }
    if (pooling != "mean") throw ConfigError("unsupported pooling '" + pooling + "'");
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
    if (key == "window" || key == "n")
        window = parse_size(key, value);
    else if (key == "d_model")
        d_model = parse_size(key, value);
    else if (key == "n_heads")
        n_heads = parse_size(key, value);
    else if (key == "n_blocks")
        n_blocks = parse_size(key, value);
    else if (key == "block_ffn")
        block_ffn = parse_dims(key, value);
    else if (key == "trunk_ffn")
        trunk_ffn = parse_dims(key, value);
    else if (key == "head")
        head = head_kind_from_string(value);
    else if (key == "ssl_head")
        ssl_head = parse_dims(key, value);
    else if (key == "seg_head")
        seg_head = parse_dims(key, value);
    else if (key == "pooling")
        pooling = value;
    else
        return false;
    return true;
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "window=" << window << '\n'
       << "d_model=" << d_model << '\n'
       << "n_heads=" << n_heads << '\n'
       << "n_blocks=" << n_blocks << '\n'
       << "block_ffn=" << join(block_ffn) << '\n'
       << "trunk_ffn=" << join(trunk_ffn) << '\n'
       << "head=" << to_string(head) << '\n'
       << "ssl_head=" << join(ssl_head) << '\n'
       << "seg_head=" << join(seg_head) << '\n'
       << "pooling=" << pooling << '\n';
    return os.str();
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, "expected key=value, got '" + t + "'");
        out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return out;
}

ModelConfig model_config_from_text(const std::string& text) {
    ModelConfig config;
    for (const auto& [key, value] : parse_key_values(text))
        if (!config.set(key, value)) throw ConfigError("unknown model config key '" + key + "'");
    config.validate();
    return config;
}

ModelConfig load_model_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return model_config_from_text(ss.str());
}

void save_model_config(const ModelConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write config " + path);
    out << config.to_text();
}

}  // namespace evsseg
