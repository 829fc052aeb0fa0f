// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace evsseg {

enum class HeadKind { SslClassifier, SegmentationHead };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& s);

struct ModelConfig {
    std::size_t window = 50;
    std::size_t d_model = 12;
    std::size_t n_heads = 4;
    std::size_t n_blocks = 4;
    std::vector<std::size_t> block_ffn{24, 12};
    std::vector<std::size_t> trunk_ffn{2048, 1024};
    HeadKind head = HeadKind::SslClassifier;
    std::vector<std::size_t> ssl_head{2};
    std::vector<std::size_t> seg_head{128, 2};
    std::string pooling = "mean";

    std::size_t head_dim() const { return d_model / n_heads; }
    const std::vector<std::size_t>& head_layers() const {
        return head == HeadKind::SslClassifier ? ssl_head : seg_head;
    }
    /// Width of the features entering the head.
    std::size_t trunk_out() const { return trunk_ffn.empty() ? d_model : trunk_ffn.back(); }

    /// Throws ConfigError describing the first violated constraint.
    void validate() const;

    /// Sets one key; returns false for keys this config does not own.
    bool set(const std::string& key, const std::string& value);

    /// Flat key=value text, one key per line, in a fixed order.
    std::string to_text() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Parses `key=value` lines; blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> parse_key_values(const std::string& text);

/// Builds a config from key=value text. Unknown keys are a ConfigError.
ModelConfig model_config_from_text(const std::string& text);

ModelConfig load_model_config(const std::string& path);
void save_model_config(const ModelConfig& config, const std::string& path);

}  // namespace evsseg
