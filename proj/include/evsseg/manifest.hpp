// SPDX-License-Identifier: Apache-2.0
// Run manifests: what was run, with which settings and on which inputs.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace evsseg {

struct InputDigest {
    std::string path;
    std::string sha256;  // lowercase hex
    friend bool operator==(const InputDigest&, const InputDigest&) = default;
};

struct RunManifest {
    std::string tool = "evsseg";
    std::string version;
    std::string command;
    std::vector<std::string> argv;                // as typed, program name excluded
    std::map<std::string, std::string> settings;  // effective run settings
    std::string model_config;                     // key=value text, empty when no model is involved
    std::uint64_t seed = 0;
    std::vector<InputDigest> inputs;
    std::vector<std::string> outputs;
    std::map<std::string, std::string> results;  // small scalar results, e.g. the threshold
    friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

std::string sha256_hex(const std::filesystem::path& file);

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& text);

std::filesystem::path manifest_path_for(const std::filesystem::path& output);
void write_manifest(const RunManifest& m, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace evsseg
