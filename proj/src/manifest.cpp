// SPDX-License-Identifier: Apache-2.0
#include "evsseg/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "evsseg/errors.hpp"

namespace evsseg {

using nlohmann::json;

std::string sha256_hex(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot open " + file.string() + " for hashing");

    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md;
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);

    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::string manifest_to_json(const RunManifest& m) {
    json j;
    j["tool"] = m.tool;
    j["version"] = m.version;
    j["command"] = m.command;
    j["argv"] = m.argv;
    j["settings"] = m.settings;
    j["model_config"] = m.model_config;
    j["seed"] = m.seed;
    j["inputs"] = json::array();
    for (const auto& in : m.inputs) j["inputs"].push_back({{"path", in.path}, {"sha256", in.sha256}});
    j["outputs"] = m.outputs;
    j["results"] = m.results;
    return j.dump(2) + "\n";
}

RunManifest manifest_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
    }
    RunManifest m;
    try {
        m.tool = j.at("tool").get<std::string>();
        m.version = j.at("version").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.argv = j.at("argv").get<std::vector<std::string>>();
        m.settings = j.at("settings").get<std::map<std::string, std::string>>();
        m.model_config = j.at("model_config").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& in : j.at("inputs"))
            m.inputs.push_back({in.at("path").get<std::string>(), in.at("sha256").get<std::string>()});
        m.outputs = j.at("outputs").get<std::vector<std::string>>();
        m.results = j.at("results").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest field missing or mistyped: ") + e.what());
    }
    return m;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
    return std::filesystem::path(output.string() + ".manifest.json");
}

void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write manifest " + path.string());
    out << manifest_to_json(m);
    if (!out) throw FormatError("write to " + path.string() + " failed");
}

RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return manifest_from_json(ss.str());
}

}  // namespace evsseg
