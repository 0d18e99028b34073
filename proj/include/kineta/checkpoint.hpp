#pragma once

// Versioned checkpoint container: a magic line, a single-line JSON manifest
// (free-form metadata, the named entry table with shapes and offsets, and an
// FNV-1a checksum of the payload), then the float32 payloads concatenated
// little-endian in entry order.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "kineta/core.hpp"
#include "kineta/tensor.hpp"

namespace kineta::ckpt {

constexpr const char* kCheckpointMagic = "kineta-ckpt/1";

struct LoadedCheckpoint {
    nlohmann::json meta;
    std::vector<std::string> order;
    std::map<std::string, std::pair<std::vector<int>, std::vector<float>>> entries;

    const std::vector<float>& values(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw ValidationError("checkpoint: missing entry '" + name + "'");
        return it->second.second;
    }
};

inline void save(const std::string& path, const nn::ParamSetT<float>& params, const nlohmann::json& meta) {
    nlohmann::json table = nlohmann::json::array();
    std::vector<float> payload;
    for (const auto& [name, t] : params.items) {
        table.push_back(nlohmann::json{
            {"name", name}, {"shape", t->shape}, {"offset_floats", payload.size()}, {"floats", t->numel()}});
        payload.insert(payload.end(), t->v.begin(), t->v.end());
    }
    uint64_t checksum = fnv1a(payload.data(), payload.size() * sizeof(float));
    nlohmann::json manifest{{"format", kCheckpointMagic},
                            {"meta", meta},
                            {"entries", table},
                            {"payload_floats", payload.size()},
                            {"checksum", to_hex(checksum)}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    os << kCheckpointMagic << '\n' << manifest.dump() << '\n';
    os.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size() * sizeof(float)));
    if (!os) throw ValidationError("write failed: " + path);
}

inline LoadedCheckpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open: " + path, 0);
    std::string magic, manifest_line;
    if (!std::getline(is, magic) || magic != kCheckpointMagic)
        throw ParseError("bad checkpoint magic in " + path, 0);
    if (!std::getline(is, manifest_line)) throw ParseError("missing checkpoint manifest in " + path, magic.size());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_line);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("malformed checkpoint manifest: " + std::string(e.what()), magic.size() + 1 + e.byte);
    }
    size_t total = manifest.at("payload_floats").get<size_t>();
    std::vector<float> payload(total);
    is.read(reinterpret_cast<char*>(payload.data()), std::streamsize(total * sizeof(float)));
    if (size_t(is.gcount()) != total * sizeof(float))
        throw ParseError("truncated checkpoint payload in " + path, magic.size() + manifest_line.size() + 2);
    uint64_t checksum = fnv1a(payload.data(), payload.size() * sizeof(float));
    if (to_hex(checksum) != manifest.at("checksum").get<std::string>())
        throw ValidationError("checkpoint checksum mismatch in " + path);

    LoadedCheckpoint out;
    out.meta = manifest.at("meta");
    for (const auto& e : manifest.at("entries")) {
        std::string name = e.at("name").get<std::string>();
        auto shape = e.at("shape").get<std::vector<int>>();
        size_t off = e.at("offset_floats").get<size_t>();
        size_t n = e.at("floats").get<size_t>();
        if (off + n > payload.size()) throw ValidationError("checkpoint entry out of bounds: " + name);
        out.order.push_back(name);
        out.entries[name] = {shape, std::vector<float>(payload.begin() + long(off), payload.begin() + long(off + n))};
    }
    return out;
}

// Copy values into an existing parameter set; names and shapes must match.
inline void restore(const LoadedCheckpoint& c, nn::ParamSetT<float>& params) {
    for (auto& [name, t] : params.items) {
        auto it = c.entries.find(name);
        if (it == c.entries.end()) throw ValidationError("checkpoint: missing entry '" + name + "'");
        if (it->second.first != t->shape)
            throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
        t->v = it->second.second;
    }
}

// Checksum over every payload entry, usable as a model fingerprint.
inline std::string fingerprint(const nn::ParamSetT<float>& params) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : params.items) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(t->v.data(), t->v.size() * sizeof(float), h);
    }
    return to_hex(h);
}

}  // namespace kineta::ckpt
