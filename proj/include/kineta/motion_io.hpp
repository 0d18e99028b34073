#pragma once

// Motion file format "kineta-motion/1": a single-line JSON header holding
// skeleton, fps, script, segment bounds and the declared payload length,
// terminated by '\n', followed by the frame data as little-endian float32,
// row-major [frame][joint][xyz]. A dataset is a directory of motion files
// plus a manifest listing relative paths and seeds.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kineta/core.hpp"
#include "kineta/motion.hpp"

namespace kineta::motion {

using json = nlohmann::json;

constexpr const char* kMotionFormat = "kineta-motion/1";
constexpr const char* kDatasetFormat = "kineta-dataset/1";

inline json skeleton_to_json(const Skeleton& s) {
    return json{{"joint_names", s.joint_names}, {"parent", s.parent}, {"bone_lengths", s.bone_lengths}};
}

inline Skeleton skeleton_from_json(const json& j) {
    Skeleton s;
    s.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    s.parent = j.at("parent").get<std::vector<int>>();
    s.bone_lengths = j.at("bone_lengths").get<std::vector<double>>();
    s.validate();
    return s;
}

inline json script_to_json(const MotionScript& script) {
    json arr = json::array();
    for (const auto& c : script.commands)
        arr.push_back(json{{"verb", verb_name(c.verb)}, {"frames", c.duration_frames}, {"magnitude", c.magnitude}});
    return arr;
}

inline MotionScript script_from_json(const json& arr) {
    MotionScript script;
    for (const auto& j : arr) {
        Command c;
        std::string vn = j.at("verb").get<std::string>();
        if (!verb_from_name(vn, c.verb)) throw ValidationError("script: unknown verb '" + vn + "'");
        c.duration_frames = j.at("frames").get<int>();
        c.magnitude = j.at("magnitude").get<double>();
        script.commands.push_back(c);
    }
    script.validate();
    return script;
}

// `source` tags how the motion was produced; the velocity-bound invariant is
// enforced only for generator output.
inline void write_motion_file(const DatasetRecord& rec, const std::string& path,
                              const std::string& source = "datagen") {
    rec.validate();
    json header{{"format", kMotionFormat},
                {"fps", rec.motion.fps},
                {"frames", rec.motion.t_len},
                {"source", source},
                {"skeleton", skeleton_to_json(rec.motion.skeleton)},
                {"script", script_to_json(rec.script)},
                {"full_text", rec.full_text},
                {"segment_bounds", rec.segment_bounds},
                {"payload_floats", rec.motion.float_count()}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    os << header.dump() << '\n';
    os.write(reinterpret_cast<const char*>(rec.motion.frames.data()),
             std::streamsize(rec.motion.frames.size() * sizeof(float)));
    if (!os) throw ValidationError("write failed: " + path);
}

inline DatasetRecord read_motion_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open: " + path, 0);
    std::string header_line;
    if (!std::getline(is, header_line)) throw ParseError("missing header line in " + path, 0);

    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::parse_error& e) {
        throw ParseError("malformed header in " + path + ": " + e.what(), e.byte);
    }
    size_t payload_off = header_line.size() + 1;

    DatasetRecord rec;
    try {
        if (header.at("format").get<std::string>() != kMotionFormat)
            throw ValidationError("unsupported format tag in " + path);
        rec.motion.skeleton = skeleton_from_json(header.at("skeleton"));
        rec.motion.fps = header.at("fps").get<double>();
        rec.motion.t_len = header.at("frames").get<int>();
        rec.script = script_from_json(header.at("script"));
        rec.full_text = header.value("full_text", std::string());
        for (const auto& b : header.at("segment_bounds"))
            rec.segment_bounds.push_back({b.at(0).get<int>(), b.at(1).get<int>()});
        size_t declared = header.at("payload_floats").get<size_t>();
        if (declared != rec.motion.float_count())
            throw ValidationError("declared payload length disagrees with frames x joints x 3");
    } catch (const json::exception& e) {
        throw ParseError("bad header field in " + path + ": " + e.what(), payload_off - 1);
    }

    rec.motion.frames.assign(rec.motion.float_count(), 0.0f);
    is.read(reinterpret_cast<char*>(rec.motion.frames.data()),
            std::streamsize(rec.motion.frames.size() * sizeof(float)));
    if (size_t(is.gcount()) != rec.motion.frames.size() * sizeof(float))
        throw ParseError("truncated frame payload in " + path, payload_off + size_t(is.gcount()));

    bool generated = header.value("source", std::string("datagen")) == "datagen";
    rec.motion.validate(generated);
    rec.validate();
    return rec;
}

struct DatasetManifest {
    std::vector<std::string> paths; // relative to the dataset directory
    std::vector<uint64_t> seeds;
    uint64_t seed = 0;
};

inline void write_dataset(const std::vector<DatasetRecord>& records, const std::string& dir, uint64_t seed) {
    std::filesystem::create_directories(dir);
    json manifest{{"format", kDatasetFormat}, {"count", records.size()}, {"seed", seed}};
    json entries = json::array();
    for (size_t i = 0; i < records.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "motion_%05zu.kmo", i);
        write_motion_file(records[i], (std::filesystem::path(dir) / name).string());
        entries.push_back(json{{"path", name}, {"seed", derive_seed(seed, i)}});
    }
    manifest["records"] = entries;
    std::ofstream os(std::filesystem::path(dir) / "manifest.json");
    os << manifest.dump(2) << '\n';
    if (!os) throw ValidationError("write failed: " + dir + "/manifest.json");
}

inline std::vector<DatasetRecord> read_dataset(const std::string& dir) {
    auto mpath = std::filesystem::path(dir) / "manifest.json";
    std::ifstream is(mpath);
    if (!is) throw ParseError("cannot open: " + mpath.string(), 0);
    json manifest;
    try {
        manifest = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ParseError("malformed manifest: " + std::string(e.what()), e.byte);
    }
    if (manifest.at("format").get<std::string>() != kDatasetFormat)
        throw ValidationError("unsupported dataset format in " + mpath.string());
    std::vector<DatasetRecord> out;
    for (const auto& entry : manifest.at("records"))
        out.push_back(read_motion_file((std::filesystem::path(dir) / entry.at("path").get<std::string>()).string()));
    return out;
}

}  // namespace kineta::motion
