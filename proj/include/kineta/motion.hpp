#pragma once

// Skeleton and motion-sequence data model. Joint positions are world-frame
// meters, z-up, +y forward, +x to the actor's right. Frames are row-major
// [frame][joint][xyz].

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kineta/core.hpp"

namespace kineta::motion {

struct Skeleton {
    std::vector<std::string> joint_names;
    std::vector<int> parent;          // root's parent is itself
    std::vector<double> bone_lengths; // meters; root entry is 0

    int n_joints() const { return int(joint_names.size()); }

    int find(const std::string& name) const {
        for (int i = 0; i < n_joints(); ++i)
            if (joint_names[size_t(i)] == name) return i;
        return -1;
    }

    void validate() const {
        int n = n_joints();
        if (n < 2) throw ValidationError("skeleton: at least 2 joints required");
        if (int(parent.size()) != n || int(bone_lengths.size()) != n)
            throw ValidationError("skeleton: field lengths disagree");
        if (parent[0] != 0) throw ValidationError("skeleton: joint 0 must be the root");
        for (int i = 1; i < n; ++i) {
            if (parent[size_t(i)] < 0 || parent[size_t(i)] >= n || parent[size_t(i)] == i)
                throw ValidationError("skeleton: parent of joint " + std::to_string(i) + " is invalid");
            if (bone_lengths[size_t(i)] <= 0.0)
                throw ValidationError("skeleton: bone length of joint " + std::to_string(i) + " must be > 0");
            // walk to the root to reject cycles
            int cur = i, hops = 0;
            while (cur != 0) {
                cur = parent[size_t(cur)];
                if (++hops > n) throw ValidationError("skeleton: parent indices contain a cycle");
            }
        }
    }
};

// Root, head, both hands, and a combined feet joint: the smallest skeleton on
// which every generator verb is expressible.
inline Skeleton default_skeleton() {
    Skeleton s;
    s.joint_names = {"root", "head", "left_hand", "right_hand", "feet_center"};
    s.parent = {0, 0, 0, 0, 0};
    s.bone_lengths = {0.0, 0.65, 0.95, 0.95, 0.9};
    return s;
}

// Rest-pose world positions matching default_skeleton(); root at 0.9 m.
inline std::vector<std::array<double, 3>> default_rest_pose() {
    return {{0.0, 0.0, 0.9},   // root
            {0.0, 0.0, 1.55},  // head
            {0.4, 0.0, 0.95},  // left_hand (+x is the actor's right; mirrored below)
            {-0.4, 0.0, 0.95}, // right_hand
            {0.0, 0.0, 0.0}};  // feet_center
}

struct MotionSequence {
    Skeleton skeleton;
    std::vector<float> frames; // [T][n_j][3]
    int t_len = 0;
    double fps = 20.0;

    static constexpr double kVMax = 10.0; // m/s, generated-data velocity bound

    float& at(int t, int j, int a) { return frames[(size_t(t) * skeleton.n_joints() + j) * 3 + size_t(a)]; }
    float at(int t, int j, int a) const { return frames[(size_t(t) * skeleton.n_joints() + j) * 3 + size_t(a)]; }

    size_t float_count() const { return size_t(t_len) * size_t(skeleton.n_joints()) * 3; }

    void validate(bool check_velocity) const {
        if (t_len < 2) throw ValidationError("motion: at least 2 frames required");
        if (frames.size() != float_count()) throw ValidationError("motion: frame buffer size mismatch");
        for (float x : frames)
            if (!std::isfinite(x)) throw ValidationError("motion: non-finite position");
        if (check_velocity) {
            double bound = kVMax / fps;
            for (int t = 0; t + 1 < t_len; ++t)
                for (int j = 0; j < skeleton.n_joints(); ++j) {
                    double dx = at(t + 1, j, 0) - at(t, j, 0);
                    double dy = at(t + 1, j, 1) - at(t, j, 1);
                    double dz = at(t + 1, j, 2) - at(t, j, 2);
                    if (std::sqrt(dx * dx + dy * dy + dz * dz) > bound)
                        throw ValidationError("motion: frame displacement exceeds v_max/fps at frame " +
                                              std::to_string(t));
                }
        }
    }
};

enum class Verb {
    walk_forward,
    walk_backward,
    run_forward,
    run_backward,
    turn_left,
    turn_right,
    squat,
    stand_up,
    raise_left_hand,
    raise_right_hand,
    lower_left_hand,
    lower_right_hand,
    wave,
    idle,
};

constexpr int kVerbCount = 14;

inline const char* verb_name(Verb v) {
    switch (v) {
        case Verb::walk_forward: return "walk_forward";
        case Verb::walk_backward: return "walk_backward";
        case Verb::run_forward: return "run_forward";
        case Verb::run_backward: return "run_backward";
        case Verb::turn_left: return "turn_left";
        case Verb::turn_right: return "turn_right";
        case Verb::squat: return "squat";
        case Verb::stand_up: return "stand_up";
        case Verb::raise_left_hand: return "raise_left_hand";
        case Verb::raise_right_hand: return "raise_right_hand";
        case Verb::lower_left_hand: return "lower_left_hand";
        case Verb::lower_right_hand: return "lower_right_hand";
        case Verb::wave: return "wave";
        case Verb::idle: return "idle";
    }
    return "?";
}

inline bool verb_from_name(const std::string& name, Verb& out) {
    for (int i = 0; i < kVerbCount; ++i)
        if (name == verb_name(Verb(i))) {
            out = Verb(i);
            return true;
        }
    return false;
}

struct Command {
    Verb verb = Verb::idle;
    int duration_frames = 0;
    double magnitude = 0.0;
};

struct MotionScript {
    std::vector<Command> commands;

    int total_frames() const {
        int t = 0;
        for (const auto& c : commands) t += c.duration_frames;
        return t;
    }

    void validate() const {
        if (commands.empty() || commands.size() > 20)
            throw ValidationError("script: command count must be in [1, 20]");
        for (const auto& c : commands) {
            if (c.duration_frames <= 0) throw ValidationError("script: zero-duration command");
            if (!(c.magnitude >= 0.0)) throw ValidationError("script: negative magnitude");
        }
    }
};

struct DatasetRecord {
    MotionSequence motion;
    MotionScript script;
    std::string full_text;
    std::vector<std::pair<int, int>> segment_bounds; // [start, end) per command

    void validate() const {
        script.validate();
        motion.validate(false);
        if (segment_bounds.size() != script.commands.size())
            throw ValidationError("record: segment bounds must match command count");
        int cursor = 0;
        for (size_t i = 0; i < segment_bounds.size(); ++i) {
            if (segment_bounds[i].first != cursor || segment_bounds[i].second <= segment_bounds[i].first)
                throw ValidationError("record: segment bounds must tile [0, T)");
            cursor = segment_bounds[i].second;
        }
        if (cursor != motion.t_len) throw ValidationError("record: segment bounds must tile [0, T)");
    }
};

}  // namespace kineta::motion
