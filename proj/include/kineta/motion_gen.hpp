#pragma once

// Procedural motion renderer. Each verb defines a per-joint velocity field;
// positions are integrated from the rest pose, commands chain through a
// persistent pose, and consecutive commands are blended with a linear
// velocity ramp over min(5, duration/4) frames. A smooth low-frequency
// jitter (<= 2 cm per joint) is layered on top for diversity; its frame
// velocity stays below the kinematic-phrase dead zones so it cannot flip
// phrase signs.

#include <array>
#include <cmath>
#include <vector>

#include "kineta/core.hpp"
#include "kineta/motion.hpp"
#include "kineta/text.hpp"

namespace kineta::motion {

struct GeneratorConfig {
    int min_commands = 1;
    int max_commands = 8;
    int min_duration = 10;
    int max_duration = 40;
    double min_magnitude = 0.7;
    double max_magnitude = 1.3;
    double fps = 20.0;

    void validate() const {
        if (min_commands < 1 || max_commands > 20 || min_commands > max_commands)
            throw ValidationError("generator: command count range invalid");
        if (min_duration < 4 || min_duration > max_duration)
            throw ValidationError("generator: duration range invalid");
        if (min_magnitude <= 0.0 || min_magnitude > max_magnitude)
            throw ValidationError("generator: magnitude range invalid");
        if (fps <= 0.0) throw ValidationError("generator: fps must be positive");
    }
};

namespace detail {

constexpr double kWalkSpeed = 1.0;   // m/s
constexpr double kRunSpeed = 2.5;    // m/s
constexpr double kTurnSpeed = 0.8;   // m/s lateral veer
constexpr double kSquatSpeed = 0.4;  // m/s vertical
constexpr double kHandSpeed = 0.5;   // m/s vertical
constexpr double kWaveAmp = 0.15;    // m
constexpr double kWaveHz = 2.0;

struct JointRoles {
    int root = 0, head = -1, lhand = -1, rhand = -1, feet = -1;
};

inline JointRoles find_roles(const Skeleton& s) {
    JointRoles r;
    r.head = s.find("head");
    r.lhand = s.find("left_hand");
    r.rhand = s.find("right_hand");
    r.feet = s.find("feet_center");
    return r;
}

// World-frame velocity of every joint for one command at local frame u.
inline void command_velocity(const Command& cmd, const JointRoles& roles, int n_j, int u, double fps,
                             std::vector<std::array<double, 3>>& v) {
    for (auto& jv : v) jv = {0.0, 0.0, 0.0};
    double mag = cmd.magnitude;
    auto all_joints = [&](double x, double y, double z) {
        for (int j = 0; j < n_j; ++j) v[size_t(j)] = {x, y, z};
    };
    auto body_joints = [&](double x, double y, double z) {
        // everything except the grounded feet
        for (int j = 0; j < n_j; ++j)
            if (j != roles.feet) v[size_t(j)] = {x, y, z};
    };
    auto need = [&](int j, const char* what) {
        if (j < 0) throw ValidationError(std::string("render: skeleton lacks the ") + what + " joint");
        return j;
    };
    switch (cmd.verb) {
        case Verb::walk_forward: all_joints(0, kWalkSpeed * mag, 0); break;
        case Verb::walk_backward: all_joints(0, -kWalkSpeed * mag, 0); break;
        case Verb::run_forward: all_joints(0, kRunSpeed * mag, 0); break;
        case Verb::run_backward: all_joints(0, -kRunSpeed * mag, 0); break;
        case Verb::turn_left: all_joints(-kTurnSpeed * mag, 0, 0); break;
        case Verb::turn_right: all_joints(kTurnSpeed * mag, 0, 0); break;
        case Verb::squat: body_joints(0, 0, -kSquatSpeed * mag); break;
        case Verb::stand_up: body_joints(0, 0, kSquatSpeed * mag); break;
        case Verb::raise_left_hand: v[size_t(need(roles.lhand, "left_hand"))] = {0, 0, kHandSpeed * mag}; break;
        case Verb::raise_right_hand: v[size_t(need(roles.rhand, "right_hand"))] = {0, 0, kHandSpeed * mag}; break;
        case Verb::lower_left_hand: v[size_t(need(roles.lhand, "left_hand"))] = {0, 0, -kHandSpeed * mag}; break;
        case Verb::lower_right_hand: v[size_t(need(roles.rhand, "right_hand"))] = {0, 0, -kHandSpeed * mag}; break;
        case Verb::wave: {
            double omega = 2.0 * 3.14159265358979323846 * kWaveHz;
            double vx = kWaveAmp * mag * omega * std::cos(omega * double(u) / fps);
            v[size_t(need(roles.lhand, "left_hand"))] = {vx, 0, 0};
            break;
        }
        case Verb::idle: break;
    }
}

inline int blend_frames(int duration) { return std::min(5, duration / 4); }

}  // namespace motion::detail

// Deterministic for fixed (script, skeleton, seed).
inline DatasetRecord render_script(const MotionScript& script, const Skeleton& skeleton, uint64_t seed) {
    script.validate();
    skeleton.validate();
    const int n_j = skeleton.n_joints();
    const double fps = 20.0;
    const int t_len = script.total_frames();
    auto roles = detail::find_roles(skeleton);

    // jitter parameters: constant offset plus one slow sine per joint axis
    Rng rng(derive_seed(seed, 17));
    std::vector<std::array<double, 3>> offset(static_cast<size_t>(n_j)), amp(static_cast<size_t>(n_j)), freq(static_cast<size_t>(n_j)),
        phase(static_cast<size_t>(n_j));
    for (int j = 0; j < n_j; ++j)
        for (int a = 0; a < 3; ++a) {
            offset[size_t(j)][size_t(a)] = rng.uniform(-0.01, 0.01);
            amp[size_t(j)][size_t(a)] = 0.01 * rng.uniform(0.5, 1.0);
            freq[size_t(j)][size_t(a)] = rng.uniform(0.1, 0.2);
            phase[size_t(j)][size_t(a)] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        }

    std::vector<std::array<double, 3>> pose = default_rest_pose();
    if (int(pose.size()) != n_j) {
        // non-default skeletons start stacked along +z at bone-length spacing
        pose.assign(size_t(n_j), {0.0, 0.0, 0.9});
        for (int j = 1; j < n_j; ++j) pose[size_t(j)] = {0.0, 0.0, 0.9 + skeleton.bone_lengths[size_t(j)]};
    }

    DatasetRecord rec;
    rec.script = script;
    rec.full_text = text::make_full_text(script);
    rec.motion.skeleton = skeleton;
    rec.motion.fps = fps;
    rec.motion.t_len = t_len;
    rec.motion.frames.assign(size_t(t_len) * size_t(n_j) * 3, 0.0f);

    std::vector<std::array<double, 3>> v_cur(static_cast<size_t>(n_j)), v_cmd(static_cast<size_t>(n_j)), v_prev_end(static_cast<size_t>(n_j));
    int start = 0;
    for (size_t ci = 0; ci < script.commands.size(); ++ci) {
        const Command& cmd = script.commands[ci];
        const int dur = cmd.duration_frames;
        const int blend = ci == 0 ? 0 : detail::blend_frames(dur);
        rec.segment_bounds.push_back({start, start + dur});
        for (int u = 0; u < dur; ++u) {
            int t = start + u;
            // emit current pose with jitter overlay
            for (int j = 0; j < n_j; ++j)
                for (int a = 0; a < 3; ++a) {
                    double jit = offset[size_t(j)][size_t(a)] +
                                 amp[size_t(j)][size_t(a)] *
                                     std::sin(2.0 * 3.14159265358979323846 * freq[size_t(j)][size_t(a)] *
                                                  double(t) / fps +
                                              phase[size_t(j)][size_t(a)]);
                    rec.motion.at(t, j, a) = float(pose[size_t(j)][size_t(a)] + jit);
                }
            // advance pose by the (possibly blended) velocity field
            detail::command_velocity(cmd, roles, n_j, u, fps, v_cmd);
            if (u < blend) {
                double alpha = double(u + 1) / double(blend + 1);
                for (int j = 0; j < n_j; ++j)
                    for (int a = 0; a < 3; ++a)
                        v_cur[size_t(j)][size_t(a)] = (1.0 - alpha) * v_prev_end[size_t(j)][size_t(a)] +
                                                      alpha * v_cmd[size_t(j)][size_t(a)];
            } else {
                v_cur = v_cmd;
            }
            for (int j = 0; j < n_j; ++j)
                for (int a = 0; a < 3; ++a) pose[size_t(j)][size_t(a)] += v_cur[size_t(j)][size_t(a)] / fps;
        }
        v_prev_end = v_cur;
        start += dur;
    }

    rec.motion.validate(true);
    rec.validate();
    return rec;
}

// Scripts of 1-8 commands, 10-40 frames each, uniform verbs; deterministic
// per (config, seed) and independent per record index.
inline std::vector<DatasetRecord> generate_dataset(int count, const GeneratorConfig& config, uint64_t seed) {
    if (count < 1) throw ValidationError("generate_dataset: count must be >= 1");
    config.validate();
    Skeleton skeleton = default_skeleton();
    std::vector<DatasetRecord> out(static_cast<size_t>(count));
    parallel_for(size_t(count), [&](size_t i) {
        uint64_t rec_seed = derive_seed(seed, i);
        Rng rng(derive_seed(rec_seed, 1));
        MotionScript script;
        int n_cmd = int(rng.uniform_int(config.min_commands, config.max_commands));
        for (int c = 0; c < n_cmd; ++c) {
            Command cmd;
            cmd.verb = Verb(rng.uniform_int(0, kVerbCount - 1));
            cmd.duration_frames = int(rng.uniform_int(config.min_duration, config.max_duration));
            cmd.magnitude = cmd.verb == Verb::idle ? 0.0 : rng.uniform(config.min_magnitude, config.max_magnitude);
            script.commands.push_back(cmd);
        }
        out[i] = render_script(script, skeleton, derive_seed(rec_seed, 2));
    });
    return out;
}

}  // namespace kineta::motion
