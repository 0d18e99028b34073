#pragma once

// Kinematic phrases: per-frame signed indicators of objective kinematic
// facts, computed by a catalog of extraction functions over joint positions.
// Three families are provided: axis velocities (world-frame for the root,
// root-relative for other joints), root-relative axis positions, and pair
// distance rates. Values come in a hard {-1, 0, +1} form and a smooth
// tanh(raw / tau) form whose graph variant is differentiable end-to-end with
// respect to joint positions.
//
// Velocities use forward differences (frame t reads x[t+1] - x[t], the last
// frame copies the previous value) scaled by fps. A dead zone
// f <- sign(f) * max(|f| - delta, 0) suppresses jitter-induced sign flips.

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kineta/core.hpp"
#include "kineta/motion.hpp"
#include "kineta/tensor.hpp"

namespace kineta::kp {

enum class PhraseKind { joint_velocity_axis, relative_position_axis, pair_distance_rate };

inline const char* phrase_kind_name(PhraseKind k) {
    switch (k) {
        case PhraseKind::joint_velocity_axis: return "joint_velocity_axis";
        case PhraseKind::relative_position_axis: return "relative_position_axis";
        case PhraseKind::pair_distance_rate: return "pair_distance_rate";
    }
    return "?";
}

struct PhraseDescriptor {
    PhraseKind kind = PhraseKind::joint_velocity_axis;
    int joint = 0;      // subject joint
    int reference = -1; // -1 = world frame; otherwise measured relative to this joint
    int axis = 0;       // 0/1/2 = x/y/z; ignored for distance rates
    double dead_zone = 0.05;

    bool operator==(const PhraseDescriptor& o) const {
        return kind == o.kind && joint == o.joint && reference == o.reference && axis == o.axis &&
               dead_zone == o.dead_zone;
    }
};

constexpr double kVelocityDeadZone = 0.05; // m/s
constexpr double kPositionDeadZone = 0.02; // m

struct KpCatalog {
    std::vector<PhraseDescriptor> entries;
    int n_joints = 0;

    int n_kp() const { return int(entries.size()); }

    void validate() const {
        if (entries.empty()) throw ValidationError("catalog: at least one phrase required");
        for (size_t i = 0; i < entries.size(); ++i) {
            const auto& e = entries[i];
            if (e.joint < 0 || e.joint >= n_joints || e.reference >= n_joints)
                throw ValidationError("catalog: joint index out of range in phrase " + std::to_string(i));
            if (e.kind != PhraseKind::pair_distance_rate && (e.axis < 0 || e.axis > 2))
                throw ValidationError("catalog: axis out of range in phrase " + std::to_string(i));
            for (size_t j = 0; j < i; ++j)
                if (entries[j] == e) throw ValidationError("catalog: duplicate phrase " + std::to_string(i));
        }
    }

    std::string phrase_name(int i, const motion::Skeleton& s) const {
        const auto& e = entries[size_t(i)];
        const char* ax = e.axis == 0 ? "x" : e.axis == 1 ? "y" : "z";
        auto jn = [&](int j) { return j >= 0 ? s.joint_names[size_t(j)] : std::string("world"); };
        switch (e.kind) {
            case PhraseKind::joint_velocity_axis:
                return e.reference < 0 ? "vel[" + jn(e.joint) + "]." + ax
                                       : "relvel[" + jn(e.joint) + "/" + jn(e.reference) + "]." + ax;
            case PhraseKind::relative_position_axis:
                return "relpos[" + jn(e.joint) + "/" + jn(e.reference) + "]." + ax;
            case PhraseKind::pair_distance_rate:
                return "distrate[" + jn(e.joint) + "," + jn(e.reference) + "]";
        }
        return "?";
    }
};

// World root velocity per axis, root-relative velocity per axis for every
// other joint, root-relative z height for every other joint, and distance
// rates: hand-hand plus each hand to root when the skeleton has hands,
// otherwise every non-root joint to root. For the default 5-joint skeleton
// this yields 3 + 12 + 4 + 3 = 22 phrases.
inline KpCatalog default_catalog(const motion::Skeleton& skeleton) {
    skeleton.validate();
    KpCatalog cat;
    cat.n_joints = skeleton.n_joints();
    for (int a = 0; a < 3; ++a)
        cat.entries.push_back({PhraseKind::joint_velocity_axis, 0, -1, a, kVelocityDeadZone});
    for (int j = 1; j < cat.n_joints; ++j)
        for (int a = 0; a < 3; ++a)
            cat.entries.push_back({PhraseKind::joint_velocity_axis, j, 0, a, kVelocityDeadZone});
    for (int j = 1; j < cat.n_joints; ++j)
        cat.entries.push_back({PhraseKind::relative_position_axis, j, 0, 2, kPositionDeadZone});
    int lh = skeleton.find("left_hand"), rh = skeleton.find("right_hand");
    if (lh >= 0 && rh >= 0) {
        cat.entries.push_back({PhraseKind::pair_distance_rate, lh, rh, 0, kVelocityDeadZone});
        cat.entries.push_back({PhraseKind::pair_distance_rate, lh, 0, 0, kVelocityDeadZone});
        cat.entries.push_back({PhraseKind::pair_distance_rate, rh, 0, 0, kVelocityDeadZone});
    } else {
        for (int j = 1; j < cat.n_joints; ++j)
            cat.entries.push_back({PhraseKind::pair_distance_rate, j, 0, 0, kVelocityDeadZone});
    }
    cat.validate();
    return cat;
}

enum class KpMode { hard, smooth };

struct KpSequence {
    std::vector<float> values; // [T][n_kp]
    int t_len = 0;
    int n_kp = 0;
    KpMode mode = KpMode::hard;
    double tau = 1.0;

    float at(int t, int p) const { return values[size_t(t) * n_kp + size_t(p)]; }
    float& at(int t, int p) { return values[size_t(t) * n_kp + size_t(p)]; }
};

namespace detail {

constexpr double kDistEps = 1e-12;

inline double apply_dead_zone(double f, double delta) {
    double m = std::abs(f) - delta;
    return m > 0.0 ? (f > 0.0 ? m : -m) : 0.0;
}

inline double pair_distance(const motion::MotionSequence& m, int t, int a, int b) {
    double dx = double(m.at(t, a, 0)) - double(m.at(t, b, 0));
    double dy = double(m.at(t, a, 1)) - double(m.at(t, b, 1));
    double dz = double(m.at(t, a, 2)) - double(m.at(t, b, 2));
    return std::sqrt(dx * dx + dy * dy + dz * dz + kDistEps);
}

}  // namespace kp::detail

// Raw extraction-function values in natural units (m, m/s), dead zone applied.
inline std::vector<double> extract_raw(const motion::MotionSequence& m, const KpCatalog& catalog) {
    if (m.skeleton.n_joints() != catalog.n_joints)
        throw ValidationError("extract: motion and catalog are bound to different skeletons");
    if (m.t_len < 2) throw ValidationError("extract: at least 2 frames required for velocities");
    catalog.validate();
    const int T = m.t_len, P = catalog.n_kp();
    std::vector<double> out(size_t(T) * size_t(P));
    for (int p = 0; p < P; ++p) {
        const auto& e = catalog.entries[size_t(p)];
        for (int t = 0; t < T; ++t) {
            int tt = t == T - 1 ? T - 2 : t; // last frame copies previous value
            double f = 0.0;
            switch (e.kind) {
                case PhraseKind::joint_velocity_axis: {
                    double cur = double(m.at(tt, e.joint, e.axis));
                    double nxt = double(m.at(tt + 1, e.joint, e.axis));
                    if (e.reference >= 0) {
                        cur -= double(m.at(tt, e.reference, e.axis));
                        nxt -= double(m.at(tt + 1, e.reference, e.axis));
                    }
                    f = (nxt - cur) * m.fps;
                    break;
                }
                case PhraseKind::relative_position_axis:
                    f = double(m.at(t, e.joint, e.axis)) - double(m.at(t, e.reference, e.axis));
                    break;
                case PhraseKind::pair_distance_rate:
                    f = (detail::pair_distance(m, tt + 1, e.joint, e.reference) -
                         detail::pair_distance(m, tt, e.joint, e.reference)) *
                        m.fps;
                    break;
            }
            out[size_t(t) * P + size_t(p)] = detail::apply_dead_zone(f, e.dead_zone);
        }
    }
    return out;
}

inline KpSequence extract_hard(const motion::MotionSequence& m, const KpCatalog& catalog) {
    auto raw = extract_raw(m, catalog);
    KpSequence seq;
    seq.t_len = m.t_len;
    seq.n_kp = catalog.n_kp();
    seq.mode = KpMode::hard;
    seq.values.resize(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) seq.values[i] = raw[i] > 0.0 ? 1.0f : raw[i] < 0.0 ? -1.0f : 0.0f;
    return seq;
}

inline KpSequence extract_smooth(const motion::MotionSequence& m, const KpCatalog& catalog, double tau = 1.0) {
    if (!(tau > 0.0)) throw ValidationError("extract_smooth: tau must be positive");
    auto raw = extract_raw(m, catalog);
    KpSequence seq;
    seq.t_len = m.t_len;
    seq.n_kp = catalog.n_kp();
    seq.mode = KpMode::smooth;
    seq.tau = tau;
    seq.values.resize(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) seq.values[i] = float(std::tanh(raw[i] / tau));
    return seq;
}

// Graph form of extract_smooth over a [T, n_j*3] position tensor; gradients
// flow through the forward differences into the positions.
template <typename T>
inline nn::TensorPtr<T> extract_smooth_graph(nn::TapeT<T>& tape, nn::TensorPtr<T> positions,
                                             const KpCatalog& catalog, double fps, double tau = 1.0) {
    if (!(tau > 0.0)) throw ValidationError("extract_smooth: tau must be positive");
    if (positions->shape.size() != 2 || positions->shape[1] != catalog.n_joints * 3)
        throw ValidationError("extract_smooth: positions must be [T, n_joints*3]");
    const int T_len = positions->shape[0];
    if (T_len < 2) throw ValidationError("extract_smooth: at least 2 frames required");

    auto forward_diff = [&](nn::TensorPtr<T> x) {
        auto d = tape.scale(tape.sub(tape.slice_rows(x, 1, T_len), tape.slice_rows(x, 0, T_len - 1)), T(fps));
        return tape.concat_rows({d, tape.slice_rows(d, T_len - 2, T_len - 1)});
    };
    auto axis_col = [&](int joint, int axis) {
        return tape.gather_cols(positions, {joint * 3 + axis});
    };
    auto ones3 = tape.constant({3, 1}, {T(1), T(1), T(1)});

    std::vector<nn::TensorPtr<T>> cols;
    cols.reserve(catalog.entries.size());
    for (const auto& e : catalog.entries) {
        nn::TensorPtr<T> f;
        switch (e.kind) {
            case PhraseKind::joint_velocity_axis: {
                auto x = axis_col(e.joint, e.axis);
                if (e.reference >= 0) x = tape.sub(x, axis_col(e.reference, e.axis));
                f = forward_diff(x);
                break;
            }
            case PhraseKind::relative_position_axis:
                f = tape.sub(axis_col(e.joint, e.axis), axis_col(e.reference, e.axis));
                break;
            case PhraseKind::pair_distance_rate: {
                auto da = tape.gather_cols(positions, {e.joint * 3, e.joint * 3 + 1, e.joint * 3 + 2});
                auto db = tape.gather_cols(positions, {e.reference * 3, e.reference * 3 + 1, e.reference * 3 + 2});
                auto diff = tape.sub(da, db);
                auto dist = tape.sqrt(tape.add_const(tape.matmul(tape.mul(diff, diff), ones3), T(detail::kDistEps)));
                f = forward_diff(dist);
                break;
            }
        }
        cols.push_back(tape.tanh(tape.scale(tape.deadzone(f, T(e.dead_zone)), T(1.0 / tau))));
    }
    return tape.concat_cols(cols);
}

// ---- serialization ----

inline nlohmann::json catalog_to_json(const KpCatalog& cat) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : cat.entries)
        entries.push_back(nlohmann::json{{"kind", phrase_kind_name(e.kind)},
                                         {"joint", e.joint},
                                         {"reference", e.reference},
                                         {"axis", e.axis},
                                         {"dead_zone", e.dead_zone}});
    return nlohmann::json{{"format", "kineta-catalog/1"}, {"n_joints", cat.n_joints}, {"entries", entries}};
}

inline KpCatalog catalog_from_json(const nlohmann::json& j) {
    KpCatalog cat;
    cat.n_joints = j.at("n_joints").get<int>();
    for (const auto& ej : j.at("entries")) {
        PhraseDescriptor e;
        std::string kind = ej.at("kind").get<std::string>();
        if (kind == "joint_velocity_axis")
            e.kind = PhraseKind::joint_velocity_axis;
        else if (kind == "relative_position_axis")
            e.kind = PhraseKind::relative_position_axis;
        else if (kind == "pair_distance_rate")
            e.kind = PhraseKind::pair_distance_rate;
        else
            throw ValidationError("catalog: unknown phrase kind '" + kind + "'");
        e.joint = ej.at("joint").get<int>();
        e.reference = ej.at("reference").get<int>();
        e.axis = ej.at("axis").get<int>();
        e.dead_zone = ej.at("dead_zone").get<double>();
        cat.entries.push_back(e);
    }
    cat.validate();
    return cat;
}

inline void write_kp_csv(const KpSequence& seq, const KpCatalog& cat, const motion::Skeleton& skel,
                         const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    os << "frame";
    for (int p = 0; p < cat.n_kp(); ++p) os << ',' << cat.phrase_name(p, skel);
    os << '\n';
    for (int t = 0; t < seq.t_len; ++t) {
        os << t;
        for (int p = 0; p < seq.n_kp; ++p) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6g", double(seq.at(t, p)));
            os << ',' << buf;
        }
        os << '\n';
    }
}

}  // namespace kineta::kp
