#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kineta/gradcheck.hpp"
#include "kineta/kp.hpp"
#include "kineta/motion_gen.hpp"
#include "kp_oracle.hpp"

using namespace kineta;
using namespace kineta::kp;
using namespace kineta::motion;

namespace {

// hand-built motion: positions filled by a callback
MotionSequence make_motion(int t_len, const std::function<void(MotionSequence&)>& fill) {
    MotionSequence m;
    m.skeleton = default_skeleton();
    m.t_len = t_len;
    m.fps = 20.0;
    m.frames.assign(m.float_count(), 0.0f);
    auto rest = default_rest_pose();
    for (int t = 0; t < t_len; ++t)
        for (int j = 0; j < 5; ++j)
            for (int a = 0; a < 3; ++a) m.at(t, j, a) = float(rest[size_t(j)][size_t(a)]);
    fill(m);
    return m;
}

Skeleton two_joint_skeleton() {
    Skeleton s;
    s.joint_names = {"root", "head"};
    s.parent = {0, 0};
    s.bone_lengths = {0.0, 0.65};
    return s;
}

}  // namespace

TEST_CASE("default catalog sizes") {
    auto cat5 = default_catalog(default_skeleton());
    CHECK(cat5.n_kp() == 22);
    auto cat2 = default_catalog(two_joint_skeleton());
    CHECK(cat2.n_kp() == 8);
    // identical across calls
    auto again = default_catalog(default_skeleton());
    REQUIRE(again.entries.size() == cat5.entries.size());
    for (size_t i = 0; i < again.entries.size(); ++i) CHECK(again.entries[i] == cat5.entries[i]);
}

TEST_CASE("raw values: rising joint, static motion, relative position") {
    auto cat = default_catalog(default_skeleton());
    // root rising at +1.05 m/s along z -> dead-zoned raw exactly 1.0
    auto rising = make_motion(6, [](MotionSequence& m) {
        for (int t = 0; t < 6; ++t)
            for (int j = 0; j < 5; ++j) m.at(t, j, 2) += float(1.05 * t / m.fps);
    });
    auto raw = extract_raw(rising, cat);
    for (int t = 0; t < 6; ++t) CHECK(raw[size_t(t) * 22 + kporacle::kRootVelZ] == doctest::Approx(1.0).epsilon(1e-5));

    auto still = make_motion(4, [](MotionSequence&) {});
    for (double v : extract_raw(still, cat)) {
        if (std::abs(v) > 0) {
            // only the constant rest-pose relative positions survive
            continue;
        }
        CHECK(v == 0.0);
    }
    // truly static: all velocity phrases zero
    auto raw_still = extract_raw(still, cat);
    for (int t = 0; t < 4; ++t) {
        for (int p = 0; p < 15; ++p) CHECK(raw_still[size_t(t) * 22 + size_t(p)] == 0.0);
        for (int p = 19; p < 22; ++p) CHECK(raw_still[size_t(t) * 22 + size_t(p)] == 0.0);
    }

    // head 0.3 m above the root with dead zone 0.02 -> raw 0.28
    auto offset = make_motion(3, [](MotionSequence& m) {
        for (int t = 0; t < 3; ++t) {
            m.at(t, 1, 2) = m.at(t, 0, 2) + 0.3f;
        }
    });
    auto raw_off = extract_raw(offset, cat);
    int head_relpos_z = 15;
    CHECK(raw_off[size_t(head_relpos_z)] == doctest::Approx(0.28).epsilon(1e-5));
}

TEST_CASE("extract_raw requires two frames") {
    auto cat = default_catalog(default_skeleton());
    auto m = make_motion(2, [](MotionSequence&) {});
    m.t_len = 1;
    m.frames.resize(m.float_count());
    CHECK_THROWS_AS(extract_raw(m, cat), ValidationError);
}

TEST_CASE("hard signs of synthetic motions") {
    auto cat = default_catalog(default_skeleton());
    auto rising = make_motion(6, [](MotionSequence& m) {
        for (int t = 0; t < 6; ++t) m.at(t, 2, 2) += float(0.5 * t / m.fps);
    });
    auto hard = extract_hard(rising, cat);
    for (int t = 0; t < 6; ++t) CHECK(hard.at(t, kporacle::rel_vel(2, 2)) == 1.0f);

    auto still = make_motion(4, [](MotionSequence&) {});
    auto hard_still = extract_hard(still, cat);
    for (int t = 0; t < 4; ++t)
        for (int p = 0; p < 15; ++p) CHECK(hard_still.at(t, p) == 0.0f);
}

TEST_CASE("walk_forward root y-velocity phrase is +1 on interior frames") {
    MotionScript s;
    s.commands.push_back({Verb::walk_forward, 30, 1.0});
    auto rec = render_script(s, default_skeleton(), 17);
    auto cat = default_catalog(default_skeleton());
    auto hard = extract_hard(rec.motion, cat);
    int hits = 0;
    for (int t = 0; t < 30; ++t) hits += hard.at(t, kporacle::kRootVelY) == 1.0f;
    CHECK(double(hits) / 30.0 >= 0.95);
}

TEST_CASE("smooth values and tau sweep") {
    auto cat = default_catalog(default_skeleton());
    auto still = make_motion(4, [](MotionSequence&) {});
    auto sm = extract_smooth(still, cat, 1.0);
    CHECK(sm.at(0, kporacle::kRootVelY) == 0.0f); // tanh(0) = 0

    // dead-zoned raw value 1.0 at tau=1 -> tanh(1)
    auto rising = make_motion(6, [](MotionSequence& m) {
        for (int t = 0; t < 6; ++t)
            for (int j = 0; j < 5; ++j) m.at(t, j, 2) += float(1.05 * t / m.fps);
    });
    auto sm1 = extract_smooth(rising, cat, 1.0);
    CHECK(sm1.at(2, kporacle::kRootVelZ) == doctest::Approx(0.7616).epsilon(1e-3));

    CHECK_THROWS_AS(extract_smooth(rising, cat, 0.0), ValidationError);

    // small tau agrees in sign with the hard form wherever |raw| > 0.05
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        auto recs = generate_dataset(1, GeneratorConfig{}, seed);
        auto raw = extract_raw(recs[0].motion, cat);
        auto hard = extract_hard(recs[0].motion, cat);
        auto smooth = extract_smooth(recs[0].motion, cat, 0.01);
        for (int t = 0; t < recs[0].motion.t_len; ++t)
            for (int p = 0; p < 22; ++p) {
                if (std::abs(raw[size_t(t) * 22 + size_t(p)]) <= 0.05) continue;
                double sgn = smooth.at(t, p) > 0 ? 1.0 : smooth.at(t, p) < 0 ? -1.0 : 0.0;
                CHECK(sgn == double(hard.at(t, p)));
            }
    }
}

TEST_CASE("time reversal negates velocity phrases and permutes position phrases") {
    auto cat = default_catalog(default_skeleton());
    auto recs = generate_dataset(1, GeneratorConfig{}, 31);
    const auto& m = recs[0].motion;
    MotionSequence rev = m;
    for (int t = 0; t < m.t_len; ++t)
        for (int j = 0; j < 5; ++j)
            for (int a = 0; a < 3; ++a) rev.at(t, j, a) = m.at(m.t_len - 1 - t, j, a);
    auto h = extract_hard(m, cat);
    auto hr = extract_hard(rev, cat);
    for (int t = 0; t + 1 < m.t_len; ++t)
        for (int p = 0; p < 22; ++p) {
            const auto& e = cat.entries[size_t(p)];
            if (e.kind == PhraseKind::relative_position_axis) {
                CHECK(hr.at(t, p) == h.at(m.t_len - 1 - t, p));
            } else {
                CHECK(hr.at(t, p) == -h.at(m.t_len - 2 - t, p));
            }
        }
}

TEST_CASE("phrases are translation invariant") {
    auto cat = default_catalog(default_skeleton());
    auto recs = generate_dataset(1, GeneratorConfig{}, 33);
    auto shifted = recs[0].motion;
    for (auto& x : shifted.frames) x += 3.25f;
    auto a = extract_raw(recs[0].motion, cat);
    auto b = extract_raw(shifted, cat);
    for (size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-4));
}

TEST_CASE("graph extraction matches the plain path") {
    auto cat = default_catalog(default_skeleton());
    auto recs = generate_dataset(1, GeneratorConfig{}, 41);
    const auto& m = recs[0].motion;
    nn::TapeT<float> tape(false);
    std::vector<float> flat(m.frames.begin(), m.frames.end());
    auto pos = tape.constant({m.t_len, 15}, flat);
    auto node = extract_smooth_graph(tape, pos, cat, m.fps, 0.7);
    auto plain = extract_smooth(m, cat, 0.7);
    REQUIRE(node->numel() == plain.values.size());
    for (size_t i = 0; i < plain.values.size(); ++i)
        CHECK(double(node->v[i]) == doctest::Approx(double(plain.values[i])).epsilon(2e-4));
}

TEST_CASE("smooth extraction gradient matches finite differences") {
    // step 1e-4, relative error <= 1e-4, double shadow evaluation
    Rng rng(77);
    int T = 5;
    nn::ParamSetT<double> params;
    auto pos = std::make_shared<nn::TensorT<double>>(std::vector<int>{T, 15});
    auto rest = default_rest_pose();
    for (int t = 0; t < T; ++t)
        for (int j = 0; j < 5; ++j)
            for (int a = 0; a < 3; ++a)
                pos->v[(size_t(t) * 5 + size_t(j)) * 3 + size_t(a)] =
                    rest[size_t(j)][size_t(a)] + 0.3 * rng.normal();
    params.add("positions", pos);
    auto cat = default_catalog(default_skeleton());
    auto build = [&](nn::TapeT<double>& tape) {
        return tape.sum(extract_smooth_graph(tape, pos, cat, 20.0, 1.0));
    };
    auto rep = nn::check_gradients<double>(params, build, 1e-4);
    INFO("worst ", rep.worst_param, "[", rep.worst_index, "] err ", rep.max_err);
    CHECK(rep.ok(1e-4));
}

TEST_CASE("catalog serialization round trip") {
    auto cat = default_catalog(default_skeleton());
    auto j = catalog_to_json(cat);
    auto back = catalog_from_json(j);
    REQUIRE(back.entries.size() == cat.entries.size());
    for (size_t i = 0; i < cat.entries.size(); ++i) CHECK(back.entries[i] == cat.entries[i]);
}
