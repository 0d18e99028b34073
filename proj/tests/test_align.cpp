#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "kineta/align.hpp"
#include "kineta/gradcheck.hpp"
#include "kineta/motion_gen.hpp"

using namespace kineta;
using namespace kineta::align;

TEST_CASE("window endpoints") {
    // first window starts at 0, last window ends exactly at T
    for (int n = 2; n <= 20; ++n)
        for (int T : {20, 50, 100, 400}) {
            CHECK(feasible_window(0, n, T).l == doctest::Approx(0.0).epsilon(1e-12));
            CHECK(feasible_window(n - 1, n, T).r == doctest::Approx(double(T)).epsilon(1e-9));
        }
    // n=4, T=80: r_0 = 20 * (1 + 1/ln 6)
    auto w = feasible_window(0, 4, 80);
    CHECK(w.r == doctest::Approx(20.0 * (1.0 + 1.0 / std::log(6.0))).epsilon(1e-9));
    CHECK(w.r == doctest::Approx(31.1622).epsilon(1e-4));
}

TEST_CASE("window ordering and overlap sweep") {
    for (int n = 2; n <= 20; ++n)
        for (int T : {20, 50, 100, 400}) {
            double prev_l = -1.0;
            for (int i = 0; i < n; ++i) {
                auto w = feasible_window(i, n, T);
                CHECK(w.l >= prev_l);
                CHECK(w.l < w.r);
                CHECK(w.r <= double(T) + 1e-9);
                if (i + 1 < n) {
                    auto next = feasible_window(i + 1, n, T);
                    CHECK(w.r > next.l); // consecutive windows overlap
                }
                prev_l = w.l;
            }
        }
}

TEST_CASE("window degenerate cases") {
    auto w = feasible_window(0, 1, 37);
    CHECK(w.l == 0.0);
    CHECK(w.r == 37.0);
    CHECK_THROWS_AS(feasible_window(0, 0, 10), ValidationError);
    CHECK_THROWS_AS(feasible_window(2, 2, 10), ValidationError);
    CHECK_THROWS_AS(feasible_window(0, 5, 4), ValidationError);
}

namespace {

AlignerConfig small_config(int n_kp = 8) {
    AlignerConfig cfg;
    cfg.d_text = 16;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.n_kp = n_kp;
    cfg.max_frames = 64;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("domain weights normalize and are unimodal") {
    AlignerModel model(small_config());
    nn::TapeT<float> tape(false);
    auto feat = model.embedder.embed_part(tape, "a person walks forward");
    auto win = feasible_window(0, 3, 48);
    auto dom = model.domain_weights(tape, feat, win);

    double sum = 0.0;
    for (auto v : dom.weights->v) {
        CHECK(v >= 0.0f);
        sum += double(v);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(double(dom.mu->v[0]) >= win.l);
    CHECK(double(dom.mu->v[0]) <= win.r);
    CHECK(double(dom.sigma->v[0]) >= model.cfg.sigma_min);

    // unimodal with the peak at the frame nearest mu
    int peak = 0;
    for (int j = 1; j < win.frames(); ++j)
        if (dom.weights->v[size_t(j)] > dom.weights->v[size_t(peak)]) peak = j;
    for (int j = 0; j + 1 < peak; ++j) CHECK(dom.weights->v[size_t(j)] <= dom.weights->v[size_t(j + 1)]);
    for (int j = peak; j + 1 < win.frames(); ++j)
        CHECK(dom.weights->v[size_t(j)] >= dom.weights->v[size_t(j + 1)]);
    double nearest = std::round(double(dom.mu->v[0]) - win.lo);
    CHECK(std::abs(double(peak) - nearest) <= 1.0);
}

TEST_CASE("maximal sigma over a 5-frame window is near uniform") {
    AlignerModel model(small_config());
    // force mu to the window center and sigma to its cap
    std::fill(model.mu_head.w->v.begin(), model.mu_head.w->v.end(), 0.0f);
    model.mu_head.b->v[0] = 0.0f;  // sigmoid(0) = 0.5
    std::fill(model.sigma_head.w->v.begin(), model.sigma_head.w->v.end(), 0.0f);
    model.sigma_head.b->v[0] = 30.0f; // softplus(30) >> span, clamped to span

    nn::TapeT<float> tape(false);
    auto feat = model.embedder.embed_part(tape, "a person waves");
    FeasibleWindow win;
    win.l = 10.0;
    win.r = 15.0;
    win.lo = 10;
    win.hi = 15;
    auto dom = model.domain_weights(tape, feat, win);
    CHECK(double(dom.sigma->v[0]) == doctest::Approx(5.0));
    for (auto v : dom.weights->v) {
        CHECK(double(v) >= 0.2 * 0.9);
        CHECK(double(v) <= 0.2 * 1.1);
    }
}

TEST_CASE("weighted kp: convex combination, selection, arithmetic") {
    AlignerModel model(small_config(4));
    nn::TapeT<float> tape(false);
    auto feat = model.embedder.embed_part(tape, "a person squats");
    auto win = feasible_window(0, 2, 12);
    auto dom = model.domain_weights(tape, feat, win);
    auto kp_const = tape.constant({12, 4}, std::vector<float>(48, 1.0f));
    auto omega = model.weighted_kp(tape, dom, kp_const);
    for (auto v : omega->v) CHECK(double(v) == doctest::Approx(1.0).epsilon(1e-5));

    // one-hot weights select a row
    PartTarget sel;
    sel.window = {0.0, 3.0, 0, 3};
    sel.weights = {0.0f, 1.0f, 0.0f};
    kp::KpSequence seq;
    seq.t_len = 3;
    seq.n_kp = 2;
    seq.values = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f};
    auto picked = weighted_kp_values(sel, seq);
    CHECK(picked[0] == doctest::Approx(0.3f));
    CHECK(picked[1] == doctest::Approx(0.4f));

    // two frames, w = (0.25, 0.75), phrase values (-1, +1) -> 0.5
    PartTarget mix;
    mix.window = {0.0, 2.0, 0, 2};
    mix.weights = {0.25f, 0.75f};
    kp::KpSequence seq2;
    seq2.t_len = 2;
    seq2.n_kp = 1;
    seq2.values = {-1.0f, 1.0f};
    CHECK(weighted_kp_values(mix, seq2)[0] == doctest::Approx(0.5f));

    // range violation is rejected
    PartTarget bad;
    bad.window = {0.0, 5.0, 0, 5};
    bad.weights = {0.2f, 0.2f, 0.2f, 0.2f, 0.2f};
    CHECK_THROWS_AS(weighted_kp_values(bad, seq2), ValidationError);
}

TEST_CASE("align loss zero-residual and permutation invariance") {
    AlignerModel model(small_config(4));
    // zero projector output (tanh(0) = 0) against all-zero KP -> zero loss
    std::fill(model.proj2.w->v.begin(), model.proj2.w->v.end(), 0.0f);
    std::fill(model.proj2.b->v.begin(), model.proj2.b->v.end(), 0.0f);
    nn::TapeT<float> tape(false);
    text::DecomposedPrompt prompt;
    prompt.full_text = "a person squats, then stands up";
    prompt.parts = {"a person squats", "a person stands up"};
    auto feats = model.embedder.embed_parts(tape, prompt);
    auto kp_zero = tape.constant({16, 4}, std::vector<float>(64, 0.0f));
    auto loss = model.align_loss(tape, feats, kp_zero, 16);
    CHECK(double(loss->v[0]) == doctest::Approx(0.0).epsilon(1e-12));

    // permuting KP columns together with projector output dims leaves the loss unchanged
    AlignerModel m2(small_config(4));
    Rng rng(9);
    std::vector<float> kp_vals(64);
    for (auto& v : kp_vals) v = float(rng.uniform(-1.0, 1.0));
    auto loss_of = [&](AlignerModel& m, const std::vector<float>& kv) {
        nn::TapeT<float> t2(false);
        auto f2 = m.embedder.embed_parts(t2, prompt);
        return double(m.align_loss(t2, f2, t2.constant({16, 4}, kv), 16)->v[0]);
    };
    double base = loss_of(m2, kp_vals);
    std::vector<int> perm = {2, 0, 3, 1};
    std::vector<float> kp_perm(64);
    for (int t = 0; t < 16; ++t)
        for (int p = 0; p < 4; ++p) kp_perm[size_t(t) * 4 + size_t(p)] = kp_vals[size_t(t) * 4 + size_t(perm[size_t(p)])];
    AlignerModel m3(small_config(4));
    // copy m2 then permute projector output dimensions the same way
    for (size_t i = 0; i < m2.params.items.size(); ++i) m3.params.items[i].second->v = m2.params.items[i].second->v;
    for (int in = 0; in < m3.proj2.in; ++in)
        for (int p = 0; p < 4; ++p)
            m3.proj2.w->v[size_t(in) * 4 + size_t(p)] = m2.proj2.w->v[size_t(in) * 4 + size_t(perm[size_t(p)])];
    for (int p = 0; p < 4; ++p) m3.proj2.b->v[size_t(p)] = m2.proj2.b->v[size_t(perm[size_t(p)])];
    CHECK(loss_of(m3, kp_perm) == doctest::Approx(base).epsilon(1e-5));

    // empty part list is invalid
    nn::TapeT<float> t3(false);
    CHECK_THROWS_AS(model.align_loss(t3, {}, kp_zero, 16), ValidationError);
}

TEST_CASE("align loss gradient matches finite differences (n=2, T=12, n_kp=8)") {
    AlignerConfig cfg;
    cfg.d_text = 12;
    cfg.hidden = 10;
    cfg.heads = 2;
    cfg.n_kp = 8;
    cfg.max_frames = 32;
    cfg.seed = 3;
    AlignerModelT<double> model(cfg);

    Rng rng(15);
    std::vector<double> kp_vals(12 * 8);
    for (auto& v : kp_vals) v = rng.uniform(-0.9, 0.9);
    auto kp_leaf = std::make_shared<nn::TensorT<double>>(std::vector<int>{12, 8});
    kp_leaf->v = kp_vals;

    nn::ParamSetT<double> checked = model.params;
    checked.add("kp_input", kp_leaf); // gradients must also flow into the KP values

    text::DecomposedPrompt prompt;
    prompt.full_text = "a person walks forward, then waves";
    prompt.parts = {"a person walks forward", "a person waves"};

    auto build = [&](nn::TapeT<double>& tape) {
        auto feats = model.embedder.embed_parts(tape, prompt);
        return model.align_loss(tape, feats, kp_leaf, 12);
    };
    auto rep = nn::check_gradients<double>(checked, build, 1e-4);
    INFO("worst ", rep.worst_param, "[", rep.worst_index, "] err ", rep.max_err, " over ", rep.checked);
    CHECK(rep.ok(1e-4));
}

TEST_CASE("similarity: identical, antipodal, zero-norm") {
    AlignerModel model(small_config(4));
    auto cat = kp::default_catalog(motion::default_skeleton());
    AlignerConfig cfg = small_config(cat.n_kp());
    AlignerModel m(cfg);

    motion::MotionScript s;
    s.commands.push_back({motion::Verb::walk_forward, 20, 1.0});
    auto rec = motion::render_script(s, motion::default_skeleton(), 2);
    auto prompt = text::script_to_ground_truth(rec.script);

    // saturate the projector to +1: cosine(omega, +1s) with omega of constant KP
    std::fill(m.proj2.w->v.begin(), m.proj2.w->v.end(), 0.0f);
    std::fill(m.proj2.b->v.begin(), m.proj2.b->v.end(), 30.0f);
    kp::KpSequence ones;
    ones.t_len = 20;
    ones.n_kp = cat.n_kp();
    ones.values.assign(size_t(20 * cat.n_kp()), 1.0f);
    auto targets = part_targets(m, prompt, 20);
    CHECK(cosine(weighted_kp_values(targets[0], ones), targets[0].target) == doctest::Approx(1.0).epsilon(1e-6));

    // antipodal
    std::fill(m.proj2.b->v.begin(), m.proj2.b->v.end(), -30.0f);
    auto targets2 = part_targets(m, prompt, 20);
    CHECK(cosine(weighted_kp_values(targets2[0], ones), targets2[0].target) == doctest::Approx(-1.0).epsilon(1e-6));

    // zero-norm operand defines similarity 0
    CHECK(cosine({0.0f, 0.0f}, {1.0f, 0.5f}) == 0.0);
}

TEST_CASE("aligner training reduces loss deterministically") {
    auto records = motion::generate_dataset(24, motion::GeneratorConfig{}, 777);
    auto cat = kp::default_catalog(motion::default_skeleton());
    AlignerConfig cfg;
    cfg.n_kp = cat.n_kp();
    cfg.d_text = 32;
    cfg.hidden = 32;
    cfg.seed = 11;
    AlignerTrainConfig tc;
    tc.epochs = 8;
    tc.batch = 8;
    tc.seed = 13;

    AlignerModel a(cfg);
    auto stats_a = train_aligner(a, records, cat, tc);
    CHECK(stats_a.final_loss < stats_a.initial_loss);

    // 0 epochs returns the initialized model unchanged
    AlignerModel b(cfg);
    AlignerModel c(cfg);
    AlignerTrainConfig zero = tc;
    zero.epochs = 0;
    train_aligner(b, records, cat, zero);
    for (size_t i = 0; i < b.params.items.size(); ++i)
        CHECK(b.params.items[i].second->v == c.params.items[i].second->v);

    // identical seeds give identical parameters
    AlignerModel d(cfg);
    auto stats_d = train_aligner(d, records, cat, tc);
    CHECK(stats_d.final_loss == doctest::Approx(stats_a.final_loss).epsilon(1e-12));
    for (size_t i = 0; i < a.params.items.size(); ++i)
        CHECK(a.params.items[i].second->v == d.params.items[i].second->v);
}

TEST_CASE("aligner checkpoint round trip") {
    auto dir = std::filesystem::temp_directory_path() / "kineta_aligner_ckpt";
    std::filesystem::create_directories(dir);
    AlignerModel model(small_config());
    auto path = (dir / "aligner.ckpt").string();
    save_aligner(path, model);
    auto back = load_aligner(path);
    REQUIRE(back.params.items.size() == model.params.items.size());
    for (size_t i = 0; i < back.params.items.size(); ++i) {
        CHECK(back.params.items[i].first == model.params.items[i].first);
        CHECK(back.params.items[i].second->v == model.params.items[i].second->v);
    }
}
