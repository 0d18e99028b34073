#pragma once

// Fine-grained text-to-KP alignment.
//
// Each decomposed sub-sentence i of n gets a closed-form feasible window
// over the frame axis; a small cross-attention domain model reads the text
// feature against the window's positional encodings and emits Gaussian
// domain weights (mu, sigma) over the window's integer frames. The weighted
// KP Omega_i summarizes the motion inside the window, and the align loss is
//   sum_i || Omega_i - projector(T_i) ||^2
// with a 2-layer MLP projector mapping text features into KP space. The
// projector output is tanh-squashed so both operands live in [-1, 1]^n_kp.
// Projector, domain model, and the text embedder are co-trained.

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "kineta/checkpoint.hpp"
#include "kineta/core.hpp"
#include "kineta/kp.hpp"
#include "kineta/layers.hpp"
#include "kineta/motion.hpp"
#include "kineta/tensor.hpp"
#include "kineta/text.hpp"

namespace kineta::align {

struct FeasibleWindow {
    double l = 0.0, r = 0.0; // real endpoints, 0 <= l < r <= T_len
    int lo = 0, hi = 0;      // integer frames [lo, hi) used for summation

    int frames() const { return hi - lo; }
};

// Closed-form window for sub-sentence i of n over T_len frames; natural log.
// n == 1 is the degenerate whole-sequence window.
inline FeasibleWindow feasible_window(int i, int n, int t_len) {
    if (n < 1) throw ValidationError("feasible_window: part count must be >= 1");
    if (i < 0 || i >= n) throw ValidationError("feasible_window: index out of range");
    if (t_len < n) throw ValidationError("feasible_window: motion shorter than part count");
    FeasibleWindow w;
    if (n == 1) {
        w.l = 0.0;
        w.r = double(t_len);
    } else {
        double T = double(t_len);
        double inv_log = 1.0 / std::log(double(n) + 2.0);
        w.l = double(i) / double(n - 1) * (T / double(n)) * (double(n) - 1.0 - inv_log);
        w.r = w.l + (T / double(n)) * (1.0 + inv_log);
    }
    w.lo = int(std::floor(w.l));
    w.hi = int(std::ceil(w.r));
    if (w.hi > t_len) w.hi = t_len;
    if (w.lo < 0) w.lo = 0;
    if (w.hi - w.lo < 1) throw ValidationError("feasible_window: window shorter than one frame");
    return w;
}

struct AlignerConfig {
    int d_text = 64;
    int hidden = 64;
    int heads = 4;
    int n_kp = 22;
    double sigma_min = 0.5; // frames
    int max_frames = 1024;
    uint64_t seed = 1;

    nlohmann::json to_json() const {
        return nlohmann::json{{"d_text", d_text},       {"hidden", hidden},         {"heads", heads},
                              {"n_kp", n_kp},           {"sigma_min", sigma_min},   {"max_frames", max_frames},
                              {"seed", seed}};
    }
    static AlignerConfig from_json(const nlohmann::json& j) {
        AlignerConfig c;
        c.d_text = j.at("d_text").get<int>();
        c.hidden = j.at("hidden").get<int>();
        c.heads = j.at("heads").get<int>();
        c.n_kp = j.at("n_kp").get<int>();
        c.sigma_min = j.at("sigma_min").get<double>();
        c.max_frames = j.at("max_frames").get<int>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};

template <typename T>
struct AlignerModelT {
    AlignerConfig cfg;
    text::TextEmbedderT<T> embedder;
    nn::LinearT<T> proj1, proj2;                       // 2-layer MLP into KP space
    nn::LayerNormT<T> ln_q, ln_h, ln_heads;            // domain model norms
    nn::MultiHeadAttentionT<T> cross;                  // query = text feature, keys/values = window positions
    nn::FeedForwardT<T> ffn;
    nn::LinearT<T> mu_head, sigma_head;
    nn::TensorPtr<T> pe;                               // fixed sinusoidal table, not trained
    nn::ParamSetT<T> params;

    AlignerModelT() = default;
    explicit AlignerModelT(const AlignerConfig& config) : cfg(config), embedder(config.d_text, config.seed) {
        Rng rng(derive_seed(cfg.seed, 0xa11));
        params.merge(embedder.params, "");
        proj1 = nn::LinearT<T>(cfg.d_text, cfg.hidden, rng, params, "projector.fc1");
        proj2 = nn::LinearT<T>(cfg.hidden, cfg.n_kp, rng, params, "projector.fc2");
        ln_q = nn::LayerNormT<T>(cfg.d_text, params, "domain.ln_q");
        ln_h = nn::LayerNormT<T>(cfg.d_text, params, "domain.ln_h");
        ln_heads = nn::LayerNormT<T>(cfg.d_text, params, "domain.ln_heads");
        cross = nn::MultiHeadAttentionT<T>(cfg.d_text, cfg.heads, rng, params, "domain.cross");
        ffn = nn::FeedForwardT<T>(cfg.d_text, cfg.d_text * 2, rng, params, "domain.ffn");
        mu_head = nn::LinearT<T>(cfg.d_text, 1, rng, params, "domain.mu");
        sigma_head = nn::LinearT<T>(cfg.d_text, 1, rng, params, "domain.sigma");
        // neutral head start: mu at the window center, sigma a few frames
        std::fill(mu_head.w->v.begin(), mu_head.w->v.end(), T(0));
        mu_head.b->v[0] = T(0);
        std::fill(sigma_head.w->v.begin(), sigma_head.w->v.end(), T(0));
        sigma_head.b->v[0] = T(2);
        pe = nn::sinusoidal_positions<T>(cfg.max_frames, cfg.d_text);
    }

    // Text feature -> KP-space vector in (-1, 1)^n_kp.
    nn::TensorPtr<T> project(nn::TapeT<T>& tape, nn::TensorPtr<T> feat) const {
        return tape.tanh(proj2.forward(tape, nn::silu(tape, proj1.forward(tape, feat))));
    }

    struct Domain {
        nn::TensorPtr<T> mu, sigma; // [1]
        nn::TensorPtr<T> weights;   // [1, window frames], sums to 1
        FeasibleWindow window;
    };

    // Gaussian domain weights over the window's integer frames.
    Domain domain_weights(nn::TapeT<T>& tape, nn::TensorPtr<T> feat, const FeasibleWindow& win) const {
        if (win.frames() < 1) throw ValidationError("domain_weights: window shorter than one frame");
        if (win.hi > cfg.max_frames) throw ValidationError("domain_weights: window exceeds position table");
        auto keys = tape.slice_rows(pe, win.lo, win.hi); // [W, d], constant
        auto q = tape.add(feat, cross.forward(tape, ln_q.forward(tape, feat), keys));
        q = tape.add(q, ffn.forward(tape, ln_h.forward(tape, q)));
        auto head_in = ln_heads.forward(tape, q);

        double span = win.r - win.l;
        auto mu = tape.add_const(tape.scale(tape.sigmoid(mu_head.forward(tape, head_in)), T(span)), T(win.l));
        auto sigma =
            tape.clamp_max(tape.add_const(tape.softplus(sigma_head.forward(tape, head_in)), T(cfg.sigma_min)),
                           T(std::max(double(cfg.sigma_min), span)));

        int W = win.frames();
        std::vector<T> frames(static_cast<size_t>(W));
        for (int j = 0; j < W; ++j) frames[size_t(j)] = T(win.lo + j);
        auto jrow = tape.constant({1, W}, frames);
        auto ones = tape.constant({1, W}, std::vector<T>(size_t(W), T(1)));
        auto diff = tape.sub(jrow, tape.scale_by(ones, mu));
        auto inv_two_s2 = tape.reciprocal(tape.scale(tape.mul(sigma, sigma), T(2)));
        auto logits = tape.scale(tape.scale_by(tape.mul(diff, diff), inv_two_s2), T(-1));
        auto unnorm = tape.exp(logits);
        auto weights = tape.scale_by(unnorm, tape.reciprocal(tape.sum(unnorm)));

        return Domain{mu, sigma, weights, win};
    }

    // Omega_i = sum_j w_j KP[j, :], a [1, n_kp] row.
    nn::TensorPtr<T> weighted_kp(nn::TapeT<T>& tape, const Domain& d, nn::TensorPtr<T> kp_seq) const {
        if (kp_seq->shape.size() != 2 || kp_seq->shape[1] != cfg.n_kp)
            throw ValidationError("weighted_kp: KP tensor must be [T, n_kp]");
        if (d.window.hi > kp_seq->shape[0])
            throw ValidationError("weighted_kp: KP sequence does not cover the window");
        return tape.matmul(d.weights, tape.slice_rows(kp_seq, d.window.lo, d.window.hi));
    }

    // sum_i || Omega_i - projector(T_i) ||^2 over the part features.
    nn::TensorPtr<T> align_loss(nn::TapeT<T>& tape, const std::vector<nn::TensorPtr<T>>& part_feats,
                                nn::TensorPtr<T> kp_seq, int t_len) const {
        if (part_feats.empty()) throw ValidationError("align_loss: at least one part required");
        nn::TensorPtr<T> total;
        int n = int(part_feats.size());
        for (int i = 0; i < n; ++i) {
            auto win = feasible_window(i, n, t_len);
            auto dom = domain_weights(tape, part_feats[size_t(i)], win);
            auto omega = weighted_kp(tape, dom, kp_seq);
            auto res = tape.sub(omega, project(tape, part_feats[size_t(i)]));
            auto sq = tape.sum(tape.mul(res, res));
            total = total ? tape.add(total, sq) : sq;
        }
        return total;
    }
};

using AlignerModel = AlignerModelT<float>;

// Frozen per-part alignment data for one prompt: window, domain weights, and
// the projected text target. Weights depend only on the text and the window,
// so they can be computed once and reused against any motion of length T_len.
struct PartTarget {
    FeasibleWindow window;
    std::vector<float> weights; // length window.frames(), sums to 1
    std::vector<float> target;  // projector(T_i), length n_kp
    double mu = 0.0, sigma = 0.0;
};

inline std::vector<PartTarget> part_targets(const AlignerModel& model, const text::DecomposedPrompt& prompt,
                                            int t_len) {
    prompt.validate();
    nn::TapeT<float> tape(false);
    auto feats = model.embedder.embed_parts(tape, prompt);
    std::vector<PartTarget> out;
    int n = int(feats.size());
    for (int i = 0; i < n; ++i) {
        auto win = feasible_window(i, n, t_len);
        auto dom = model.domain_weights(tape, feats[size_t(i)], win);
        auto proj = model.project(tape, feats[size_t(i)]);
        PartTarget pt;
        pt.window = win;
        pt.weights.assign(dom.weights->v.begin(), dom.weights->v.end());
        pt.target.assign(proj->v.begin(), proj->v.end());
        pt.mu = double(dom.mu->v[0]);
        pt.sigma = double(dom.sigma->v[0]);
        out.push_back(std::move(pt));
    }
    return out;
}

// Omega_i of a KP sequence under fixed part weights.
inline std::vector<float> weighted_kp_values(const PartTarget& pt, const kp::KpSequence& seq) {
    if (pt.window.hi > seq.t_len) throw ValidationError("weighted_kp: KP sequence does not cover the window");
    std::vector<float> omega(size_t(seq.n_kp), 0.0f);
    for (int j = 0; j < pt.window.frames(); ++j) {
        float w = pt.weights[size_t(j)];
        for (int p = 0; p < seq.n_kp; ++p) omega[size_t(p)] += w * seq.at(pt.window.lo + j, p);
    }
    return omega;
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct SimilarityReport {
    std::vector<double> per_part; // cosine d_i per sub-sentence
    double mean = 0.0;
};

// Cosine similarity between projected text features and the motion's
// weighted KP, per part and averaged.
inline SimilarityReport text_motion_similarity(const AlignerModel& model, const text::DecomposedPrompt& prompt,
                                               const motion::MotionSequence& m, const kp::KpCatalog& catalog) {
    auto seq = kp::extract_smooth(m, catalog, 1.0);
    auto targets = part_targets(model, prompt, m.t_len);
    SimilarityReport rep;
    double acc = 0.0;
    for (const auto& pt : targets) {
        double d = cosine(weighted_kp_values(pt, seq), pt.target);
        rep.per_part.push_back(d);
        acc += d;
    }
    rep.mean = rep.per_part.empty() ? 0.0 : acc / double(rep.per_part.size());
    return rep;
}

// ---- training ----

struct AlignerTrainConfig {
    int epochs = 200;
    int batch = 8;
    double lr = 1e-3;
    double tau = 1.0;        // smooth-KP temperature for training targets
    double head_decay = 1e-3; // per-step shrink of the mu/sigma heads; keeps
                              // mu near the window center absent real signal
    bool full_align = false;  // single window over the undecomposed text
    uint64_t seed = 7;

    nlohmann::json to_json() const {
        return nlohmann::json{{"epochs", epochs}, {"batch", batch},           {"lr", lr},
                              {"tau", tau},       {"head_decay", head_decay}, {"full_align", full_align},
                              {"seed", seed}};
    }
};

struct AlignerTrainStats {
    double initial_loss = 0.0; // mean per-record loss before training
    double final_loss = 0.0;
    std::vector<double> epoch_loss;
};

inline text::DecomposedPrompt training_prompt(const motion::DatasetRecord& rec, bool full_align) {
    if (!full_align) return text::script_to_ground_truth(rec.script);
    text::DecomposedPrompt p;
    p.full_text = rec.full_text;
    p.parts = {rec.full_text};
    p.source = text::PromptSource::ground_truth;
    return p;
}

// Minimizes the align loss over the dataset, co-training projector, domain
// model, and embedder. Deterministic for a fixed seed. Aborts with the first
// non-finite parameter name if the loss diverges.
inline AlignerTrainStats train_aligner(AlignerModel& model, const std::vector<motion::DatasetRecord>& records,
                                       const kp::KpCatalog& catalog, const AlignerTrainConfig& cfg,
                                       const std::function<void(int, double)>& on_epoch = nullptr) {
    if (records.empty()) throw ValidationError("train_aligner: empty dataset");
    struct Item {
        std::vector<float> kp_values;
        int t_len = 0;
        text::DecomposedPrompt prompt;
    };
    std::vector<Item> items(records.size());
    parallel_for(records.size(), [&](size_t i) {
        auto seq = kp::extract_smooth(records[i].motion, catalog, cfg.tau);
        items[i] = {std::move(seq.values), records[i].motion.t_len, training_prompt(records[i], cfg.full_align)};
    });

    auto record_loss = [&](const Item& it, bool record_grads) {
        nn::TapeT<float> tape(record_grads);
        auto kp_node = tape.constant({it.t_len, model.cfg.n_kp}, it.kp_values);
        auto feats = model.embedder.embed_parts(tape, it.prompt);
        auto loss = model.align_loss(tape, feats, kp_node, it.t_len);
        double val = double(loss->v[0]);
        if (record_grads) tape.backward(loss);
        return val;
    };

    AlignerTrainStats stats;
    for (const auto& it : items) stats.initial_loss += record_loss(it, false);
    stats.initial_loss /= double(items.size());

    nn::AdamT<float> opt(cfg.lr);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5a5));
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t done = 0;
        while (done < order.size()) {
            size_t take = std::min(size_t(cfg.batch), order.size() - done);
            model.params.zero_grad();
            for (size_t b = 0; b < take; ++b) epoch_loss += record_loss(items[order[done + b]], true);
            // average the accumulated batch gradient
            for (auto& [name, p] : model.params.items)
                for (auto& g : p->g) g /= float(take);
            try {
                opt.step(model.params);
            } catch (const ValidationError&) {
                std::string bad = nn::first_non_finite(model.params);
                throw ValidationError("train_aligner: diverged; first non-finite parameter: " +
                                      (bad.empty() ? std::string("<gradient>") : bad));
            }
            if (cfg.head_decay > 0.0) {
                float keep = float(1.0 - cfg.head_decay);
                for (auto* head : {&model.mu_head, &model.sigma_head}) {
                    for (auto& v : head->w->v) v *= keep;
                    for (auto& v : head->b->v) v *= keep;
                }
            }
            done += take;
        }
        epoch_loss /= double(items.size());
        if (!std::isfinite(epoch_loss)) {
            std::string bad = nn::first_non_finite(model.params);
            throw ValidationError("train_aligner: diverged; first non-finite parameter: " +
                                  (bad.empty() ? std::string("<loss>") : bad));
        }
        stats.epoch_loss.push_back(epoch_loss);
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    stats.final_loss = 0.0;
    for (const auto& it : items) stats.final_loss += record_loss(it, false);
    stats.final_loss /= double(items.size());
    return stats;
}

// Fraction of (record, part) pairs whose argmax-weight frame falls inside the
// ground-truth segment of that part.
inline double localization_rate(const AlignerModel& model, const std::vector<motion::DatasetRecord>& records,
                                bool full_align = false) {
    long hits = 0, total = 0;
    for (const auto& rec : records) {
        auto prompt = training_prompt(rec, full_align);
        auto targets = part_targets(model, prompt, rec.motion.t_len);
        for (size_t i = 0; i < targets.size(); ++i) {
            const auto& pt = targets[i];
            int arg = 0;
            for (int j = 1; j < pt.window.frames(); ++j)
                if (pt.weights[size_t(j)] > pt.weights[size_t(arg)]) arg = j;
            int frame = pt.window.lo + arg;
            auto [s, e] = full_align ? std::pair<int, int>{0, rec.motion.t_len} : rec.segment_bounds[i];
            ++total;
            hits += (frame >= s && frame < e) ? 1 : 0;
        }
    }
    return total ? double(hits) / double(total) : 0.0;
}

// ---- checkpointing ----

inline void save_aligner(const std::string& path, const AlignerModel& model, const nlohmann::json& extra = {}) {
    nlohmann::json meta{{"kind", "aligner"},
                        {"config", model.cfg.to_json()},
                        {"vocabulary_version", text::kVocabularyVersion}};
    if (!extra.is_null()) meta["extra"] = extra;
    ckpt::save(path, model.params, meta);
}

inline AlignerModel load_aligner(const std::string& path) {
    auto loaded = ckpt::load(path);
    if (loaded.meta.at("kind").get<std::string>() != "aligner")
        throw ValidationError("checkpoint at " + path + " is not an aligner");
    AlignerModel model(AlignerConfig::from_json(loaded.meta.at("config")));
    ckpt::restore(loaded, model.params);
    return model;
}

}  // namespace kineta::align
