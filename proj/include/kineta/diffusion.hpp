#pragma once

// DDPM machinery and the motion denoisers.
//
// The denoiser predicts the clean motion x0 from (x_t, t, condition). Two
// backbones: an encoder that prepends a single condition token z_tk to the
// frame tokens, and a decoder that cross-attends over per-part text memory
// tokens plus per-part guide tokens (difference between projected text and
// the current motion's weighted KP, or a learned mask token when inactive).
//
// Training draws (t, noise, conditioning coins) from a per-item stream seeded
// by the global item counter, so results are independent of how a batch is
// split across replicas. Replicas are full model copies with private gradient
// buffers; their contributions are reduced in fixed order, which keeps
// training bit-deterministic for a fixed replica count.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kineta/align.hpp"
#include "kineta/checkpoint.hpp"
#include "kineta/core.hpp"
#include "kineta/kp.hpp"
#include "kineta/layers.hpp"
#include "kineta/motion.hpp"
#include "kineta/tensor.hpp"
#include "kineta/text.hpp"

namespace kineta::diffusion {

// ---- schedule ----

enum class ScheduleKind { linear, cosine };

inline const char* schedule_kind_name(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

struct DiffusionSchedule {
    int t_steps = 0;
    ScheduleKind kind = ScheduleKind::linear;
    std::vector<double> beta;          // [0..T], beta[0] unused
    std::vector<double> alpha;         // 1 - beta
    std::vector<double> alpha_bar;     // [0..T], alpha_bar[0] = 1
    std::vector<double> posterior_var; // beta_t * (1 - abar_{t-1}) / (1 - abar_t)

    nlohmann::json to_json() const {
        return nlohmann::json{{"t_steps", t_steps}, {"kind", schedule_kind_name(kind)}};
    }
};

// Derive alpha / alpha_bar / posterior tables from betas indexed 1..T.
inline DiffusionSchedule make_schedule_from_betas(std::vector<double> betas_1_to_T,
                                                  ScheduleKind kind = ScheduleKind::linear) {
    if (betas_1_to_T.empty()) throw ValidationError("schedule: at least one beta required");
    DiffusionSchedule s;
    s.t_steps = int(betas_1_to_T.size());
    s.kind = kind;
    s.beta.assign(size_t(s.t_steps) + 1, 0.0);
    s.alpha.assign(size_t(s.t_steps) + 1, 1.0);
    s.alpha_bar.assign(size_t(s.t_steps) + 1, 1.0);
    s.posterior_var.assign(size_t(s.t_steps) + 1, 0.0);
    for (int t = 1; t <= s.t_steps; ++t) {
        double b = betas_1_to_T[size_t(t) - 1];
        if (!(b > 0.0 && b < 1.0)) throw ValidationError("schedule: betas must lie in (0, 1)");
        s.beta[size_t(t)] = b;
        s.alpha[size_t(t)] = 1.0 - b;
        s.alpha_bar[size_t(t)] = s.alpha_bar[size_t(t) - 1] * s.alpha[size_t(t)];
        s.posterior_var[size_t(t)] =
            b * (1.0 - s.alpha_bar[size_t(t) - 1]) / (1.0 - s.alpha_bar[size_t(t)]);
    }
    return s;
}

inline DiffusionSchedule make_schedule(int t_steps, ScheduleKind kind) {
    if (t_steps < 1) throw ValidationError("schedule: t_steps must be >= 1");
    DiffusionSchedule s;
    s.t_steps = t_steps;
    s.kind = kind;
    s.beta.assign(size_t(t_steps) + 1, 0.0);
    s.alpha.assign(size_t(t_steps) + 1, 1.0);
    s.alpha_bar.assign(size_t(t_steps) + 1, 1.0);
    s.posterior_var.assign(size_t(t_steps) + 1, 0.0);
    if (kind == ScheduleKind::linear) {
        double b0 = 1e-4, b1 = 0.02;
        for (int t = 1; t <= t_steps; ++t)
            s.beta[size_t(t)] = t_steps == 1 ? b0 : b0 + (b1 - b0) * double(t - 1) / double(t_steps - 1);
    } else {
        double off = 0.008;
        auto f = [&](double t) {
            double x = (t / double(t_steps) + off) / (1.0 + off) * 3.14159265358979323846 / 2.0;
            return std::cos(x) * std::cos(x);
        };
        double f0 = f(0.0);
        double prev = 1.0;
        for (int t = 1; t <= t_steps; ++t) {
            double ab = f(double(t)) / f0;
            double b = 1.0 - ab / prev;
            s.beta[size_t(t)] = std::min(b, 0.999);
            prev = ab;
        }
    }
    return make_schedule_from_betas(std::vector<double>(s.beta.begin() + 1, s.beta.end()), kind);
}

inline DiffusionSchedule schedule_from_json(const nlohmann::json& j) {
    std::string k = j.at("kind").get<std::string>();
    if (k != "linear" && k != "cosine") throw ValidationError("schedule: unknown kind '" + k + "'");
    return make_schedule(j.at("t_steps").get<int>(), k == "linear" ? ScheduleKind::linear : ScheduleKind::cosine);
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline std::vector<float> q_sample(const std::vector<float>& x0, int t, const std::vector<float>& eps,
                                   const DiffusionSchedule& s) {
    if (t < 1 || t > s.t_steps) throw ValidationError("q_sample: t out of range");
    if (eps.size() != x0.size()) throw ValidationError("q_sample: noise shape mismatch");
    double a = std::sqrt(s.alpha_bar[size_t(t)]);
    double b = std::sqrt(1.0 - s.alpha_bar[size_t(t)]);
    std::vector<float> out(x0.size());
    for (size_t i = 0; i < x0.size(); ++i) out[i] = float(a * double(x0[i]) + b * double(eps[i]));
    return out;
}

// Posterior step from (x_t, predicted x0) to x_{t-1}; noiseless at t = 1.
inline std::vector<float> p_step(const std::vector<float>& x_t, const std::vector<float>& x0_hat, int t,
                                 const DiffusionSchedule& s, Rng& rng) {
    if (t < 1 || t > s.t_steps) throw ValidationError("p_step: t out of range");
    if (x0_hat.size() != x_t.size()) throw ValidationError("p_step: shape mismatch");
    double abar_t = s.alpha_bar[size_t(t)];
    double abar_prev = s.alpha_bar[size_t(t) - 1];
    double c0 = std::sqrt(abar_prev) * s.beta[size_t(t)] / (1.0 - abar_t);
    double c1 = std::sqrt(s.alpha[size_t(t)]) * (1.0 - abar_prev) / (1.0 - abar_t);
    double sv = t > 1 ? std::sqrt(s.posterior_var[size_t(t)]) : 0.0;
    std::vector<float> out(x_t.size());
    for (size_t i = 0; i < x_t.size(); ++i) {
        double mu = c0 * double(x0_hat[i]) + c1 * double(x_t[i]);
        double z = t > 1 ? rng.normal() : 0.0;
        out[i] = float(mu + sv * z);
    }
    return out;
}

// (1 + w) cond - w uncond
inline std::vector<float> cfg_combine(const std::vector<float>& cond, const std::vector<float>& uncond, double w) {
    if (cond.size() != uncond.size()) throw ValidationError("cfg_combine: shape mismatch");
    std::vector<float> out(cond.size());
    for (size_t i = 0; i < cond.size(); ++i)
        out[i] = float((1.0 + w) * double(cond[i]) - w * double(uncond[i]));
    return out;
}

// ---- conditioning ----

struct Condition {
    std::vector<std::vector<float>> part_feats; // n x d_text, decomposed order
    std::vector<float> pooled;                  // d_text, embedding of the undecomposed text

    size_t n_parts() const { return part_feats.size(); }
};

// The pooled vector is the mean of the per-part embeddings: the embedder is
// trained on sub-sentences, so pooling over parts stays on-distribution.
inline Condition make_condition(const align::AlignerModel& aligner, const text::DecomposedPrompt& prompt) {
    Condition c;
    auto parts = aligner.embedder.embed_values(prompt);
    c.part_feats = parts.vectors;
    c.pooled.assign(size_t(parts.d_text), 0.0f);
    for (const auto& row : c.part_feats)
        for (size_t j = 0; j < c.pooled.size(); ++j) c.pooled[j] += row[j];
    for (auto& v : c.pooled) v /= float(c.part_feats.size());
    return c;
}

struct GuideTokens {
    std::vector<std::vector<float>> values; // n x n_kp difference vectors
    std::vector<bool> active;               // inactive parts contribute the mask token

    static GuideTokens all_masked(size_t n) {
        GuideTokens g;
        g.values.assign(n, {});
        g.active.assign(n, false);
        return g;
    }
    bool any_active() const {
        for (bool a : active)
            if (a) return true;
        return false;
    }
};

// g_i = projector(T_i) - Omega_i(x0) per part, all active.
inline GuideTokens compute_guide(const motion::MotionSequence& m, const std::vector<align::PartTarget>& targets,
                                 const kp::KpCatalog& catalog) {
    auto seq = kp::extract_smooth(m, catalog, 1.0);
    GuideTokens g;
    for (const auto& pt : targets) {
        auto omega = align::weighted_kp_values(pt, seq);
        std::vector<float> diff(omega.size());
        for (size_t i = 0; i < omega.size(); ++i) diff[i] = pt.target[i] - omega[i];
        g.values.push_back(std::move(diff));
        g.active.push_back(true);
    }
    return g;
}

inline double mean_guide_norm(const GuideTokens& g) {
    if (g.values.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& v : g.values) {
        double n2 = 0.0;
        for (float x : v) n2 += double(x) * double(x);
        acc += std::sqrt(n2);
    }
    return acc / double(g.values.size());
}

// ---- denoiser ----

enum class Backbone { encoder, decoder };

inline const char* backbone_name(Backbone b) { return b == Backbone::encoder ? "encoder" : "decoder"; }

struct DenoiserConfig {
    Backbone backbone = Backbone::encoder;
    int input_dim = 15; // n_joints * 3
    int width = 64;
    int depth = 4;
    int heads = 4;
    int d_text = 64;
    int n_kp = 22;
    int t_steps = 100;
    int max_frames = 1024;
    uint64_t seed = 1;

    nlohmann::json to_json() const {
        return nlohmann::json{{"backbone", backbone_name(backbone)},
                              {"input_dim", input_dim},
                              {"width", width},
                              {"depth", depth},
                              {"heads", heads},
                              {"d_text", d_text},
                              {"n_kp", n_kp},
                              {"t_steps", t_steps},
                              {"max_frames", max_frames},
                              {"seed", seed}};
    }
    static DenoiserConfig from_json(const nlohmann::json& j) {
        DenoiserConfig c;
        std::string b = j.at("backbone").get<std::string>();
        if (b == "encoder")
            c.backbone = Backbone::encoder;
        else if (b == "decoder")
            c.backbone = Backbone::decoder;
        else
            throw ValidationError("denoiser: unknown backbone '" + b + "'");
        c.input_dim = j.at("input_dim").get<int>();
        c.width = j.at("width").get<int>();
        c.depth = j.at("depth").get<int>();
        c.heads = j.at("heads").get<int>();
        c.d_text = j.at("d_text").get<int>();
        c.n_kp = j.at("n_kp").get<int>();
        c.t_steps = j.at("t_steps").get<int>();
        c.max_frames = j.at("max_frames").get<int>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};

template <typename T>
struct DenoiserT {
    DenoiserConfig cfg;
    nn::ParamSetT<T> params;
    nn::LinearT<T> input_proj, out_proj;
    nn::EmbeddingT<T> t_embed;
    nn::TensorPtr<T> pe;
    std::vector<nn::TransformerBlockT<T>> blocks;
    // encoder conditioning
    nn::LinearT<T> cond_proj;
    nn::TensorPtr<T> null_cond; // learned unconditional token, [1, d_text]
    // decoder conditioning
    nn::LinearT<T> text_mem_proj, guide_proj;
    nn::TensorPtr<T> mask_token, null_mem; // [1, width]
    // per-dimension normalization of the motion representation; the reverse
    // process runs in normalized space. Fixed from data, not trained.
    std::vector<float> norm_mean, norm_std;

    DenoiserT() = default;
    explicit DenoiserT(const DenoiserConfig& config) : cfg(config) {
        Rng rng(derive_seed(cfg.seed, 0xd1f));
        input_proj = nn::LinearT<T>(cfg.input_dim, cfg.width, rng, params, "input_proj");
        out_proj = nn::LinearT<T>(cfg.width, cfg.input_dim, rng, params, "out_proj");
        t_embed = nn::EmbeddingT<T>(cfg.t_steps + 1, cfg.width, rng, params, "t_embed");
        if (cfg.backbone == Backbone::encoder) {
            cond_proj = nn::LinearT<T>(cfg.d_text, cfg.width, rng, params, "cond_proj");
            null_cond = std::make_shared<nn::TensorT<T>>(std::vector<int>{1, cfg.d_text});
            nn::init_normal(null_cond, rng, 0.02);
            params.add("null_cond", null_cond);
        } else {
            text_mem_proj = nn::LinearT<T>(cfg.d_text, cfg.width, rng, params, "text_mem_proj");
            guide_proj = nn::LinearT<T>(cfg.n_kp, cfg.width, rng, params, "guide_proj");
            mask_token = std::make_shared<nn::TensorT<T>>(std::vector<int>{1, cfg.width});
            null_mem = std::make_shared<nn::TensorT<T>>(std::vector<int>{1, cfg.width});
            nn::init_normal(mask_token, rng, 0.02);
            nn::init_normal(null_mem, rng, 0.02);
            params.add("mask_token", mask_token);
            params.add("null_mem", null_mem);
        }
        for (int d = 0; d < cfg.depth; ++d)
            blocks.emplace_back(cfg.width, cfg.heads, cfg.backbone == Backbone::decoder, rng, params,
                                "block" + std::to_string(d));
        pe = nn::sinusoidal_positions<T>(cfg.max_frames, cfg.width);
    }

    bool has_norm() const { return !norm_mean.empty(); }

    std::vector<float> normalize_frames(const std::vector<float>& x) const {
        if (!has_norm()) return x;
        std::vector<float> z(x.size());
        size_t d = norm_mean.size();
        for (size_t i = 0; i < x.size(); ++i)
            z[i] = (x[i] - norm_mean[i % d]) / norm_std[i % d];
        return z;
    }

    std::vector<float> denormalize_frames(const std::vector<float>& z) const {
        if (!has_norm()) return z;
        std::vector<float> x(z.size());
        size_t d = norm_mean.size();
        for (size_t i = 0; i < z.size(); ++i) x[i] = z[i] * norm_std[i % d] + norm_mean[i % d];
        return x;
    }

    // z [T, D] -> positions, as a graph op (gradients flow through).
    nn::TensorPtr<T> denormalize_graph(nn::TapeT<T>& tape, nn::TensorPtr<T> z) const {
        if (!has_norm()) return z;
        int t_len = z->shape[0];
        auto std_row = tape.constant({1, cfg.input_dim}, std::vector<T>(norm_std.begin(), norm_std.end()));
        auto mean_row = tape.constant({1, cfg.input_dim}, std::vector<T>(norm_mean.begin(), norm_mean.end()));
        return tape.add(tape.mul(z, tape.broadcast_row(std_row, t_len)), tape.broadcast_row(mean_row, t_len));
    }

    // x_t [T_len, input_dim] -> x0_hat, same shape, in normalized space.
    // condition == nullptr is the unconditional path. guide is decoder-only;
    // absent guide and all-masked guide take the identical mask-token path.
    nn::TensorPtr<T> predict_clean(nn::TapeT<T>& tape, nn::TensorPtr<T> x_t, int t, const Condition* condition,
                                   const GuideTokens* guide = nullptr) const {
        if (x_t->shape.size() != 2 || x_t->shape[1] != cfg.input_dim)
            throw ValidationError("predict_clean: motion tensor must be [T, " + std::to_string(cfg.input_dim) + "]");
        if (t < 1 || t > cfg.t_steps) throw ValidationError("predict_clean: timestep out of range");
        int t_len = x_t->shape[0];
        if (t_len > cfg.max_frames) throw ValidationError("predict_clean: motion exceeds position table");
        if (guide && cfg.backbone == Backbone::encoder)
            throw ValidationError("predict_clean: guide tokens are unsupported on the encoder backbone");

        auto temb = t_embed.forward(tape, {t}); // [1, width]
        auto frames = tape.add(input_proj.forward(tape, x_t), tape.slice_rows(pe, 0, t_len));

        nn::TensorPtr<T> out_tokens;
        if (cfg.backbone == Backbone::encoder) {
            nn::TensorPtr<T> text_tok;
            if (condition) {
                text_tok = tape.constant({1, cfg.d_text}, std::vector<T>(condition->pooled.begin(),
                                                                         condition->pooled.end()));
            } else {
                text_tok = null_cond;
            }
            auto z_tk = tape.add(cond_proj.forward(tape, text_tok), temb);
            auto seq = tape.concat_rows({z_tk, frames});
            for (const auto& blk : blocks) seq = blk.forward(tape, seq);
            out_tokens = tape.slice_rows(seq, 1, t_len + 1);
        } else {
            auto seq = tape.add(frames, tape.broadcast_row(temb, t_len));
            auto memory = build_memory(tape, condition, guide);
            for (const auto& blk : blocks) seq = blk.forward(tape, seq, memory);
            out_tokens = seq;
        }
        return out_proj.forward(tape, out_tokens);
    }

  private:
    nn::TensorPtr<T> build_memory(nn::TapeT<T>& tape, const Condition* condition, const GuideTokens* guide) const {
        std::vector<nn::TensorPtr<T>> rows;
        if (!condition) {
            rows.push_back(tape.add(null_mem, tape.slice_rows(pe, 0, 1)));
            rows.push_back(tape.add(mask_token, tape.slice_rows(pe, 0, 1)));
            return tape.concat_rows(rows);
        }
        int n = int(condition->n_parts());
        if (n < 1) throw ValidationError("predict_clean: decoder condition requires at least one part");
        if (guide && int(guide->active.size()) != n)
            throw ValidationError("predict_clean: guide part count disagrees with condition");
        for (int i = 0; i < n; ++i) {
            auto feat = tape.constant({1, cfg.d_text}, std::vector<T>(condition->part_feats[size_t(i)].begin(),
                                                                      condition->part_feats[size_t(i)].end()));
            rows.push_back(tape.add(text_mem_proj.forward(tape, feat), tape.slice_rows(pe, i, i + 1)));
        }
        for (int i = 0; i < n; ++i) {
            nn::TensorPtr<T> row;
            if (guide && guide->active[size_t(i)]) {
                auto g = tape.constant({1, cfg.n_kp}, std::vector<T>(guide->values[size_t(i)].begin(),
                                                                     guide->values[size_t(i)].end()));
                row = guide_proj.forward(tape, g);
            } else {
                row = mask_token;
            }
            rows.push_back(tape.add(row, tape.slice_rows(pe, i, i + 1)));
        }
        return tape.concat_rows(rows);
    }
};

using Denoiser = DenoiserT<float>;

// ---- training ----

struct TrainConfig {
    int epochs = 200;
    int batch = 32;
    double lr = 3e-4;
    double lambda_kp = 0.0001;
    double p_uncond = 0.1;
    double p_mask = 0.5;
    double tau = 1.0;
    bool use_guide = false; // decoder: feed guide tokens from a detached preliminary prediction
    // Guides participate only at timesteps t <= guide_t_fraction * T: guided
    // denoising at inference starts from the re-diffusion fractions, and the
    // preliminary prediction is only informative at moderate noise levels.
    double guide_t_fraction = 0.5;
    int replicas = 2;       // deterministic data-parallel width (part of the run configuration)
    uint64_t seed = 1;

    nlohmann::json to_json() const {
        return nlohmann::json{{"epochs", epochs},   {"batch", batch},       {"lr", lr},
                              {"lambda_kp", lambda_kp}, {"p_uncond", p_uncond}, {"p_mask", p_mask},
                              {"tau", tau},         {"use_guide", use_guide},
                              {"guide_t_fraction", guide_t_fraction}, {"replicas", replicas},
                              {"seed", seed}};
    }
};

struct TrainStats {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_recon;  // mean ||x0_hat - x0||^2 / size
    std::vector<double> epoch_align;  // mean align term (unscaled)
};

namespace detail {

struct TrainItem {
    std::vector<float> x0;
    int t_len = 0;
    Condition cond;
    std::vector<align::PartTarget> targets; // empty when the aligner is unused
};

}  // namespace diffusion::detail

inline TrainStats train(Denoiser& model, const std::vector<motion::DatasetRecord>& records,
                        const align::AlignerModel* aligner, const kp::KpCatalog& catalog,
                        const DiffusionSchedule& sched, const TrainConfig& cfg,
                        const std::function<void(int, double)>& on_epoch = nullptr) {
    if (records.empty()) throw ValidationError("train: empty dataset");
    if (sched.t_steps != model.cfg.t_steps) throw ValidationError("train: schedule and model t_steps disagree");
    bool needs_aligner = cfg.lambda_kp > 0.0 || cfg.use_guide;
    if (needs_aligner && !aligner) throw ValidationError("train: this configuration requires a trained aligner");
    if (cfg.use_guide && model.cfg.backbone != Backbone::decoder)
        throw ValidationError("train: guide tokens require the decoder backbone");
    if (cfg.replicas < 1) throw ValidationError("train: replicas must be >= 1");

    const double fps = records[0].motion.fps;

    if (!model.has_norm()) {
        // per-dimension statistics over every training frame
        size_t d = size_t(model.cfg.input_dim);
        std::vector<double> mean(d, 0.0), var(d, 0.0);
        size_t frames = 0;
        for (const auto& rec : records) {
            frames += size_t(rec.motion.t_len);
            for (size_t i = 0; i < rec.motion.frames.size(); ++i) mean[i % d] += double(rec.motion.frames[i]);
        }
        for (auto& m : mean) m /= double(frames);
        for (const auto& rec : records)
            for (size_t i = 0; i < rec.motion.frames.size(); ++i) {
                double diff = double(rec.motion.frames[i]) - mean[i % d];
                var[i % d] += diff * diff;
            }
        model.norm_mean.resize(d);
        model.norm_std.resize(d);
        for (size_t i = 0; i < d; ++i) {
            model.norm_mean[i] = float(mean[i]);
            model.norm_std[i] = float(std::max(std::sqrt(var[i] / double(frames)), 1e-3));
        }
    }

    std::vector<detail::TrainItem> items(records.size());
    parallel_for(records.size(), [&](size_t i) {
        const auto& rec = records[i];
        detail::TrainItem it;
        it.x0 = model.normalize_frames(
            std::vector<float>(rec.motion.frames.begin(), rec.motion.frames.end()));
        it.t_len = rec.motion.t_len;
        auto prompt = text::script_to_ground_truth(rec.script);
        if (aligner) {
            it.cond = make_condition(*aligner, prompt);
            it.targets = align::part_targets(*aligner, prompt, it.t_len);
        } else {
            // no aligner: embeddings still come from a deterministic embedder;
            // callers without an aligner never reach here (needs_aligner), so
            // this branch only serves lambda_kp == 0 with an aligner supplied.
            throw ValidationError("train: conditioning requires the aligner's embedder");
        }
        items[i] = std::move(it);
    });

    // replicas share structure and sync values from the primary every batch
    int R = std::min<int>(cfg.replicas, std::max<int>(1, int(records.size())));
    std::vector<std::unique_ptr<Denoiser>> spares;
    std::vector<Denoiser*> reps{&model};
    for (int r = 1; r < R; ++r) {
        spares.push_back(std::make_unique<Denoiser>(model.cfg));
        spares.back()->norm_mean = model.norm_mean;
        spares.back()->norm_std = model.norm_std;
        reps.push_back(spares.back().get());
    }

    nn::AdamT<float> opt(cfg.lr);
    Rng shuffle_rng(derive_seed(cfg.seed, 0x0d0));
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainStats stats;
    std::vector<double> item_loss(items.size()), item_recon(items.size()), item_align(items.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        size_t done = 0;
        long step_in_epoch = 0;
        while (done < order.size()) {
            size_t take = std::min(size_t(cfg.batch), order.size() - done);
            for (auto* rep : reps) rep->params.zero_grad();

            auto run_item = [&](size_t b) {
                Denoiser& rep = *reps[b % size_t(R)];
                const auto& it = items[order[done + b]];
                uint64_t item_counter = uint64_t(epoch) * items.size() + done + b;
                Rng irng(derive_seed(cfg.seed, splitmix64(item_counter) ^ 0x77a14ULL));
                int t = int(irng.uniform_int(1, sched.t_steps));
                std::vector<float> eps(it.x0.size());
                for (auto& e : eps) e = float(irng.normal());
                bool drop_cond = irng.uniform() < cfg.p_uncond;
                bool mask_guide = cfg.use_guide ? (irng.uniform() < cfg.p_mask) : true;
                if (double(t) > cfg.guide_t_fraction * double(sched.t_steps)) mask_guide = true;

                auto x_t = q_sample(it.x0, t, eps, sched);
                const Condition* cond = drop_cond ? nullptr : &it.cond;

                GuideTokens guide = GuideTokens::all_masked(it.cond.n_parts());
                if (cfg.use_guide && !mask_guide && !drop_cond) {
                    // detached preliminary prediction supplies the guide
                    nn::TapeT<float> pre_tape(false);
                    auto pre_x = pre_tape.constant({it.t_len, rep.cfg.input_dim},
                                                   std::vector<float>(x_t.begin(), x_t.end()));
                    auto pre_out = rep.predict_clean(pre_tape, pre_x, t, cond, nullptr);
                    motion::MotionSequence pre_m;
                    pre_m.skeleton = records[0].motion.skeleton;
                    pre_m.fps = fps;
                    pre_m.t_len = it.t_len;
                    pre_m.frames =
                        rep.denormalize_frames(std::vector<float>(pre_out->v.begin(), pre_out->v.end()));
                    guide = compute_guide(pre_m, it.targets, catalog);
                }

                nn::TapeT<float> tape(true);
                auto x_node = tape.constant({it.t_len, rep.cfg.input_dim}, x_t);
                const GuideTokens* guide_ptr = rep.cfg.backbone == Backbone::decoder ? &guide : nullptr;
                auto x0_hat = rep.predict_clean(tape, x_node, t, cond, guide_ptr);
                auto x0_node = tape.constant({it.t_len, rep.cfg.input_dim}, it.x0);
                auto diff = tape.sub(x0_hat, x0_node);
                auto recon = tape.mean(tape.mul(diff, diff));
                auto loss = recon;
                double align_val = 0.0;
                if (cfg.lambda_kp > 0.0) {
                    auto kp_node =
                        kp::extract_smooth_graph(tape, rep.denormalize_graph(tape, x0_hat), catalog, fps, cfg.tau);
                    nn::TensorPtr<float> align_term;
                    for (const auto& pt : it.targets) {
                        auto w = tape.constant({1, pt.window.frames()}, pt.weights);
                        auto omega = tape.matmul(w, tape.slice_rows(kp_node, pt.window.lo, pt.window.hi));
                        auto tgt = tape.constant({1, rep.cfg.n_kp}, pt.target);
                        auto res = tape.sub(omega, tgt);
                        auto sq = tape.sum(tape.mul(res, res));
                        align_term = align_term ? tape.add(align_term, sq) : sq;
                    }
                    align_val = double(align_term->v[0]);
                    loss = tape.add(loss, tape.scale(align_term, float(cfg.lambda_kp)));
                }
                size_t idx = done + b;
                item_loss[order[idx]] = double(loss->v[0]);
                item_recon[order[idx]] = double(recon->v[0]);
                item_align[order[idx]] = align_val;
                tape.backward(tape.scale(loss, 1.0f / float(take)));
            };

            if (R > 1 && take > 1) {
                for (int r = 1; r < R; ++r)
                    for (size_t pi = 0; pi < model.params.items.size(); ++pi)
                        reps[size_t(r)]->params.items[pi].second->v = model.params.items[pi].second->v;
                parallel_for(size_t(R), [&](size_t r) {
                    for (size_t b = r; b < take; b += size_t(R)) run_item(b);
                });
                for (int r = 1; r < R; ++r)
                    for (size_t pi = 0; pi < model.params.items.size(); ++pi) {
                        auto& dst = model.params.items[pi].second->g;
                        const auto& src = reps[size_t(r)]->params.items[pi].second->g;
                        for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                    }
            } else {
                for (size_t b = 0; b < take; ++b) run_item(b);
            }

            try {
                opt.step(model.params);
            } catch (const ValidationError& e) {
                throw ValidationError("train: aborted at epoch " + std::to_string(epoch) + " step " +
                                      std::to_string(step_in_epoch) + ": " + e.what());
            }
            done += take;
            ++step_in_epoch;
        }

        double el = 0, er = 0, ea = 0;
        for (size_t i = 0; i < items.size(); ++i) {
            el += item_loss[i];
            er += item_recon[i];
            ea += item_align[i];
        }
        el /= double(items.size());
        er /= double(items.size());
        ea /= double(items.size());
        if (!std::isfinite(el)) {
            std::string bad = nn::first_non_finite(model.params);
            throw ValidationError("train: loss diverged at epoch " + std::to_string(epoch) +
                                  "; first non-finite parameter: " + (bad.empty() ? "<loss>" : bad));
        }
        stats.epoch_loss.push_back(el);
        stats.epoch_recon.push_back(er);
        stats.epoch_align.push_back(ea);
        if (on_epoch) on_epoch(epoch, el);
    }
    return stats;
}

// ---- sampling ----

namespace detail {

inline std::vector<float> denoise_from(const Denoiser& model, const Condition& cond, const GuideTokens* guide,
                                       const DiffusionSchedule& sched, double w, int t_len, int start_t,
                                       std::vector<float> x, Rng& rng) {
    GuideTokens masked = GuideTokens::all_masked(cond.n_parts());
    for (int t = start_t; t >= 1; --t) {
        nn::TapeT<float> tape(false);
        auto x_node = tape.constant({t_len, model.cfg.input_dim}, x);
        const GuideTokens* g = model.cfg.backbone == Backbone::decoder ? (guide ? guide : &masked) : nullptr;
        auto cond_out = model.predict_clean(tape, x_node, t, &cond, g);
        std::vector<float> x0_hat(cond_out->v.begin(), cond_out->v.end());
        if (w != 0.0) {
            const GuideTokens* gu = model.cfg.backbone == Backbone::decoder ? &masked : nullptr;
            auto un = model.predict_clean(tape, x_node, t, nullptr, gu);
            x0_hat = cfg_combine(x0_hat, std::vector<float>(un->v.begin(), un->v.end()), w);
        }
        x = p_step(x, x0_hat, t, sched, rng);
    }
    return x;
}

}  // namespace diffusion::detail

inline motion::MotionSequence to_motion(const std::vector<float>& x, int t_len, const motion::Skeleton& skel,
                                        double fps) {
    motion::MotionSequence m;
    m.skeleton = skel;
    m.fps = fps;
    m.t_len = t_len;
    m.frames = x;
    return m;
}

// Full reverse process from pure noise; deterministic per rng seed. The
// reverse process runs in the model's normalized space and the result is
// mapped back to positions.
inline motion::MotionSequence sample(const Denoiser& model, const Condition& cond, const DiffusionSchedule& sched,
                                     double w, int t_len, const motion::Skeleton& skel, double fps, Rng& rng) {
    std::vector<float> z(size_t(t_len) * size_t(model.cfg.input_dim));
    for (auto& v : z) v = float(rng.normal());
    z = detail::denoise_from(model, cond, nullptr, sched, w, t_len, sched.t_steps, std::move(z), rng);
    return to_motion(model.denormalize_frames(z), t_len, skel, fps);
}

struct RoundDiagnostics {
    int round = 0;
    double mean_guide_norm = 0.0;
    double mean_similarity = 0.0;
};

struct RefineResult {
    motion::MotionSequence motion;
    std::vector<RoundDiagnostics> rounds;
};

// Iterative guided refinement: a full masked-guide pass, then R-1 rounds of
// re-diffusing the previous output to ceil(fraction_k * T) and denoising with
// guide tokens computed from that output. Decoder backbone only.
inline RefineResult refine(const Denoiser& model, const align::AlignerModel& aligner,
                           const text::DecomposedPrompt& prompt, const kp::KpCatalog& catalog,
                           const DiffusionSchedule& sched, int rounds, const std::vector<double>& fractions,
                           double w, int t_len, const motion::Skeleton& skel, double fps, Rng& rng) {
    if (model.cfg.backbone != Backbone::decoder)
        throw ValidationError("refine: guided refinement requires the decoder backbone");
    if (rounds < 1) throw ValidationError("refine: at least one round required");
    if (int(fractions.size()) < rounds) throw ValidationError("refine: need one re-diffusion fraction per round");
    for (double f : fractions)
        if (!(f > 0.0 && f <= 1.0)) throw ValidationError("refine: fractions must lie in (0, 1]");

    auto cond = make_condition(aligner, prompt);
    auto targets = align::part_targets(aligner, prompt, t_len);

    RefineResult out;
    auto m = sample(model, cond, sched, w, t_len, skel, fps, rng);
    auto diag = [&](int round, const motion::MotionSequence& cur) {
        RoundDiagnostics d;
        d.round = round;
        d.mean_guide_norm = mean_guide_norm(compute_guide(cur, targets, catalog));
        d.mean_similarity = align::text_motion_similarity(aligner, prompt, cur, catalog).mean;
        out.rounds.push_back(d);
    };
    diag(1, m);

    for (int k = 2; k <= rounds; ++k) {
        auto guide = compute_guide(m, targets, catalog);
        int t_k = std::max(1, int(std::ceil(fractions[size_t(k - 1)] * double(sched.t_steps))));
        std::vector<float> eps(m.frames.size());
        for (auto& e : eps) e = float(rng.normal());
        auto z = q_sample(model.normalize_frames(m.frames), t_k, eps, sched);
        z = detail::denoise_from(model, cond, &guide, sched, w, t_len, t_k, std::move(z), rng);
        m = to_motion(model.denormalize_frames(z), t_len, skel, fps);
        diag(k, m);
    }
    out.motion = std::move(m);
    return out;
}

// ---- checkpointing ----

inline void save_denoiser(const std::string& path, const Denoiser& model, const DiffusionSchedule& sched,
                          const kp::KpCatalog& catalog, const std::string& aligner_fingerprint,
                          const nlohmann::json& extra = {}) {
    nlohmann::json meta{{"kind", "denoiser"},
                        {"config", model.cfg.to_json()},
                        {"schedule", sched.to_json()},
                        {"catalog", kp::catalog_to_json(catalog)},
                        {"aligner_fingerprint", aligner_fingerprint},
                        {"norm_mean", model.norm_mean},
                        {"norm_std", model.norm_std}};
    if (!extra.is_null()) meta["extra"] = extra;
    ckpt::save(path, model.params, meta);
}

struct LoadedDenoiser {
    Denoiser model;
    DiffusionSchedule schedule;
    kp::KpCatalog catalog;
    std::string aligner_fingerprint;
    nlohmann::json meta;
};

inline LoadedDenoiser load_denoiser(const std::string& path) {
    auto loaded = ckpt::load(path);
    if (loaded.meta.at("kind").get<std::string>() != "denoiser")
        throw ValidationError("checkpoint at " + path + " is not a denoiser");
    LoadedDenoiser out{Denoiser(DenoiserConfig::from_json(loaded.meta.at("config"))),
                       schedule_from_json(loaded.meta.at("schedule")),
                       kp::catalog_from_json(loaded.meta.at("catalog")),
                       loaded.meta.at("aligner_fingerprint").get<std::string>(), loaded.meta};
    ckpt::restore(loaded, out.model.params);
    if (loaded.meta.contains("norm_mean")) {
        out.model.norm_mean = loaded.meta.at("norm_mean").get<std::vector<float>>();
        out.model.norm_std = loaded.meta.at("norm_std").get<std::vector<float>>();
    }
    return out;
}

}  // namespace kineta::diffusion
