#pragma once

// Evaluation: a contrastively trained motion/text feature evaluator plus the
// retrieval and distribution metrics computed on its features.
//
//   fid        Frechet distance between Gaussian fits of two feature sets,
//              matrix square root by eigendecomposition of the symmetrized
//              product, eigenvalues below 1e-8 clamped to 0.
//   diversity  mean Euclidean distance over random distinct feature pairs.
//   r_precision  top-k hit rate of the matching text among 32 candidates
//              ranked by cosine, batches of 32, incomplete batch dropped.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kineta/align.hpp"
#include "kineta/core.hpp"
#include "kineta/diffusion.hpp"
#include "kineta/kp.hpp"
#include "kineta/layers.hpp"
#include "kineta/motion.hpp"
#include "kineta/tensor.hpp"
#include "kineta/text.hpp"

namespace kineta::metrics {

using Features = std::vector<std::vector<float>>;

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric d x d matrix (row-major).
// Returns eigenvalues; eigvecs (optional) receives columns as eigenvectors.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, int d,
                                              std::vector<double>* eigvecs = nullptr) {
    std::vector<double> v;
    if (eigvecs) {
        v.assign(size_t(d) * size_t(d), 0.0);
        for (int i = 0; i < d; ++i) v[size_t(i) * d + i] = 1.0;
    }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += a[size_t(p) * d + q] * a[size_t(p) * d + q];
        if (off < 1e-24) break;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) {
                double apq = a[size_t(p) * d + q];
                if (std::abs(apq) < 1e-300) continue;
                double app = a[size_t(p) * d + p], aqq = a[size_t(q) * d + q];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < d; ++k) {
                    double akp = a[size_t(k) * d + p], akq = a[size_t(k) * d + q];
                    a[size_t(k) * d + p] = c * akp - s * akq;
                    a[size_t(k) * d + q] = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    double apk = a[size_t(p) * d + k], aqk = a[size_t(q) * d + k];
                    a[size_t(p) * d + k] = c * apk - s * aqk;
                    a[size_t(q) * d + k] = s * apk + c * aqk;
                }
                if (eigvecs)
                    for (int k = 0; k < d; ++k) {
                        double vkp = v[size_t(k) * d + p], vkq = v[size_t(k) * d + q];
                        v[size_t(k) * d + p] = c * vkp - s * vkq;
                        v[size_t(k) * d + q] = s * vkp + c * vkq;
                    }
            }
    }
    std::vector<double> eig(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) eig[size_t(i)] = a[size_t(i) * d + i];
    if (eigvecs) *eigvecs = std::move(v);
    return eig;
}

inline std::vector<double> mean_of(const Features& f) {
    size_t d = f[0].size();
    std::vector<double> mu(d, 0.0);
    for (const auto& row : f)
        for (size_t j = 0; j < d; ++j) mu[j] += double(row[j]);
    for (auto& m : mu) m /= double(f.size());
    return mu;
}

// Unbiased sample covariance, d x d row-major.
inline std::vector<double> covariance_of(const Features& f, const std::vector<double>& mu) {
    size_t d = mu.size();
    std::vector<double> cov(d * d, 0.0);
    for (const auto& row : f)
        for (size_t i = 0; i < d; ++i) {
            double di = double(row[i]) - mu[i];
            for (size_t j = 0; j < d; ++j) cov[i * d + j] += di * (double(row[j]) - mu[j]);
        }
    double denom = double(f.size()) - 1.0;
    for (auto& c : cov) c /= denom;
    return cov;
}

// S^(1/2) for symmetric PSD S (negative eigenvalues treated as 0).
inline std::vector<double> sqrtm_psd(const std::vector<double>& s, int d) {
    std::vector<double> vecs;
    auto eig = jacobi_eigenvalues(s, d, &vecs);
    std::vector<double> out(size_t(d) * size_t(d), 0.0);
    for (int k = 0; k < d; ++k) {
        double lam = eig[size_t(k)] > 0.0 ? std::sqrt(eig[size_t(k)]) : 0.0;
        if (lam == 0.0) continue;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                out[size_t(i) * d + j] += lam * vecs[size_t(i) * d + k] * vecs[size_t(j) * d + k];
    }
    return out;
}

inline std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b, int d) {
    std::vector<double> c(size_t(d) * size_t(d), 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            double aik = a[size_t(i) * d + k];
            if (aik == 0.0) continue;
            for (int j = 0; j < d; ++j) c[size_t(i) * d + j] += aik * b[size_t(k) * d + j];
        }
    return c;
}

}  // namespace metrics::detail

inline double fid(const Features& real, const Features& gen) {
    if (real.empty() || gen.empty()) throw ValidationError("fid: empty feature set");
    int d = int(real[0].size());
    if (int(gen[0].size()) != d) throw ValidationError("fid: feature dimension mismatch");
    if (int(real.size()) < d + 1 || int(gen.size()) < d + 1)
        throw ValidationError("fid: need at least d+1 samples per side");

    auto mu_r = detail::mean_of(real), mu_g = detail::mean_of(gen);
    auto cov_r = detail::covariance_of(real, mu_r), cov_g = detail::covariance_of(gen, mu_g);

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        double diff = mu_r[size_t(i)] - mu_g[size_t(i)];
        mean_term += diff * diff;
    }
    double tr_r = 0.0, tr_g = 0.0;
    for (int i = 0; i < d; ++i) {
        tr_r += cov_r[size_t(i) * d + i];
        tr_g += cov_g[size_t(i) * d + i];
    }
    // trace of (cov_r cov_g)^(1/2) via the symmetrized product A cov_r A, A = cov_g^(1/2)
    auto a = detail::sqrtm_psd(cov_g, d);
    auto m = detail::matmul_sq(detail::matmul_sq(a, cov_r, d), a, d);
    // enforce symmetry against roundoff before the eigensolve
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            double avg = 0.5 * (m[size_t(i) * d + j] + m[size_t(j) * d + i]);
            m[size_t(i) * d + j] = avg;
            m[size_t(j) * d + i] = avg;
        }
    double tr_sqrt = 0.0;
    for (double lam : detail::jacobi_eigenvalues(std::move(m), d))
        if (lam >= 1e-8) tr_sqrt += std::sqrt(lam);
    double out = mean_term + tr_r + tr_g - 2.0 * tr_sqrt;
    return out > 0.0 ? out : 0.0;
}

inline double diversity(const Features& feats, int pair_count, Rng& rng) {
    if (feats.size() < 2) throw ValidationError("diversity: need at least 2 features");
    int n = int(feats.size());
    double acc = 0.0;
    for (int p = 0; p < pair_count; ++p) {
        int i = int(rng.uniform_int(0, n - 1));
        int j = int(rng.uniform_int(0, n - 2));
        if (j >= i) ++j;
        double d2 = 0.0;
        for (size_t k = 0; k < feats[size_t(i)].size(); ++k) {
            double diff = double(feats[size_t(i)][k]) - double(feats[size_t(j)][k]);
            d2 += diff * diff;
        }
        acc += std::sqrt(d2);
    }
    return acc / double(pair_count);
}

struct RPrecision {
    double top1 = 0.0, top2 = 0.0, top3 = 0.0;

    double top(int k) const { return k == 1 ? top1 : k == 2 ? top2 : top3; }
};

// Matched (motion, text) pairs given by `order`; batches of `batch` in order,
// the incomplete final batch is dropped.
inline RPrecision r_precision_indexed(const Features& motion, const Features& texts,
                                      const std::vector<size_t>& order, int batch = 32) {
    if (motion.size() != texts.size()) throw ValidationError("r_precision: pair count mismatch");
    if (int(order.size()) < batch) throw ValidationError("r_precision: need at least one full batch");
    long n_batches = long(order.size()) / batch;
    long hits1 = 0, hits2 = 0, hits3 = 0, total = 0;
    for (long bi = 0; bi < n_batches; ++bi) {
        for (int i = 0; i < batch; ++i) {
            size_t mi = order[size_t(bi * batch + i)];
            double own = align::cosine(motion[mi], texts[mi]);
            int rank = 0; // texts strictly more similar than the matched one
            for (int j = 0; j < batch; ++j) {
                if (j == i) continue;
                size_t tj = order[size_t(bi * batch + j)];
                if (align::cosine(motion[mi], texts[tj]) > own) ++rank;
            }
            ++total;
            hits1 += rank < 1;
            hits2 += rank < 2;
            hits3 += rank < 3;
        }
    }
    RPrecision out;
    out.top1 = double(hits1) / double(total);
    out.top2 = double(hits2) / double(total);
    out.top3 = double(hits3) / double(total);
    return out;
}

inline RPrecision r_precision(const Features& motion, const Features& texts, int batch = 32) {
    std::vector<size_t> order(motion.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    return r_precision_indexed(motion, texts, order, batch);
}

// ---- evaluator model ----

struct EvaluatorConfig {
    int input_dim = 15;
    int width = 32;
    int depth = 2;
    int heads = 4;
    int d_eval = 32;
    int max_frames = 1024;
    double temperature = 0.07; // InfoNCE logit scale
    uint64_t seed = 1;

    nlohmann::json to_json() const {
        return nlohmann::json{{"input_dim", input_dim}, {"width", width},   {"depth", depth},
                              {"heads", heads},         {"d_eval", d_eval}, {"max_frames", max_frames},
                              {"temperature", temperature}, {"seed", seed}};
    }
    static EvaluatorConfig from_json(const nlohmann::json& j) {
        EvaluatorConfig c;
        c.input_dim = j.at("input_dim").get<int>();
        c.width = j.at("width").get<int>();
        c.depth = j.at("depth").get<int>();
        c.heads = j.at("heads").get<int>();
        c.d_eval = j.at("d_eval").get<int>();
        c.max_frames = j.at("max_frames").get<int>();
        c.temperature = j.at("temperature").get<double>();
        c.seed = j.at("seed").get<uint64_t>();
        return c;
    }
};

template <typename T>
struct EvaluatorT {
    EvaluatorConfig cfg;
    nn::ParamSetT<T> params;
    nn::LinearT<T> input_proj, motion_head;
    std::vector<nn::TransformerBlockT<T>> blocks;
    nn::EmbeddingT<T> token_table;
    nn::LinearT<T> text_head;
    nn::TensorPtr<T> pe;

    EvaluatorT() = default;
    explicit EvaluatorT(const EvaluatorConfig& config) : cfg(config) {
        Rng rng(derive_seed(cfg.seed, 0xe7a1));
        input_proj = nn::LinearT<T>(cfg.input_dim, cfg.width, rng, params, "input_proj");
        for (int i = 0; i < cfg.depth; ++i)
            blocks.emplace_back(cfg.width, cfg.heads, false, rng, params, "block" + std::to_string(i));
        motion_head = nn::LinearT<T>(cfg.width, cfg.d_eval, rng, params, "motion_head");
        token_table = nn::EmbeddingT<T>(int(text::vocabulary().size()), cfg.width, rng, params, "token_table");
        text_head = nn::LinearT<T>(cfg.width, cfg.d_eval, rng, params, "text_head");
        pe = nn::sinusoidal_positions<T>(cfg.max_frames, cfg.width);
    }

    nn::TensorPtr<T> l2norm(nn::TapeT<T>& tape, nn::TensorPtr<T> x) const {
        auto norm = tape.sqrt(tape.add_const(tape.sum(tape.mul(x, x)), T(1e-12)));
        return tape.scale_by(x, tape.reciprocal(norm));
    }

    // [T, input_dim] -> unit feature [1, d_eval] via temporal mean pooling.
    nn::TensorPtr<T> motion_feature(nn::TapeT<T>& tape, nn::TensorPtr<T> x) const {
        if (x->shape.size() != 2 || x->shape[1] != cfg.input_dim)
            throw ValidationError("evaluator: motion tensor must be [T, input_dim]");
        auto h = tape.add(input_proj.forward(tape, x), tape.slice_rows(pe, 0, x->shape[0]));
        for (const auto& blk : blocks) h = blk.forward(tape, h);
        return l2norm(tape, motion_head.forward(tape, tape.mean_rows(h)));
    }

    nn::TensorPtr<T> text_feature(nn::TapeT<T>& tape, const std::string& sentence) const {
        auto pooled = tape.mean_rows(tape.embed(token_table.table, text::tokenize(sentence)));
        return l2norm(tape, text_head.forward(tape, pooled));
    }

    std::vector<float> motion_feature_values(const motion::MotionSequence& m) const {
        nn::TapeT<T> tape(false);
        std::vector<T> flat(m.frames.begin(), m.frames.end());
        auto x = tape.constant({m.t_len, cfg.input_dim}, flat);
        auto f = motion_feature(tape, x);
        return std::vector<float>(f->v.begin(), f->v.end());
    }

    std::vector<float> text_feature_values(const std::string& sentence) const {
        nn::TapeT<T> tape(false);
        auto f = text_feature(tape, sentence);
        return std::vector<float>(f->v.begin(), f->v.end());
    }
};

using Evaluator = EvaluatorT<float>;

struct EvaluatorTrainConfig {
    int epochs = 20;
    int batch = 32;
    double lr = 1e-3;
    double target_margin = 0.2; // matched-vs-mismatched cosine margin on validation
    uint64_t seed = 1;

    nlohmann::json to_json() const {
        return nlohmann::json{
            {"epochs", epochs}, {"batch", batch}, {"lr", lr}, {"target_margin", target_margin}, {"seed", seed}};
    }
};

struct EvaluatorTrainStats {
    std::vector<double> epoch_loss;
    double val_margin = 0.0;         // matched minus mismatched mean cosine
    double val_matched_rate = 0.0;   // fraction of val pairs with matched > mean mismatched
    bool margin_reached = false;
};

inline double evaluator_validation_margin(const Evaluator& model,
                                          const std::vector<motion::DatasetRecord>& val,
                                          double* matched_rate = nullptr) {
    Features mf(val.size()), tf(val.size());
    parallel_for(val.size(), [&](size_t i) {
        mf[i] = model.motion_feature_values(val[i].motion);
        tf[i] = model.text_feature_values(val[i].full_text);
    });
    double matched = 0.0, mismatched = 0.0;
    long rate_hits = 0;
    for (size_t i = 0; i < val.size(); ++i) {
        matched += align::cosine(mf[i], tf[i]);
        double mm = 0.0;
        for (size_t j = 0; j < val.size(); ++j)
            if (j != i) mm += align::cosine(mf[i], tf[j]);
        mm /= double(val.size() - 1);
        mismatched += mm;
        rate_hits += align::cosine(mf[i], tf[i]) > mm ? 1 : 0;
    }
    if (matched_rate) *matched_rate = double(rate_hits) / double(val.size());
    return (matched - mismatched) / double(val.size());
}

// Symmetric InfoNCE over (motion, full_text) batches. Deterministic per seed.
inline EvaluatorTrainStats train_evaluator(Evaluator& model, const std::vector<motion::DatasetRecord>& train,
                                           const std::vector<motion::DatasetRecord>& val,
                                           const EvaluatorTrainConfig& cfg,
                                           const std::function<void(int, double)>& on_epoch = nullptr) {
    if (int(train.size()) < cfg.batch) throw ValidationError("train_evaluator: dataset smaller than one batch");
    nn::AdamT<float> opt(cfg.lr);
    Rng shuffle_rng(derive_seed(cfg.seed, 0xe7a));
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    EvaluatorTrainStats stats;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        long batches = 0;
        for (size_t done = 0; done + size_t(cfg.batch) <= order.size(); done += size_t(cfg.batch)) {
            model.params.zero_grad();
            nn::TapeT<float> tape(true);
            std::vector<nn::TensorPtr<float>> mrows, trows;
            for (int b = 0; b < cfg.batch; ++b) {
                const auto& rec = train[order[done + size_t(b)]];
                std::vector<float> flat(rec.motion.frames.begin(), rec.motion.frames.end());
                auto x = tape.constant({rec.motion.t_len, model.cfg.input_dim}, flat);
                mrows.push_back(model.motion_feature(tape, x));
                trows.push_back(model.text_feature(tape, rec.full_text));
            }
            auto M = tape.concat_rows(mrows);
            auto Tx = tape.concat_rows(trows);
            auto logits = tape.scale(tape.matmul(M, tape.transpose(Tx)), float(1.0 / model.cfg.temperature));
            // -mean(log softmax diag), both directions
            std::vector<float> eye(size_t(cfg.batch) * size_t(cfg.batch), 0.0f);
            for (int i = 0; i < cfg.batch; ++i) eye[size_t(i) * size_t(cfg.batch) + size_t(i)] = 1.0f;
            auto mask = tape.constant({cfg.batch, cfg.batch}, eye);
            auto ce_rows = tape.scale(
                tape.sum(tape.mul(tape.log(tape.softmax_rows(logits)), mask)), -1.0f / float(cfg.batch));
            auto ce_cols = tape.scale(
                tape.sum(tape.mul(tape.log(tape.softmax_rows(tape.transpose(logits))), mask)),
                -1.0f / float(cfg.batch));
            auto loss = tape.scale(tape.add(ce_rows, ce_cols), 0.5f);
            epoch_loss += double(loss->v[0]);
            ++batches;
            tape.backward(loss);
            opt.step(model.params);
        }
        epoch_loss /= double(std::max(1L, batches));
        stats.epoch_loss.push_back(epoch_loss);
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    if (!val.empty()) {
        stats.val_margin = evaluator_validation_margin(model, val, &stats.val_matched_rate);
        stats.margin_reached = stats.val_margin >= cfg.target_margin;
    }
    return stats;
}

inline void save_evaluator(const std::string& path, const Evaluator& model, const nlohmann::json& extra = {}) {
    nlohmann::json meta{{"kind", "evaluator"}, {"config", model.cfg.to_json()}};
    if (!extra.is_null()) meta["extra"] = extra;
    ckpt::save(path, model.params, meta);
}

inline Evaluator load_evaluator(const std::string& path) {
    auto loaded = ckpt::load(path);
    if (loaded.meta.at("kind").get<std::string>() != "evaluator")
        throw ValidationError("checkpoint at " + path + " is not an evaluator");
    Evaluator model(EvaluatorConfig::from_json(loaded.meta.at("config")));
    ckpt::restore(loaded, model.params);
    return model;
}

// ---- system evaluation ----

struct MetricReport {
    std::string system;
    double r_top1 = 0.0, r_top2 = 0.0, r_top3 = 0.0;
    double fid_value = 0.0;
    double diversity_value = 0.0;
    double mean_d_hat = 0.0;
    int sample_count = 0;
    std::string config_fingerprint;
};

inline void write_reports_csv(const std::vector<MetricReport>& rows, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot open for writing: " + path);
    os << "system,r_precision_top1,r_precision_top2,r_precision_top3,fid,diversity,mean_d_hat,samples,"
          "config_fingerprint\n";
    char buf[64];
    for (const auto& r : rows) {
        os << r.system;
        for (double v : {r.r_top1, r.r_top2, r.r_top3, r.fid_value, r.diversity_value, r.mean_d_hat}) {
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            os << ',' << buf;
        }
        os << ',' << r.sample_count << ',' << r.config_fingerprint << '\n';
    }
}

inline std::vector<MetricReport> read_reports_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open: " + path, 0);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty report file: " + path, 0);
    std::vector<MetricReport> rows;
    size_t offset = line.size() + 1;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else
                cur += c;
        }
        cells.push_back(cur);
        if (cells.size() != 9) throw ParseError("bad report row in " + path, offset);
        MetricReport r;
        r.system = cells[0];
        r.r_top1 = std::stod(cells[1]);
        r.r_top2 = std::stod(cells[2]);
        r.r_top3 = std::stod(cells[3]);
        r.fid_value = std::stod(cells[4]);
        r.diversity_value = std::stod(cells[5]);
        r.mean_d_hat = std::stod(cells[6]);
        r.sample_count = std::stoi(cells[7]);
        r.config_fingerprint = cells[8];
        rows.push_back(r);
        offset += line.size() + 1;
    }
    return rows;
}

struct SystemSpec {
    std::string name;
    const diffusion::Denoiser* model = nullptr;
    const diffusion::DiffusionSchedule* schedule = nullptr;
    double guidance_w = 2.5;
    bool use_refine = false;
    int rounds = 3;
    std::vector<double> fractions = {1.0, 0.5, 0.25};
};

struct SystemEval {
    MetricReport report;
    Features motion_feats;   // one row per test prompt
    std::vector<double> d_hat;
    std::vector<std::vector<diffusion::RoundDiagnostics>> refine_rounds; // empty unless use_refine
    std::vector<motion::MotionSequence> motions;
};

// Features of the real test motions and their texts; shared across systems.
struct RealFeatures {
    Features motion_feats;
    Features text_feats;
};

inline RealFeatures real_features(const Evaluator& evaluator, const std::vector<motion::DatasetRecord>& test) {
    RealFeatures out;
    out.motion_feats.resize(test.size());
    out.text_feats.resize(test.size());
    parallel_for(test.size(), [&](size_t i) {
        out.motion_feats[i] = evaluator.motion_feature_values(test[i].motion);
        out.text_feats[i] = evaluator.text_feature_values(test[i].full_text);
    });
    return out;
}

// Generate one motion per test prompt and compute all metrics against the
// real features. Deterministic per (spec, seed); prompts run in parallel.
inline SystemEval evaluate_system(const SystemSpec& spec, const std::vector<motion::DatasetRecord>& test,
                                  const Evaluator& evaluator, const align::AlignerModel& aligner,
                                  const kp::KpCatalog& catalog, const RealFeatures& real, uint64_t seed,
                                  bool keep_motions = false) {
    if (!spec.model || !spec.schedule) throw ValidationError("evaluate_system: model and schedule required");
    SystemEval ev;
    ev.motion_feats.resize(test.size());
    ev.d_hat.resize(test.size());
    if (spec.use_refine) ev.refine_rounds.resize(test.size());
    if (keep_motions) ev.motions.resize(test.size());

    parallel_for(test.size(), [&](size_t i) {
        const auto& rec = test[i];
        auto prompt = text::script_to_ground_truth(rec.script);
        Rng prompt_rng(derive_seed(seed, i));
        motion::MotionSequence m;
        if (spec.use_refine) {
            auto res = diffusion::refine(*spec.model, aligner, prompt, catalog, *spec.schedule, spec.rounds,
                                         spec.fractions, spec.guidance_w, rec.motion.t_len,
                                         rec.motion.skeleton, rec.motion.fps, prompt_rng);
            ev.refine_rounds[i] = res.rounds;
            m = std::move(res.motion);
        } else {
            auto cond = diffusion::make_condition(aligner, prompt);
            m = diffusion::sample(*spec.model, cond, *spec.schedule, spec.guidance_w, rec.motion.t_len,
                                  rec.motion.skeleton, rec.motion.fps, prompt_rng);
        }
        ev.motion_feats[i] = evaluator.motion_feature_values(m);
        ev.d_hat[i] = align::text_motion_similarity(aligner, prompt, m, catalog).mean;
        if (keep_motions) ev.motions[i] = std::move(m);
    });

    ev.report.system = spec.name;
    auto rp = r_precision(ev.motion_feats, real.text_feats);
    ev.report.r_top1 = rp.top1;
    ev.report.r_top2 = rp.top2;
    ev.report.r_top3 = rp.top3;
    ev.report.fid_value = fid(real.motion_feats, ev.motion_feats);
    Rng div_rng(derive_seed(seed, 0xd1fe));
    ev.report.diversity_value = diversity(ev.motion_feats, 300, div_rng);
    double acc = 0.0;
    for (double d : ev.d_hat) acc += d;
    ev.report.mean_d_hat = test.empty() ? 0.0 : acc / double(test.size());
    ev.report.sample_count = int(test.size());
    ev.report.config_fingerprint = ckpt::fingerprint(spec.model->params);
    return ev;
}

// Control row: the real motions evaluated against themselves (split-half FID).
inline MetricReport real_control_row(const RealFeatures& real, const std::vector<motion::DatasetRecord>& test,
                                     const align::AlignerModel& aligner, const kp::KpCatalog& catalog,
                                     uint64_t seed) {
    MetricReport r;
    r.system = "real";
    auto rp = r_precision(real.motion_feats, real.text_feats);
    r.r_top1 = rp.top1;
    r.r_top2 = rp.top2;
    r.r_top3 = rp.top3;
    size_t half = real.motion_feats.size() / 2;
    Features a(real.motion_feats.begin(), real.motion_feats.begin() + long(half));
    Features b(real.motion_feats.begin() + long(half), real.motion_feats.end());
    r.fid_value = fid(a, b);
    Rng div_rng(derive_seed(seed, 0xd1fe));
    r.diversity_value = diversity(real.motion_feats, 300, div_rng);
    std::vector<double> dh(test.size());
    parallel_for(test.size(), [&](size_t i) {
        auto prompt = text::script_to_ground_truth(test[i].script);
        dh[i] = align::text_motion_similarity(aligner, prompt, test[i].motion, catalog).mean;
    });
    double acc = 0.0;
    for (double d : dh) acc += d;
    r.mean_d_hat = test.empty() ? 0.0 : acc / double(test.size());
    r.sample_count = int(test.size());
    r.config_fingerprint = "real";
    return r;
}

}  // namespace kineta::metrics
