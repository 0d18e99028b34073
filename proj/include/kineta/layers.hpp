#pragma once

// Standard layers on top of the tape: linear, layer norm, multi-head
// attention, feed-forward, transformer blocks (encoder-style self-attention
// and decoder-style with cross-attention memory), token embedding tables,
// sinusoidal positions, and a bias-corrected Adam optimizer.

#include <cmath>
#include <string>
#include <vector>

#include "kineta/core.hpp"
#include "kineta/tensor.hpp"

namespace kineta::nn {

template <typename T>
inline void init_uniform(TensorPtr<T> t, Rng& rng, double bound) {
    for (auto& x : t->v) x = T(rng.uniform(-bound, bound));
}

template <typename T>
inline void init_normal(TensorPtr<T> t, Rng& rng, double stddev) {
    for (auto& x : t->v) x = T(rng.normal() * stddev);
}

template <typename T>
struct LinearT {
    TensorPtr<T> w, b;
    int in = 0, out = 0;

    LinearT() = default;
    LinearT(int in_dim, int out_dim, Rng& rng, ParamSetT<T>& params, const std::string& name)
        : in(in_dim), out(out_dim) {
        w = std::make_shared<TensorT<T>>(std::vector<int>{in_dim, out_dim});
        b = std::make_shared<TensorT<T>>(std::vector<int>{1, out_dim});
        init_uniform(w, rng, std::sqrt(6.0 / double(in_dim + out_dim)));
        params.add(name + ".w", w);
        params.add(name + ".b", b);
    }

    TensorPtr<T> forward(TapeT<T>& tape, TensorPtr<T> x) const {
        auto y = tape.matmul(x, w);
        return tape.add(y, tape.broadcast_row(b, y->shape[0]));
    }
};

template <typename T>
struct LayerNormT {
    TensorPtr<T> gamma, beta;

    LayerNormT() = default;
    LayerNormT(int dim, ParamSetT<T>& params, const std::string& name) {
        gamma = std::make_shared<TensorT<T>>(std::vector<int>{1, dim});
        beta = std::make_shared<TensorT<T>>(std::vector<int>{1, dim});
        std::fill(gamma->v.begin(), gamma->v.end(), T(1));
        params.add(name + ".gamma", gamma);
        params.add(name + ".beta", beta);
    }

    TensorPtr<T> forward(TapeT<T>& tape, TensorPtr<T> x) const { return tape.layer_norm(x, gamma, beta); }
};

// x * sigmoid(x), composed from primitives.
template <typename T>
inline TensorPtr<T> silu(TapeT<T>& tape, TensorPtr<T> x) {
    return tape.mul(x, tape.sigmoid(x));
}

template <typename T>
struct MultiHeadAttentionT {
    LinearT<T> wq, wk, wv, wo;
    int dim = 0, heads = 0;

    MultiHeadAttentionT() = default;
    MultiHeadAttentionT(int d, int n_heads, Rng& rng, ParamSetT<T>& params, const std::string& name)
        : wq(d, d, rng, params, name + ".q"),
          wk(d, d, rng, params, name + ".k"),
          wv(d, d, rng, params, name + ".v"),
          wo(d, d, rng, params, name + ".o"),
          dim(d),
          heads(n_heads) {
        if (d % n_heads != 0) throw ValidationError("attention width must be divisible by head count");
    }

    // q_in [Lq, d] attends over kv_in [Lk, d]; mask (optional) is [Lq, Lk] additive.
    TensorPtr<T> forward(TapeT<T>& tape, TensorPtr<T> q_in, TensorPtr<T> kv_in,
                         TensorPtr<T> mask = nullptr) const {
        auto q = wq.forward(tape, q_in);
        auto k = wk.forward(tape, kv_in);
        auto v = wv.forward(tape, kv_in);
        int dh = dim / heads;
        std::vector<TensorPtr<T>> head_outs;
        head_outs.reserve(size_t(heads));
        for (int h = 0; h < heads; ++h) {
            auto qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
            auto kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
            auto vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
            head_outs.push_back(tape.attention(qh, kh, vh, mask));
        }
        return wo.forward(tape, tape.concat_cols(head_outs));
    }
};

template <typename T>
struct FeedForwardT {
    LinearT<T> fc1, fc2;

    FeedForwardT() = default;
    FeedForwardT(int d, int hidden, Rng& rng, ParamSetT<T>& params, const std::string& name)
        : fc1(d, hidden, rng, params, name + ".fc1"), fc2(hidden, d, rng, params, name + ".fc2") {}

    TensorPtr<T> forward(TapeT<T>& tape, TensorPtr<T> x) const {
        return fc2.forward(tape, silu(tape, fc1.forward(tape, x)));
    }
};

// Pre-norm residual block. With `cross` built, the block also attends over a
// memory sequence between self-attention and the feed-forward.
template <typename T>
struct TransformerBlockT {
    LayerNormT<T> ln1, ln_cross, ln2;
    MultiHeadAttentionT<T> self_attn, cross_attn;
    FeedForwardT<T> ffn;
    bool has_cross = false;

    TransformerBlockT() = default;
    TransformerBlockT(int d, int heads, bool cross, Rng& rng, ParamSetT<T>& params, const std::string& name)
        : ln1(d, params, name + ".ln1"),
          ln2(d, params, name + ".ln2"),
          self_attn(d, heads, rng, params, name + ".self"),
          ffn(d, d * 4, rng, params, name + ".ffn"),
          has_cross(cross) {
        if (cross) {
            ln_cross = LayerNormT<T>(d, params, name + ".lnx");
            cross_attn = MultiHeadAttentionT<T>(d, heads, rng, params, name + ".cross");
        }
    }

    TensorPtr<T> forward(TapeT<T>& tape, TensorPtr<T> x, TensorPtr<T> memory = nullptr) const {
        auto h = tape.add(x, self_attn.forward(tape, ln1.forward(tape, x), ln1.forward(tape, x)));
        if (has_cross) {
            if (!memory) throw ValidationError("decoder block requires a memory sequence");
            h = tape.add(h, cross_attn.forward(tape, ln_cross.forward(tape, h), memory));
        }
        return tape.add(h, ffn.forward(tape, ln2.forward(tape, h)));
    }
};

template <typename T>
struct EmbeddingT {
    TensorPtr<T> table;

    EmbeddingT() = default;
    EmbeddingT(int vocab, int dim, Rng& rng, ParamSetT<T>& params, const std::string& name) {
        table = std::make_shared<TensorT<T>>(std::vector<int>{vocab, dim});
        init_normal(table, rng, 0.02);
        params.add(name + ".table", table);
    }

    TensorPtr<T> forward(TapeT<T>& tape, const std::vector<int>& ids) const { return tape.embed(table, ids); }
};

// Fixed sinusoidal position table for positions [0, len), dimension d.
template <typename T>
inline TensorPtr<T> sinusoidal_positions(int len, int d, double base = 10000.0) {
    auto t = std::make_shared<TensorT<T>>(std::vector<int>{len, d});
    for (int p = 0; p < len; ++p)
        for (int j = 0; j < d; ++j) {
            double angle = double(p) / std::pow(base, 2.0 * double(j / 2) / double(d));
            t->v[size_t(p) * d + j] = T(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    return t;
}

// ---- Adam ----

template <typename T>
struct AdamT {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t step_count = 0;
    std::vector<std::vector<double>> m_, v_;

    explicit AdamT(double lr_ = 1e-3, double b1 = 0.9, double b2 = 0.999, double e = 1e-8)
        : lr(lr_), beta1(b1), beta2(b2), eps(e) {}

    void step(ParamSetT<T>& params) {
        if (m_.empty()) {
            m_.resize(params.items.size());
            v_.resize(params.items.size());
            for (size_t i = 0; i < params.items.size(); ++i) {
                m_[i].assign(params.items[i].second->numel(), 0.0);
                v_[i].assign(params.items[i].second->numel(), 0.0);
            }
        }
        if (m_.size() != params.items.size()) throw ValidationError("adam: parameter set changed between steps");
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, double(step_count));
        double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (size_t i = 0; i < params.items.size(); ++i) {
            auto& [name, p] = params.items[i];
            for (size_t j = 0; j < p->numel(); ++j) {
                double g = double(p->g[j]);
                if (!std::isfinite(g))
                    throw ValidationError("adam: non-finite gradient in parameter '" + name + "'");
                m_[i][j] = beta1 * m_[i][j] + (1.0 - beta1) * g;
                v_[i][j] = beta2 * v_[i][j] + (1.0 - beta2) * g * g;
                double mhat = m_[i][j] / bc1;
                double vhat = v_[i][j] / bc2;
                p->v[j] = T(double(p->v[j]) - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

using Adam = AdamT<float>;

// First parameter whose values or gradients are non-finite; empty if clean.
template <typename T>
inline std::string first_non_finite(const ParamSetT<T>& params) {
    for (const auto& [name, p] : params.items) {
        for (T x : p->v)
            if (!std::isfinite(double(x))) return name;
        for (T x : p->g)
            if (!std::isfinite(double(x))) return name + " (gradient)";
    }
    return "";
}

}  // namespace kineta::nn
