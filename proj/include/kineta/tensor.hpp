#pragma once

// Minimal reverse-mode differentiation core.
//
// TensorT<T> is a shape-tagged row-major array with an optional gradient
// buffer. TapeT<T> owns the op recording for one forward pass: every
// primitive computes its forward value immediately and, when recording and
// at least one input tracks gradients, pushes a backward closure. A tape is
// single-use: backward() may be called once, then the tape must be rebuilt.
//
// Storage is T (float in production); every loop-carried reduction
// accumulates in double. Summation order is fixed, so forward values are
// bit-identical for identical inputs within one build.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "kineta/core.hpp"

namespace kineta::nn {

template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> v;  // values, row-major
    std::vector<T> g;  // gradient slot; allocated iff requires_grad
    bool requires_grad = false;

    TensorT() = default;
    explicit TensorT(std::vector<int> s, bool rg = false) : shape(std::move(s)), requires_grad(rg) {
        v.assign(numel_of(shape), T(0));
        if (rg) g.assign(v.size(), T(0));
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= size_t(d);
        return n;
    }

    size_t numel() const { return v.size(); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }

    void enable_grad() {
        requires_grad = true;
        if (g.size() != v.size()) g.assign(v.size(), T(0));
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<TensorT<T>>;

template <typename T>
inline std::string shape_str(const TensorT<T>& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i) s += (i ? "x" : "") + std::to_string(t.shape[i]);
    return s + "]";
}

template <typename T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape != b.shape)
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Named parameter list; ordering is the update/checkpoint order.
template <typename T>
struct ParamSetT {
    std::vector<std::pair<std::string, TensorPtr<T>>> items;

    TensorPtr<T> add(const std::string& name, TensorPtr<T> t) {
        t->enable_grad();
        items.push_back({name, t});
        return t;
    }
    void merge(const ParamSetT& other, const std::string& prefix) {
        for (const auto& [n, t] : other.items) items.push_back({prefix + n, t});
    }
    void zero_grad() {
        for (auto& [n, t] : items) t->zero_grad();
    }
    size_t count() const {
        size_t c = 0;
        for (const auto& [n, t] : items) c += t->numel();
        return c;
    }
};

template <typename T>
class TapeT {
  public:
    explicit TapeT(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }

    TensorPtr<T> leaf(std::vector<int> shape, bool requires_grad = false) {
        return std::make_shared<TensorT<T>>(std::move(shape), requires_grad);
    }

    TensorPtr<T> constant(std::vector<int> shape, const std::vector<T>& vals) {
        auto t = std::make_shared<TensorT<T>>(std::move(shape));
        if (vals.size() != t->numel()) throw ValidationError("constant: value count does not match shape");
        t->v = vals;
        return t;
    }

    TensorPtr<T> scalar(T val) {
        auto t = std::make_shared<TensorT<T>>(std::vector<int>{1});
        t->v[0] = val;
        return t;
    }

    // ---- elementwise ----

    TensorPtr<T> add(TensorPtr<T> a, TensorPtr<T> b) {
        check_same_shape(*a, *b, "add");
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] + b->v[i];
        if (track(out, {a, b}))
            record([a, b, out]() {
                if (a->requires_grad)
                    for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
                if (b->requires_grad)
                    for (size_t i = 0; i < out->numel(); ++i) b->g[i] += out->g[i];
            });
        return out;
    }

    TensorPtr<T> sub(TensorPtr<T> a, TensorPtr<T> b) {
        check_same_shape(*a, *b, "sub");
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] - b->v[i];
        if (track(out, {a, b}))
            record([a, b, out]() {
                if (a->requires_grad)
                    for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
                if (b->requires_grad)
                    for (size_t i = 0; i < out->numel(); ++i) b->g[i] -= out->g[i];
            });
        return out;
    }

    TensorPtr<T> mul(TensorPtr<T> a, TensorPtr<T> b) {
        check_same_shape(*a, *b, "mul");
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * b->v[i];
        if (track(out, {a, b}))
            record([a, b, out]() {
                if (a->requires_grad)
                    for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * b->v[i];
                if (b->requires_grad)
                    for (size_t i = 0; i < out->numel(); ++i) b->g[i] += out->g[i] * a->v[i];
            });
        return out;
    }

    TensorPtr<T> scale(TensorPtr<T> a, T c) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * c;
        if (track(out, {a}))
            record([a, out, c]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * c;
            });
        return out;
    }

    TensorPtr<T> add_const(TensorPtr<T> a, T c) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] + c;
        if (track(out, {a}))
            record([a, out]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i];
            });
        return out;
    }

    // out = a * s where s is a 1-element tensor, broadcast over a.
    TensorPtr<T> scale_by(TensorPtr<T> a, TensorPtr<T> s) {
        if (s->numel() != 1) throw ValidationError("scale_by: scale must be a scalar tensor, got " + shape_str(*s));
        auto out = like(a);
        T sv = s->v[0];
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = a->v[i] * sv;
        if (track(out, {a, s}))
            record([a, s, out]() {
                if (a->requires_grad) {
                    T sv2 = s->v[0];
                    for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * sv2;
                }
                if (s->requires_grad) {
                    double acc = 0.0;
                    for (size_t i = 0; i < out->numel(); ++i) acc += double(out->g[i]) * double(a->v[i]);
                    s->g[0] += T(acc);
                }
            });
        return out;
    }

    TensorPtr<T> tanh(TensorPtr<T> a) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = std::tanh(a->v[i]);
        if (track(out, {a}))
            record([a, out]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * (T(1) - out->v[i] * out->v[i]);
            });
        return out;
    }

    TensorPtr<T> sigmoid(TensorPtr<T> a) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = sigmoid_val(a->v[i]);
        if (track(out, {a}))
            record([a, out]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * out->v[i] * (T(1) - out->v[i]);
            });
        return out;
    }

    TensorPtr<T> softplus(TensorPtr<T> a) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) {
            T x = a->v[i];
            out->v[i] = x > T(20) ? x : T(std::log1p(std::exp(double(x))));
        }
        if (track(out, {a}))
            record([a, out]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * sigmoid_val(a->v[i]);
            });
        return out;
    }

    TensorPtr<T> exp(TensorPtr<T> a) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = std::exp(a->v[i]);
        if (track(out, {a}))
            record([a, out]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] * out->v[i];
            });
        return out;
    }

    TensorPtr<T> log(TensorPtr<T> a) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = std::log(a->v[i]);
        if (track(out, {a}))
            record([a, out]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] / a->v[i];
            });
        return out;
    }

    TensorPtr<T> sqrt(TensorPtr<T> a) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = std::sqrt(a->v[i]);
        if (track(out, {a}))
            record([a, out]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] += out->g[i] / (T(2) * out->v[i]);
            });
        return out;
    }

    TensorPtr<T> reciprocal(TensorPtr<T> a) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = T(1) / a->v[i];
        if (track(out, {a}))
            record([a, out]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[i] -= out->g[i] * out->v[i] * out->v[i];
            });
        return out;
    }

    // min(x, cap) elementwise; subgradient 0 where capped.
    TensorPtr<T> clamp_max(TensorPtr<T> a, T cap) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) out->v[i] = std::min(a->v[i], cap);
        if (track(out, {a}))
            record([a, out, cap]() {
                for (size_t i = 0; i < out->numel(); ++i)
                    if (a->v[i] < cap) a->g[i] += out->g[i];
            });
        return out;
    }

    // Soft threshold: sign(x) * max(|x| - delta, 0). Subgradient is 0 inside
    // the zone, 1 outside.
    TensorPtr<T> deadzone(TensorPtr<T> a, T delta) {
        auto out = like(a);
        for (size_t i = 0; i < out->numel(); ++i) {
            T x = a->v[i];
            T m = std::abs(x) - delta;
            out->v[i] = m > T(0) ? (x > T(0) ? m : -m) : T(0);
        }
        if (track(out, {a}))
            record([a, out, delta]() {
                for (size_t i = 0; i < out->numel(); ++i)
                    if (std::abs(a->v[i]) > delta) a->g[i] += out->g[i];
            });
        return out;
    }

    // ---- matmul ----

    TensorPtr<T> matmul(TensorPtr<T> a, TensorPtr<T> b) {
        if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
            throw ValidationError("matmul: incompatible shapes " + shape_str(*a) + " vs " + shape_str(*b));
        int m = a->shape[0], k = a->shape[1], n = b->shape[1];
        auto out = make({m, n}, {a, b});
        matmul_value(a->v.data(), b->v.data(), out->v.data(), m, k, n);
        if (out->requires_grad)
            record([a, b, out, m, k, n]() {
                if (a->requires_grad) {
                    // dA[i,l] = sum_j dC[i,j] * B[l,j]
                    for (int i = 0; i < m; ++i)
                        for (int l = 0; l < k; ++l) {
                            double acc = 0.0;
                            const T* gr = &out->g[size_t(i) * n];
                            const T* br = &b->v[size_t(l) * n];
                            for (int j = 0; j < n; ++j) acc += double(gr[j]) * double(br[j]);
                            a->g[size_t(i) * k + l] += T(acc);
                        }
                }
                if (b->requires_grad) {
                    // dB[l,j] += sum_i A[i,l] * dC[i,j]; accumulate rows in double
                    std::vector<double> acc(size_t(k) * n, 0.0);
                    for (int i = 0; i < m; ++i) {
                        const T* ar = &a->v[size_t(i) * k];
                        const T* gr = &out->g[size_t(i) * n];
                        for (int l = 0; l < k; ++l) {
                            double al = double(ar[l]);
                            if (al == 0.0) continue;
                            double* br = &acc[size_t(l) * n];
                            for (int j = 0; j < n; ++j) br[j] += al * double(gr[j]);
                        }
                    }
                    for (size_t i = 0; i < b->g.size(); ++i) b->g[i] += T(acc[i]);
                }
            });
        return out;
    }

    // ---- reductions ----

    TensorPtr<T> sum(TensorPtr<T> a) {
        auto out = make({1}, {a});
        double acc = 0.0;
        for (size_t i = 0; i < a->numel(); ++i) acc += double(a->v[i]);
        out->v[0] = T(acc);
        if (out->requires_grad)
            record([a, out]() {
                T go = out->g[0];
                for (size_t i = 0; i < a->numel(); ++i) a->g[i] += go;
            });
        return out;
    }

    TensorPtr<T> mean(TensorPtr<T> a) {
        if (a->numel() == 0) throw ValidationError("mean: empty tensor");
        auto out = make({1}, {a});
        double acc = 0.0;
        for (size_t i = 0; i < a->numel(); ++i) acc += double(a->v[i]);
        T inv = T(1.0 / double(a->numel()));
        out->v[0] = T(acc) * inv;
        if (out->requires_grad)
            record([a, out, inv]() {
                T go = out->g[0] * inv;
                for (size_t i = 0; i < a->numel(); ++i) a->g[i] += go;
            });
        return out;
    }

    // Mean over rows: [m, n] -> [1, n].
    TensorPtr<T> mean_rows(TensorPtr<T> a) {
        if (a->shape.size() != 2) throw ValidationError("mean_rows: rank-2 input required, got " + shape_str(*a));
        int m = a->shape[0], n = a->shape[1];
        auto out = make({1, n}, {a});
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += double(a->v[size_t(i) * n + j]);
            out->v[size_t(j)] = T(acc / double(m));
        }
        if (out->requires_grad)
            record([a, out, m, n]() {
                T inv = T(1.0 / double(m));
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) a->g[size_t(i) * n + j] += out->g[size_t(j)] * inv;
            });
        return out;
    }

    // ---- softmax over the last axis of a rank-2 tensor ----

    TensorPtr<T> softmax_rows(TensorPtr<T> a) {
        if (a->shape.size() != 2) throw ValidationError("softmax_rows: rank-2 input required, got " + shape_str(*a));
        int m = a->shape[0], n = a->shape[1];
        auto out = make({m, n}, {a});
        for (int i = 0; i < m; ++i) {
            const T* row = &a->v[size_t(i) * n];
            T* orow = &out->v[size_t(i) * n];
            T mx = row[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (int j = 0; j < n; ++j) denom += std::exp(double(row[j] - mx));
            double inv = 1.0 / denom;
            for (int j = 0; j < n; ++j) orow[j] = T(std::exp(double(row[j] - mx)) * inv);
        }
        if (out->requires_grad)
            record([a, out, m, n]() {
                for (int i = 0; i < m; ++i) {
                    const T* y = &out->v[size_t(i) * n];
                    const T* gy = &out->g[size_t(i) * n];
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j) dot += double(gy[j]) * double(y[j]);
                    for (int j = 0; j < n; ++j) a->g[size_t(i) * n + j] += T((double(gy[j]) - dot) * double(y[j]));
                }
            });
        return out;
    }

    // ---- layer normalization over the last axis ----

    TensorPtr<T> layer_norm(TensorPtr<T> x, TensorPtr<T> gamma, TensorPtr<T> beta, T eps = T(1e-5)) {
        if (x->shape.size() != 2) throw ValidationError("layer_norm: rank-2 input required, got " + shape_str(*x));
        int m = x->shape[0], n = x->shape[1];
        if (gamma->numel() != size_t(n) || beta->numel() != size_t(n))
            throw ValidationError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
        auto out = make({m, n}, {x, gamma, beta});
        auto xhat = std::make_shared<TensorT<T>>(std::vector<int>{m, n});
        auto istd = std::make_shared<TensorT<T>>(std::vector<int>{m});
        for (int i = 0; i < m; ++i) {
            const T* row = &x->v[size_t(i) * n];
            double mu = 0.0;
            for (int j = 0; j < n; ++j) mu += double(row[j]);
            mu /= n;
            double var = 0.0;
            for (int j = 0; j < n; ++j) {
                double d = double(row[j]) - mu;
                var += d * d;
            }
            var /= n;
            double is = 1.0 / std::sqrt(var + double(eps));
            istd->v[size_t(i)] = T(is);
            for (int j = 0; j < n; ++j) {
                T xh = T((double(row[j]) - mu) * is);
                xhat->v[size_t(i) * n + j] = xh;
                out->v[size_t(i) * n + j] = xh * gamma->v[size_t(j)] + beta->v[size_t(j)];
            }
        }
        if (out->requires_grad)
            record([x, gamma, beta, out, xhat, istd, m, n]() {
                for (int i = 0; i < m; ++i) {
                    const T* go = &out->g[size_t(i) * n];
                    const T* xh = &xhat->v[size_t(i) * n];
                    if (gamma->requires_grad)
                        for (int j = 0; j < n; ++j) gamma->g[size_t(j)] += go[j] * xh[j];
                    if (beta->requires_grad)
                        for (int j = 0; j < n; ++j) beta->g[size_t(j)] += go[j];
                    if (x->requires_grad) {
                        double sum_g = 0.0, sum_gx = 0.0;
                        for (int j = 0; j < n; ++j) {
                            double gxh = double(go[j]) * double(gamma->v[size_t(j)]);
                            sum_g += gxh;
                            sum_gx += gxh * double(xh[j]);
                        }
                        double is = double(istd->v[size_t(i)]);
                        for (int j = 0; j < n; ++j) {
                            double gxh = double(go[j]) * double(gamma->v[size_t(j)]);
                            x->g[size_t(i) * n + j] +=
                                T(is * (gxh - sum_g / n - double(xh[j]) * sum_gx / n));
                        }
                    }
                }
            });
        return out;
    }

    // ---- shape ops ----

    TensorPtr<T> transpose(TensorPtr<T> a) {
        if (a->shape.size() != 2) throw ValidationError("transpose: rank-2 input required, got " + shape_str(*a));
        int m = a->shape[0], n = a->shape[1];
        auto out = make({n, m}, {a});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out->v[size_t(j) * m + i] = a->v[size_t(i) * n + j];
        if (out->requires_grad)
            record([a, out, m, n]() {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) a->g[size_t(i) * n + j] += out->g[size_t(j) * m + i];
            });
        return out;
    }

    TensorPtr<T> slice_rows(TensorPtr<T> a, int r0, int r1) {
        if (a->shape.size() != 2) throw ValidationError("slice_rows: rank-2 input required, got " + shape_str(*a));
        int m = a->shape[0], n = a->shape[1];
        if (r0 < 0 || r1 > m || r0 >= r1)
            throw ValidationError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                  ") for " + shape_str(*a));
        auto out = make({r1 - r0, n}, {a});
        std::copy(a->v.begin() + size_t(r0) * n, a->v.begin() + size_t(r1) * n, out->v.begin());
        if (out->requires_grad)
            record([a, out, r0, n]() {
                for (size_t i = 0; i < out->numel(); ++i) a->g[size_t(r0) * n + i] += out->g[i];
            });
        return out;
    }

    TensorPtr<T> slice_cols(TensorPtr<T> a, int c0, int c1) {
        if (a->shape.size() != 2) throw ValidationError("slice_cols: rank-2 input required, got " + shape_str(*a));
        int m = a->shape[0], n = a->shape[1];
        if (c0 < 0 || c1 > n || c0 >= c1)
            throw ValidationError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                  ") for " + shape_str(*a));
        int w = c1 - c0;
        auto out = make({m, w}, {a});
        for (int i = 0; i < m; ++i)
            std::copy(&a->v[size_t(i) * n + c0], &a->v[size_t(i) * n + c1], &out->v[size_t(i) * w]);
        if (out->requires_grad)
            record([a, out, c0, n, w, m]() {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j) a->g[size_t(i) * n + c0 + j] += out->g[size_t(i) * w + j];
            });
        return out;
    }

    TensorPtr<T> gather_cols(TensorPtr<T> a, std::vector<int> idx) {
        if (a->shape.size() != 2) throw ValidationError("gather_cols: rank-2 input required, got " + shape_str(*a));
        int m = a->shape[0], n = a->shape[1];
        for (int c : idx)
            if (c < 0 || c >= n) throw ValidationError("gather_cols: column " + std::to_string(c) + " out of range");
        int w = int(idx.size());
        auto out = make({m, w}, {a});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out->v[size_t(i) * w + j] = a->v[size_t(i) * n + idx[size_t(j)]];
        if (out->requires_grad)
            record([a, out, idx, n, w, m]() {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        a->g[size_t(i) * n + idx[size_t(j)]] += out->g[size_t(i) * w + j];
            });
        return out;
    }

    TensorPtr<T> concat_rows(const std::vector<TensorPtr<T>>& parts) {
        if (parts.empty()) throw ValidationError("concat_rows: no inputs");
        int n = parts[0]->cols();
        int m = 0;
        for (const auto& p : parts) {
            if (p->shape.size() != 2 || p->shape[1] != n)
                throw ValidationError("concat_rows: column mismatch, expected " + std::to_string(n) + " got " +
                                      shape_str(*p));
            m += p->shape[0];
        }
        auto out = make({m, n}, parts);
        size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p->v.begin(), p->v.end(), out->v.begin() + long(off));
            off += p->numel();
        }
        if (out->requires_grad)
            record([parts, out]() {
                size_t off2 = 0;
                for (const auto& p : parts) {
                    if (p->requires_grad)
                        for (size_t i = 0; i < p->numel(); ++i) p->g[i] += out->g[off2 + i];
                    off2 += p->numel();
                }
            });
        return out;
    }

    TensorPtr<T> concat_cols(const std::vector<TensorPtr<T>>& parts) {
        if (parts.empty()) throw ValidationError("concat_cols: no inputs");
        int m = parts[0]->rows();
        int n = 0;
        for (const auto& p : parts) {
            if (p->shape.size() != 2 || p->shape[0] != m)
                throw ValidationError("concat_cols: row mismatch, expected " + std::to_string(m) + " got " +
                                      shape_str(*p));
            n += p->shape[1];
        }
        auto out = make({m, n}, parts);
        int coff = 0;
        for (const auto& p : parts) {
            int w = p->shape[1];
            for (int i = 0; i < m; ++i)
                std::copy(&p->v[size_t(i) * w], &p->v[size_t(i) * w + w], &out->v[size_t(i) * n + coff]);
            coff += w;
        }
        if (out->requires_grad)
            record([parts, out, m, n]() {
                int coff2 = 0;
                for (const auto& p : parts) {
                    int w = p->shape[1];
                    if (p->requires_grad)
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < w; ++j)
                                p->g[size_t(i) * w + j] += out->g[size_t(i) * n + coff2 + j];
                    coff2 += w;
                }
            });
        return out;
    }

    // Row lookup: table [V, d], ids [n] -> [n, d]. Backward scatter-adds.
    TensorPtr<T> embed(TensorPtr<T> table, const std::vector<int>& ids) {
        if (table->shape.size() != 2) throw ValidationError("embed: table must be rank-2, got " + shape_str(*table));
        int V = table->shape[0], d = table->shape[1];
        for (int id : ids)
            if (id < 0 || id >= V) throw ValidationError("embed: id " + std::to_string(id) + " out of range");
        auto out = make({int(ids.size()), d}, {table});
        for (size_t i = 0; i < ids.size(); ++i)
            std::copy(&table->v[size_t(ids[i]) * d], &table->v[size_t(ids[i]) * d + d], &out->v[i * size_t(d)]);
        if (out->requires_grad)
            record([table, out, ids, d]() {
                for (size_t i = 0; i < ids.size(); ++i)
                    for (int j = 0; j < d; ++j)
                        table->g[size_t(ids[i]) * d + j] += out->g[i * size_t(d) + j];
            });
        return out;
    }

    // Broadcast a [1, n] row over m rows.
    TensorPtr<T> broadcast_row(TensorPtr<T> a, int m) {
        if (a->shape.size() != 2 || a->shape[0] != 1)
            throw ValidationError("broadcast_row: [1, n] input required, got " + shape_str(*a));
        int n = a->shape[1];
        auto out = make({m, n}, {a});
        for (int i = 0; i < m; ++i) std::copy(a->v.begin(), a->v.end(), &out->v[size_t(i) * n]);
        if (out->requires_grad)
            record([a, out, m, n]() {
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += double(out->g[size_t(i) * n + j]);
                    a->g[size_t(j)] += T(acc);
                }
            });
        return out;
    }

    // ---- scaled dot-product attention ----
    //
    // q [Lq, dk], k [Lk, dk], v [Lk, dv] -> [Lq, dv]. mask, when present, is
    // [Lq, Lk] and added to the pre-softmax scores (use large negatives to
    // block positions).
    TensorPtr<T> attention(TensorPtr<T> q, TensorPtr<T> k, TensorPtr<T> v, TensorPtr<T> mask = nullptr) {
        if (q->shape.size() != 2 || k->shape.size() != 2 || v->shape.size() != 2)
            throw ValidationError("attention: rank-2 inputs required");
        if (q->shape[1] != k->shape[1])
            throw ValidationError("attention: key dim mismatch " + shape_str(*q) + " vs " + shape_str(*k));
        if (k->shape[0] != v->shape[0])
            throw ValidationError("attention: key/value length mismatch " + shape_str(*k) + " vs " + shape_str(*v));
        T inv_sqrt = T(1.0 / std::sqrt(double(q->shape[1])));
        auto scores = scale(matmul(q, transpose(k)), inv_sqrt);
        if (mask) scores = add(scores, mask);
        auto w = softmax_rows(scores);
        return matmul(w, v);
    }

    // ---- backward ----

    void backward(TensorPtr<T> loss) {
        if (!recording_) throw ValidationError("backward: tape is not recording");
        if (consumed_) throw ValidationError("backward: tape already consumed; rebuild the forward pass");
        if (loss->numel() != 1) throw ValidationError("backward: loss must be scalar, got " + shape_str(*loss));
        if (!loss->requires_grad)
            throw ValidationError("backward: loss does not depend on any tracked parameter");
        consumed_ = true;
        loss->g[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

    size_t op_count() const { return ops_.size(); }

  private:
    TensorPtr<T> like(const TensorPtr<T>& a) { return std::make_shared<TensorT<T>>(a->shape); }

    TensorPtr<T> make(std::vector<int> shape, const std::vector<TensorPtr<T>>& inputs) {
        auto out = std::make_shared<TensorT<T>>(std::move(shape));
        if (recording_) {
            for (const auto& in : inputs)
                if (in->requires_grad) {
                    out->enable_grad();
                    break;
                }
        }
        return out;
    }

    bool track(TensorPtr<T>& out, std::initializer_list<TensorPtr<T>> inputs) {
        if (!recording_) return false;
        bool any = false;
        for (const auto& in : inputs) any = any || in->requires_grad;
        if (any) out->enable_grad();
        return any;
    }

    void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

    static T sigmoid_val(T x) {
        return x >= T(0) ? T(1) / (T(1) + T(std::exp(-double(x)))) : [&] {
            T e = T(std::exp(double(x)));
            return e / (T(1) + e);
        }();
    }

    // C[i,j] = sum_l A[i,l] * B[l,j], double row accumulators, fixed order.
    static void matmul_value(const T* a, const T* b, T* c, int m, int k, int n) {
        std::vector<double> acc(static_cast<size_t>(n));
        for (int i = 0; i < m; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const T* arow = &a[size_t(i) * k];
            for (int l = 0; l < k; ++l) {
                double al = double(arow[l]);
                if (al == 0.0) continue;
                const T* brow = &b[size_t(l) * n];
                for (int j = 0; j < n; ++j) acc[size_t(j)] += al * double(brow[j]);
            }
            T* crow = &c[size_t(i) * n];
            for (int j = 0; j < n; ++j) crow[j] = T(acc[size_t(j)]);
        }
    }

    bool recording_;
    bool consumed_ = false;
    std::vector<std::function<void()>> ops_;
};

using Tensorf = TensorT<float>;
using Tapef = TapeT<float>;
using ParamSet = ParamSetT<float>;

}  // namespace kineta::nn
