#pragma once

// Central finite-difference gradient verification. The loss builder is
// re-invoked for every probe, so it must rebuild the full forward pass from
// the current parameter values on the tape it is given.

#include <cmath>
#include <functional>
#include <string>

#include "kineta/tensor.hpp"

namespace kineta::nn {

struct GradCheckReport {
    double max_err = 0.0;      // worst |fd - analytic| / max(1, |fd|, |analytic|)
    std::string worst_param;
    size_t worst_index = 0;
    size_t checked = 0;

    bool ok(double tol) const { return max_err <= tol; }
};

// `build_loss` computes the scalar loss on the given tape from the current
// parameter values. `max_coords_per_param` == 0 checks every coordinate;
// otherwise a deterministic stride subsamples.
template <typename T>
inline GradCheckReport check_gradients(ParamSetT<T>& params,
                                       const std::function<TensorPtr<T>(TapeT<T>&)>& build_loss,
                                       double step = 1e-3, size_t max_coords_per_param = 0) {
    params.zero_grad();
    {
        TapeT<T> tape(true);
        auto loss = build_loss(tape);
        tape.backward(loss);
    }
    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.items.size());
    for (auto& [name, p] : params.items) analytic.push_back(p->g);

    auto eval = [&]() -> double {
        TapeT<T> tape(false);
        return double(build_loss(tape)->v[0]);
    };

    GradCheckReport rep;
    for (size_t pi = 0; pi < params.items.size(); ++pi) {
        auto& [name, p] = params.items[pi];
        size_t n = p->numel();
        size_t stride = 1;
        if (max_coords_per_param && n > max_coords_per_param) stride = n / max_coords_per_param;
        for (size_t j = 0; j < n; j += stride) {
            T saved = p->v[j];
            p->v[j] = T(double(saved) + step);
            double up = eval();
            p->v[j] = T(double(saved) - step);
            double down = eval();
            p->v[j] = saved;
            double fd = (up - down) / (2.0 * step);
            double an = double(analytic[pi][j]);
            double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
            ++rep.checked;
            if (err > rep.max_err) {
                rep.max_err = err;
                rep.worst_param = name;
                rep.worst_index = j;
            }
        }
    }
    return rep;
}

}  // namespace kineta::nn
