#ifndef ECFNET_TEST_HELPERS_HPP
#define ECFNET_TEST_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ecfnet/ops.hpp"
#include "ecfnet/param.hpp"
#include "ecfnet/random.hpp"
#include "ecfnet/tensor.hpp"

namespace testutil {

using ecfnet::Param;
using ecfnet::Rng;
using ecfnet::scalar;
using ecfnet::Shape;
using ecfnet::TapePtr;
using ecfnet::Tensor;

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(s);
    for (auto& v : *t.data) v = rng.uniform(lo, hi);
    return t;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1e-3, std::abs(a), std::abs(b)});
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data->size(); ++i)
        m = std::max(m, std::abs((*a.data)[i] - (*b.data)[i]));
    return m;
}

// Fixed random projection to a scalar so every output element
// contributes a distinct gradient signal.
inline Tensor project(const Tensor& y, Rng& rng) {
    Tensor coeff = random_tensor(y.shape, rng);
    return ecfnet::sum_all(ecfnet::mul(y, coeff));
}

// Central finite differences on every element of every listed parameter
// against the analytic tape gradient. `loss_fn(tape)` must rebuild the
// graph from the parameters' current values; a null tape means pure
// forward. Returns the worst relative error seen.
inline double grad_check(const std::vector<Param*>& params,
                         const std::function<Tensor(const TapePtr&)>& loss_fn, double h = 1e-4) {
    TapePtr tape = ecfnet::Tape::create();
    Tensor loss = loss_fn(tape);
    tape->backward(loss);
    // Snapshot analytic gradients before any forward-only evaluation: calling
    // loss_fn(nullptr) below detaches every parameter from the tape.
    std::vector<std::vector<scalar>> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) {
        const auto* g = p->grad(tape);
        analytic.push_back(g ? *g : std::vector<scalar>{});
    }
    double worst = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param* p = params[pi];
        auto& buf = *p->value.data;
        for (std::size_t i = 0; i < buf.size(); ++i) {
            const scalar saved = buf[i];
            buf[i] = saved + h;
            const scalar up = (*loss_fn(nullptr).data)[0];
            buf[i] = saved - h;
            const scalar dn = (*loss_fn(nullptr).data)[0];
            buf[i] = saved;
            const double fd = (up - dn) / (2 * h);
            const double an = analytic[pi].empty() ? 0.0 : analytic[pi][i];
            worst = std::max(worst, rel_err(an, fd));
        }
    }
    return worst;
}

inline Param make_param(const char* name, const Tensor& value) {
    Param p;
    p.name = name;
    p.value = value;
    return p;
}

}  // namespace testutil

#endif
