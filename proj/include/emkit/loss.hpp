// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Adaptive training loss: a latitude-weighted squared-error term and a
// per-variable uncertainty term, blended by sinusoidal coefficients
// alpha = (1 - sin theta)/2 and beta = (1 + sin theta)/2 driven by a single
// learnable angle. Includes closed-form gradients for theta, the per-variable
// log-variances w, and the prediction tensor, plus a scalar simulator that
// replays the blend dynamics under a prescribed error schedule.
//
// Coefficient exactness: beta is computed as 1 - alpha, so alpha + beta
// evaluates to exactly 1.0 in floating point for every theta.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "emkit/tensor.hpp"

namespace emkit {

// Which term the (1 - sin theta)/2 coefficient multiplies. Standard puts it
// on the latitude term so growing theta shifts emphasis onto the uncertainty
// term; Swapped reverses the roles (kept as a baseline variant).
enum class BlendOrientation { Standard, Swapped };

// Row weights proportional to cos(latitude), scaled so they average to 1.
// lats_deg holds one latitude per grid row, in degrees.
template <typename T>
inline Tensor<T> latitude_weights(const Tensor<T>& lats_deg) {
    if (lats_deg.rank() != 1 || lats_deg.numel() == 0)
        throw ShapeError("latitude_weights: expected non-empty rank-1 lats, got " +
                         shape_str(lats_deg.shape()));
    const int64_t n = lats_deg.numel();
    Tensor<T> w({n});
    long double sum = 0.0L;
    for (int64_t i = 0; i < n; ++i) {
        const T c = std::cos(lats_deg.data()[i] * T(M_PI) / T(180));
        w.data()[i] = c;
        sum += static_cast<long double>(c);
    }
    if (!(sum > static_cast<long double>(n) * 1e-12L))
        throw ValueError("latitude_weights: degenerate grid, cos-latitude sum is zero");
    const T scale = static_cast<T>(static_cast<long double>(n) / sum);
    for (int64_t i = 0; i < n; ++i) w.data()[i] *= scale;
    return w;
}

namespace detail {

// Accepts [V,H,W] or [B,V,H,W]; returns {B,V,H,W} with B=1 for rank 3.
struct FieldDims {
    int64_t b, v, h, w;
    int64_t elems() const { return b * v * h * w; }
};

template <typename T>
inline FieldDims field_dims(const Tensor<T>& pred, const Tensor<T>& truth,
                            const char* who) {
    if (pred.shape() != truth.shape())
        throw ShapeError(std::string(who) + ": pred " + shape_str(pred.shape()) +
                         " vs truth " + shape_str(truth.shape()));
    const auto& s = pred.shape();
    if (s.size() == 3) return {1, s[0], s[1], s[2]};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
    throw ShapeError(std::string(who) + ": expected [V,H,W] or [B,V,H,W], got " +
                     shape_str(pred.shape()));
}

template <typename T>
inline void check_row_weights(const Tensor<T>& row_weights, int64_t h, const char* who) {
    if (row_weights.rank() != 1 || row_weights.numel() != h)
        throw ShapeError(std::string(who) + ": row weights " + shape_str(row_weights.shape()) +
                         " do not match " + std::to_string(h) + " grid rows");
}

template <typename T>
inline void check_logvar(const Tensor<T>& w, int64_t v, const char* who) {
    if (w.rank() != 1 || w.numel() != v)
        throw ShapeError(std::string(who) + ": log-variance vector " + shape_str(w.shape()) +
                         " does not match " + std::to_string(v) + " variables");
}

}  // namespace detail

// Mean over every element of L_row * (pred - truth)^2.
template <typename T>
inline T loss_lat(const Tensor<T>& pred, const Tensor<T>& truth,
                  const Tensor<T>& row_weights) {
    const auto d = detail::field_dims(pred, truth, "loss_lat");
    detail::check_row_weights(row_weights, d.h, "loss_lat");
    const T* p = pred.data();
    const T* t = truth.data();
    const T* lw = row_weights.data();
    T acc = T(0);
    int64_t idx = 0;
    for (int64_t bv = 0; bv < d.b * d.v; ++bv)
        for (int64_t i = 0; i < d.h; ++i)
            for (int64_t j = 0; j < d.w; ++j, ++idx) {
                const T e = p[idx] - t[idx];
                acc += lw[i] * e * e;
            }
    return acc / static_cast<T>(d.elems());
}

// Mean over every element of (pred - truth)^2 * exp(-w_v) + w_v, where v is
// the element's variable index.
template <typename T>
inline T loss_var(const Tensor<T>& pred, const Tensor<T>& truth,
                  const Tensor<T>& log_var) {
    const auto d = detail::field_dims(pred, truth, "loss_var");
    detail::check_logvar(log_var, d.v, "loss_var");
    const T* p = pred.data();
    const T* t = truth.data();
    T acc = T(0);
    int64_t idx = 0;
    for (int64_t b = 0; b < d.b; ++b)
        for (int64_t v = 0; v < d.v; ++v) {
            const T inv_var = std::exp(-log_var.data()[v]);
            const T wv = log_var.data()[v];
            for (int64_t ij = 0; ij < d.h * d.w; ++ij, ++idx) {
                const T e = p[idx] - t[idx];
                acc += e * e * inv_var + wv;
            }
        }
    return acc / static_cast<T>(d.elems());
}

template <typename T>
inline T blend_alpha(T theta, BlendOrientation o = BlendOrientation::Standard) {
    const T a = (T(1) - std::sin(theta)) / T(2);
    return o == BlendOrientation::Standard ? a : T(1) - a;
}

template <typename T>
inline T blend_beta(T theta, BlendOrientation o = BlendOrientation::Standard) {
    return T(1) - blend_alpha(theta, o);
}

// d(total)/d(theta) given the two term values: cos(theta)/2 * (var - lat)
// for the Standard orientation, negated for Swapped.
template <typename T>
inline T blend_theta_grad(T theta, T lat, T var,
                          BlendOrientation o = BlendOrientation::Standard) {
    const T sgn = o == BlendOrientation::Standard ? T(1) : T(-1);
    return sgn * std::cos(theta) / T(2) * (var - lat);
}

// Both terms plus the blend, evaluated together so callers can log the pieces
// that the total was actually built from.
template <typename T>
struct LossBreakdown {
    T total;
    T lat;    // latitude-weighted term (A)
    T var;    // uncertainty term (B)
    T alpha;  // coefficient on lat
    T beta;   // coefficient on var; alpha + beta == 1 exactly
};

template <typename T>
inline LossBreakdown<T> loss_breakdown(const Tensor<T>& pred, const Tensor<T>& truth,
                                       const Tensor<T>& log_var, T theta,
                                       const Tensor<T>& row_weights,
                                       BlendOrientation o = BlendOrientation::Standard) {
    LossBreakdown<T> out;
    out.lat = loss_lat(pred, truth, row_weights);
    out.var = loss_var(pred, truth, log_var);
    out.alpha = blend_alpha(theta, o);
    out.beta = T(1) - out.alpha;
    out.total = out.alpha * out.lat + out.beta * out.var;
    return out;
}

template <typename T>
inline T loss_total(const Tensor<T>& pred, const Tensor<T>& truth,
                    const Tensor<T>& log_var, T theta,
                    const Tensor<T>& row_weights,
                    BlendOrientation o = BlendOrientation::Standard) {
    return loss_breakdown(pred, truth, log_var, theta, row_weights, o).total;
}

// Closed-form gradients of the blended loss.
template <typename T>
struct LossGrads {
    T dtheta;            // cos(theta)/2 * (B - A) for Standard orientation
    Tensor<T> dlog_var;  // [V]; beta * dlog_var_inner
    // Gradient of the uncertainty term alone. Training loops step w with
    // this so it keeps tracking ln E even when the blend parks beta at 0;
    // with the blended gradient the pair (theta at the lower clamp, frozen
    // w) is a deadlock no optimizer escapes.
    Tensor<T> dlog_var_inner;  // [V]
    Tensor<T> dpred;           // same shape as pred
};

template <typename T>
inline LossGrads<T> loss_grads(const Tensor<T>& pred, const Tensor<T>& truth,
                               const Tensor<T>& log_var, T theta,
                               const Tensor<T>& row_weights,
                               BlendOrientation o = BlendOrientation::Standard) {
    const auto d = detail::field_dims(pred, truth, "loss_grads");
    detail::check_row_weights(row_weights, d.h, "loss_grads");
    detail::check_logvar(log_var, d.v, "loss_grads");

    const auto parts = loss_breakdown(pred, truth, log_var, theta, row_weights, o);

    LossGrads<T> g;
    g.dtheta = blend_theta_grad(theta, parts.lat, parts.var, o);
    g.dlog_var = Tensor<T>({d.v});
    g.dlog_var_inner = Tensor<T>({d.v});
    g.dpred = Tensor<T>(pred.shape());

    const T* p = pred.data();
    const T* t = truth.data();
    const T* lw = row_weights.data();
    const T inv_n = T(1) / static_cast<T>(d.elems());
    int64_t idx = 0;
    for (int64_t b = 0; b < d.b; ++b)
        for (int64_t v = 0; v < d.v; ++v) {
            const T inv_var = std::exp(-log_var.data()[v]);
            T dw = T(0);
            for (int64_t i = 0; i < d.h; ++i)
                for (int64_t j = 0; j < d.w; ++j, ++idx) {
                    const T e = p[idx] - t[idx];
                    dw += T(1) - e * e * inv_var;
                    g.dpred.data()[idx] =
                        T(2) * e * inv_n *
                        (parts.alpha * lw[i] + parts.beta * inv_var);
                }
            g.dlog_var_inner.data()[v] += dw * inv_n;
            g.dlog_var.data()[v] += parts.beta * dw * inv_n;
        }
    return g;
}

// ---------------------------------------------------------------------------
// Scalar blend dynamics.
//
// Under a uniform per-element squared error E_k the two terms collapse to
// A_k = E_k (row weights average to 1) and B_k = E_k * exp(-w) + w with a
// single shared w. The simulator descends that scalar system:
//
//   w     <- w - eta * (1 - E_k * exp(-w))          (inner objective of B)
//   theta <- theta - eta * cos(theta)/2 * (B_k - A_k)
//   theta <- clamp(theta, -pi/2, pi/2)
//
// The w step deliberately omits the beta factor: w descends its own inner
// objective at full rate so it tracks ln E_k regardless of where the blend
// currently sits. The literal blended gradient beta * (1 - E exp(-w)) is
// available via beta_scaled_w; starting near theta = -pi/2 it scales the w
// step by beta ~= 0 and the whole system stays frozen for any practical
// step budget, which is the degenerate regime the default avoids.
// ---------------------------------------------------------------------------

struct DynamicsOptions {
    bool beta_scaled_w = false;
    BlendOrientation orientation = BlendOrientation::Standard;
    // The weighted branch A_k = lat_scale * E_k. Values below 1 model errors
    // concentrated where the row weights are small; with a flat error series
    // this pins B above A and drives theta to the lower clamp.
    double lat_scale = 1.0;
};

template <typename T>
struct DynamicsTrajectory {
    // State after k steps; index 0 is the initial state, size is steps + 1.
    std::vector<T> theta, w, alpha, beta, a, b;
};

template <typename T>
inline std::vector<T> const_schedule(T e, int64_t steps) {
    if (!(e > T(0))) throw ValueError("const_schedule: error must be positive");
    return std::vector<T>(static_cast<size_t>(steps), e);
}

template <typename T>
inline std::vector<T> geometric_schedule(T e0, T ratio, int64_t steps) {
    if (!(e0 > T(0)) || !(ratio > T(0)))
        throw ValueError("geometric_schedule: error and ratio must be positive");
    std::vector<T> out(static_cast<size_t>(steps));
    T e = e0;
    for (auto& x : out) {
        x = e;
        e *= ratio;
    }
    return out;
}

template <typename T>
inline DynamicsTrajectory<T> dynamics_sim(const std::vector<T>& error_schedule, T eta,
                                          T theta0, T w0,
                                          DynamicsOptions opts = {}) {
    const T half_pi = T(M_PI) / T(2);
    if (!(theta0 >= -half_pi && theta0 <= half_pi))
        throw ValueError("dynamics_sim: theta0 outside [-pi/2, pi/2]");
    if (!(eta >= T(0))) throw ValueError("dynamics_sim: eta must be non-negative");

    if (error_schedule.empty())
        throw ValueError("dynamics_sim: empty error schedule");
    if (!(opts.lat_scale > 0)) throw ValueError("dynamics_sim: lat_scale must be positive");

    DynamicsTrajectory<T> tr;
    const size_t steps = error_schedule.size();
    tr.theta.reserve(steps + 1);
    tr.w.reserve(steps + 1);
    tr.alpha.reserve(steps + 1);
    tr.beta.reserve(steps + 1);
    tr.a.reserve(steps + 1);
    tr.b.reserve(steps + 1);

    T theta = theta0;
    T w = w0;
    auto record = [&](T e) {
        const T alpha = blend_alpha(theta, opts.orientation);
        const T beta = T(1) - alpha;
        tr.theta.push_back(theta);
        tr.w.push_back(w);
        tr.alpha.push_back(alpha);
        tr.beta.push_back(beta);
        tr.a.push_back(static_cast<T>(opts.lat_scale) * e);
        tr.b.push_back(e * std::exp(-w) + w);
    };

    for (size_t k = 0; k < steps; ++k) {
        const T e = error_schedule[k];
        if (!(e > T(0))) throw ValueError("dynamics_sim: error schedule must be positive");
        record(e);
        const T a = tr.a.back();
        const T b = tr.b.back();

        T w_rate = T(1) - e * std::exp(-w);
        if (opts.beta_scaled_w) w_rate *= tr.beta.back();
        w -= eta * w_rate;

        theta -= eta * blend_theta_grad(theta, a, b, opts.orientation);
        theta = std::min(std::max(theta, -half_pi), half_pi);
    }
    // Final state is scored against the last schedule entry.
    record(error_schedule.back());
    return tr;
}

}  // namespace emkit
