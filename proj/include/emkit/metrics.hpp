// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Latitude-weighted forecast metrics (RMSE, NRMSE, ACC), great-circle
// distance, and mean distance error between tracks.
//
// ACC is the weighted inner product over the product of weighted norms of
// the raw fields. It deliberately performs no climatology subtraction; pass
// a climatology to acc_anomaly when anomaly correlation is wanted.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "emkit/loss.hpp"
#include "emkit/tensor.hpp"

namespace emkit {

// Per-variable normalization statistics from a reference period.
template <typename T>
struct VarStats {
    std::vector<std::string> names;  // size V
    std::vector<T> mu, sigma;        // size V; sigma_v > 0
};

// Evaluation grid: latitude/longitude axes in degrees plus derived row
// weights. stats may be empty when no normalized metrics are needed.
template <typename T>
struct EvalGrid {
    Tensor<T> lats;     // [H]
    Tensor<T> lons;     // [W]
    Tensor<T> weights;  // [H], mean 1
    VarStats<T> stats;
};

template <typename T>
inline EvalGrid<T> make_eval_grid(Tensor<T> lats, Tensor<T> lons, VarStats<T> stats = {}) {
    if (lons.rank() != 1 || lons.numel() == 0)
        throw ShapeError("make_eval_grid: expected non-empty rank-1 lons, got " +
                         shape_str(lons.shape()));
    auto w = latitude_weights(lats);
    return {std::move(lats), std::move(lons), std::move(w), std::move(stats)};
}

namespace detail {

template <typename T>
inline void check_field_pair(const Tensor<T>& pred, const Tensor<T>& truth,
                             const Tensor<T>& weights, const char* who) {
    if (pred.shape() != truth.shape())
        throw ShapeError(std::string(who) + ": pred " + shape_str(pred.shape()) +
                         " vs truth " + shape_str(truth.shape()));
    if (pred.rank() != 2)
        throw ShapeError(std::string(who) + ": expected [H,W] field, got " +
                         shape_str(pred.shape()));
    if (weights.rank() != 1 || weights.numel() != pred.shape()[0])
        throw ShapeError(std::string(who) + ": row weights " + shape_str(weights.shape()) +
                         " do not match " + std::to_string(pred.shape()[0]) + " grid rows");
}

}  // namespace detail

// sqrt( mean_ij L_i (pred - truth)^2 )
template <typename T>
inline T rmse(const Tensor<T>& pred, const Tensor<T>& truth, const Tensor<T>& weights) {
    detail::check_field_pair(pred, truth, weights, "rmse");
    const int64_t h = pred.shape()[0], w = pred.shape()[1];
    T acc = T(0);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            const T e = pred.data()[i * w + j] - truth.data()[i * w + j];
            acc += weights.data()[i] * e * e;
        }
    return std::sqrt(acc / static_cast<T>(h * w));
}

// RMSE of the standardized fields Z = (X - mu) / sigma, which reduces to
// RMSE / sigma since the shift cancels.
template <typename T>
inline T nrmse(const Tensor<T>& pred, const Tensor<T>& truth, const Tensor<T>& weights,
               T mu, T sigma) {
    (void)mu;  // kept in the signature to mirror the standardization it applies
    if (!(sigma > T(0)))
        throw ValueError("nrmse: sigma must be positive, got " + std::to_string(sigma));
    return rmse(pred, truth, weights) / sigma;
}

// Weighted cosine similarity of the raw fields:
//   sum L_i pred truth / sqrt( sum L_i pred^2 * sum L_i truth^2 )
template <typename T>
inline T acc(const Tensor<T>& pred, const Tensor<T>& truth, const Tensor<T>& weights) {
    detail::check_field_pair(pred, truth, weights, "acc");
    const int64_t h = pred.shape()[0], w = pred.shape()[1];
    T dot = T(0), np = T(0), nt = T(0);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            const T a = pred.data()[i * w + j];
            const T b = truth.data()[i * w + j];
            dot += weights.data()[i] * a * b;
            np += weights.data()[i] * a * a;
            nt += weights.data()[i] * b * b;
        }
    if (!(np > T(0)) || !(nt > T(0)))
        throw ValueError("acc: undefined metric, a field has zero weighted norm");
    return dot / std::sqrt(np * nt);
}

// Anomaly variant: both fields have a reference climatology subtracted first.
template <typename T>
inline T acc_anomaly(const Tensor<T>& pred, const Tensor<T>& truth,
                     const Tensor<T>& climatology, const Tensor<T>& weights) {
    if (climatology.shape() != pred.shape())
        throw ShapeError("acc_anomaly: climatology " + shape_str(climatology.shape()) +
                         " vs field " + shape_str(pred.shape()));
    return acc(pred - climatology, truth - climatology, weights);
}

inline constexpr double kEarthRadiusKm = 6371.0;

// Great-circle distance in km between two (lat, lon) points in degrees.
inline double haversine(double lat1, double lon1, double lat2, double lon2) {
    const double rad = M_PI / 180.0;
    const double dphi = (lat2 - lat1) * rad;
    const double dlam = (lon2 - lon1) * rad;
    const double s1 = std::sin(dphi / 2), s2 = std::sin(dlam / 2);
    const double a = s1 * s1 + std::cos(lat1 * rad) * std::cos(lat2 * rad) * s2 * s2;
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

// Geographic point sequence; MDE is the mean of pointwise distances between
// two time-aligned tracks.
struct GeoPoint {
    double lat, lon;
};

inline double mde(const std::vector<GeoPoint>& a, const std::vector<GeoPoint>& b) {
    if (a.size() != b.size())
        throw ValueError("mde: track lengths differ, " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    if (a.empty()) throw ValueError("mde: empty tracks");
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        sum += haversine(a[i].lat, a[i].lon, b[i].lat, b[i].lon);
    return sum / static_cast<double>(a.size());
}

// One row of a per-variable evaluation table.
template <typename T>
struct MetricRow {
    std::string name;
    T rmse, nrmse, acc;
};

// Evaluates [V,H,W] prediction/truth pairs variable by variable. NRMSE uses
// the grid's per-variable stats and requires them to cover every variable.
template <typename T>
inline std::vector<MetricRow<T>> evaluate(const Tensor<T>& pred, const Tensor<T>& truth,
                                          const EvalGrid<T>& grid) {
    if (pred.shape() != truth.shape())
        throw ShapeError("evaluate: pred " + shape_str(pred.shape()) + " vs truth " +
                         shape_str(truth.shape()));
    if (pred.rank() != 3)
        throw ShapeError("evaluate: expected [V,H,W], got " + shape_str(pred.shape()));
    const int64_t v = pred.shape()[0], h = pred.shape()[1], w = pred.shape()[2];
    if (static_cast<int64_t>(grid.stats.mu.size()) != v ||
        static_cast<int64_t>(grid.stats.sigma.size()) != v)
        throw ValueError("evaluate: stats cover " + std::to_string(grid.stats.mu.size()) +
                         " variables, fields have " + std::to_string(v));

    std::vector<MetricRow<T>> rows;
    rows.reserve(static_cast<size_t>(v));
    for (int64_t k = 0; k < v; ++k) {
        Tensor<T> p({h, w}), t({h, w});
        for (int64_t i = 0; i < h * w; ++i) {
            p.data()[i] = pred.data()[k * h * w + i];
            t.data()[i] = truth.data()[k * h * w + i];
        }
        const auto name = static_cast<size_t>(k) < grid.stats.names.size()
                              ? grid.stats.names[static_cast<size_t>(k)]
                              : "var" + std::to_string(k);
        rows.push_back({name, rmse(p, t, grid.weights),
                        nrmse(p, t, grid.weights, grid.stats.mu[static_cast<size_t>(k)],
                              grid.stats.sigma[static_cast<size_t>(k)]),
                        acc(p, t, grid.weights)});
    }
    return rows;
}

}  // namespace emkit
