// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic geophysical fields for end-to-end pipeline tests: a handful of
// named variables on a lat/lon grid, advected zonally and diffused each
// step. Longitude wraps; latitude reflects at the poles. Per-variable
// amplitudes span several orders of magnitude and each variable draws its
// initial state from a different spatial mode pool, so variables evolve at
// visibly different relative rates.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "emkit/io.hpp"
#include "emkit/metrics.hpp"
#include "emkit/tensor.hpp"

namespace emkit {

template <typename T>
struct FieldSnapshot {
    int64_t time = 0;
    Tensor<T> data;  // [V,H,W]
    std::vector<std::string> names;
    std::shared_ptr<const EvalGrid<T>> grid;
};

struct SyntheticSystem {
    int64_t height = 16;
    int64_t width = 32;
    std::vector<double> amplitudes = {1.0, 10.0, 0.1, 100.0};
    double velocity = 1.0;    // zonal drift in cells per step
    double diffusion = 0.05;  // explicit five-point smoothing coefficient
    uint64_t seed = 1;
};

inline io::json to_json(const SyntheticSystem& s) {
    return io::json{{"height", s.height},       {"width", s.width},
                    {"amplitudes", s.amplitudes}, {"velocity", s.velocity},
                    {"diffusion", s.diffusion}, {"seed", s.seed}};
}

// Missing keys keep their defaults so config files may be partial.
inline SyntheticSystem system_from_json(const io::json& j) {
    SyntheticSystem s;
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.amplitudes = j.value("amplitudes", s.amplitudes);
    s.velocity = j.value("velocity", s.velocity);
    s.diffusion = j.value("diffusion", s.diffusion);
    s.seed = j.value("seed", s.seed);
    return s;
}

template <typename T>
struct Dataset {
    std::vector<FieldSnapshot<T>> snaps;
    std::vector<std::string> names;
    std::shared_ptr<const EvalGrid<T>> grid;  // stats filled from the data

    int64_t size() const { return static_cast<int64_t>(snaps.size()); }
    int64_t variables() const { return static_cast<int64_t>(names.size()); }
};

namespace detail {

// Cell-centered equiangular axes; latitudes descend from the north pole.
template <typename T>
inline std::pair<Tensor<T>, Tensor<T>> grid_axes(int64_t h, int64_t w) {
    Tensor<T> lats({h}), lons({w});
    for (int64_t i = 0; i < h; ++i)
        lats[i] = T(90) - (static_cast<T>(i) + T(0.5)) * T(180) / static_cast<T>(h);
    for (int64_t j = 0; j < w; ++j) lons[j] = static_cast<T>(j) * T(360) / static_cast<T>(w);
    return {std::move(lats), std::move(lons)};
}

// One advect-then-diffuse update of a [H,W] slab.
template <typename T>
inline void step_slab(const T* in, T* out, int64_t h, int64_t w, double velocity,
                      double diffusion) {
    std::vector<T> adv(static_cast<size_t>(h * w));
    const double shift = velocity;
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            const double src = static_cast<double>(j) - shift;
            const double base = std::floor(src);
            const double frac = src - base;
            int64_t j0 = static_cast<int64_t>(base) % w;
            if (j0 < 0) j0 += w;
            const int64_t j1 = (j0 + 1) % w;
            adv[static_cast<size_t>(i * w + j)] =
                static_cast<T>((1.0 - frac) * static_cast<double>(in[i * w + j0]) +
                               frac * static_cast<double>(in[i * w + j1]));
        }
    }
    // Mirror rows across the poles, wrap columns.
    auto at = [&](int64_t i, int64_t j) -> T {
        if (i < 0) i = -i;
        if (i >= h) i = 2 * h - 2 - i;
        return adv[static_cast<size_t>(i * w + ((j % w) + w) % w)];
    };
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            const T c = at(i, j);
            const T lap = at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - T(4) * c;
            out[i * w + j] = c + static_cast<T>(diffusion) * lap;
        }
}

}  // namespace detail

template <typename T>
inline std::vector<std::string> default_variable_names(int64_t v) {
    std::vector<std::string> names;
    for (int64_t i = 0; i < v; ++i) names.push_back("var" + std::to_string(i));
    return names;
}

// Smooth random initial state: per variable, a few zonal-harmonic x
// pole-symmetric latitude modes. Later variables draw from higher
// wavenumbers, so their fields advect and diffuse at faster relative rates.
template <typename T>
inline Tensor<T> initial_state(const SyntheticSystem& sys) {
    const int64_t v = static_cast<int64_t>(sys.amplitudes.size());
    const int64_t h = sys.height, w = sys.width;
    Tensor<T> out({v, h, w});
    for (int64_t vi = 0; vi < v; ++vi) {
        Rng rng(sys.seed * 1000003 + static_cast<uint64_t>(vi));
        const int64_t modes = 3;
        for (int64_t m = 0; m < modes; ++m) {
            const int64_t kz = 1 + rng.uniform_int(0, static_cast<int>(1 + vi));
            const int64_t kl = rng.uniform_int(0, static_cast<int>(1 + vi));
            const double phase = rng.uniform() * 2.0 * M_PI;
            const double c = rng.normal() / static_cast<double>(m + 1);
            for (int64_t i = 0; i < h; ++i) {
                // cos(pi * kl * i / (h-1)) has zero slope at both poles, so
                // the mirrored diffusion stencil sees a consistent field.
                const double latm =
                    h > 1 ? std::cos(M_PI * static_cast<double>(kl * i) /
                                     static_cast<double>(h - 1))
                          : 1.0;
                for (int64_t j = 0; j < w; ++j) {
                    const double zon = std::cos(2.0 * M_PI * static_cast<double>(kz * j) /
                                                    static_cast<double>(w) +
                                                phase);
                    out.at(vi, i, j) += static_cast<T>(sys.amplitudes[static_cast<size_t>(vi)] *
                                                       c * zon * latm);
                }
            }
        }
    }
    return out;
}

template <typename T>
inline Tensor<T> step_fields(const SyntheticSystem& sys, const Tensor<T>& fields) {
    const int64_t v = fields.dim(0), h = fields.dim(1), w = fields.dim(2);
    Tensor<T> next(fields.shape());
    for (int64_t vi = 0; vi < v; ++vi)
        detail::step_slab(fields.data() + vi * h * w, next.data() + vi * h * w, h, w,
                          sys.velocity, sys.diffusion);
    return next;
}

template <typename T>
inline VarStats<T> dataset_stats(const std::vector<FieldSnapshot<T>>& snaps,
                                 const std::vector<std::string>& names) {
    const int64_t v = static_cast<int64_t>(names.size());
    VarStats<T> stats;
    stats.names = names;
    stats.mu.assign(static_cast<size_t>(v), T(0));
    stats.sigma.assign(static_cast<size_t>(v), T(0));
    const int64_t per = snaps.front().data.numel() / v;
    const int64_t n = static_cast<int64_t>(snaps.size()) * per;
    for (const auto& s : snaps)
        for (int64_t vi = 0; vi < v; ++vi)
            for (int64_t k = 0; k < per; ++k)
                stats.mu[static_cast<size_t>(vi)] += s.data[vi * per + k];
    for (auto& m : stats.mu) m /= static_cast<T>(n);
    for (const auto& s : snaps)
        for (int64_t vi = 0; vi < v; ++vi)
            for (int64_t k = 0; k < per; ++k) {
                const T d = s.data[vi * per + k] - stats.mu[static_cast<size_t>(vi)];
                stats.sigma[static_cast<size_t>(vi)] += d * d;
            }
    for (auto& s : stats.sigma) {
        s = std::sqrt(s / static_cast<T>(n));
        if (!(s > T(0))) s = T(1);  // constant variable; avoid dividing by zero
    }
    return stats;
}

template <typename T>
inline Dataset<T> generate_dataset(const SyntheticSystem& sys, int64_t steps) {
    if (steps < 2) throw ValueError("generate_dataset: need at least 2 steps");
    if (sys.height < 2 || sys.width < 2)
        throw ValueError("generate_dataset: grid must be at least 2x2");
    if (sys.amplitudes.empty()) throw ValueError("generate_dataset: no variables");
    if (!(sys.diffusion >= 0.0 && sys.diffusion <= 0.25))
        throw ValueError("generate_dataset: diffusion outside the stable range [0, 0.25]");

    Dataset<T> ds;
    ds.names = default_variable_names<T>(static_cast<int64_t>(sys.amplitudes.size()));
    auto [lats, lons] = detail::grid_axes<T>(sys.height, sys.width);

    Tensor<T> cur = initial_state<T>(sys);
    for (int64_t t = 0; t < steps; ++t) {
        FieldSnapshot<T> snap;
        snap.time = t;
        snap.data = cur;
        snap.names = ds.names;
        ds.snaps.push_back(std::move(snap));
        if (t + 1 < steps) cur = step_fields(sys, cur);
    }

    auto grid = std::make_shared<EvalGrid<T>>(
        make_eval_grid(std::move(lats), std::move(lons), dataset_stats(ds.snaps, ds.names)));
    ds.grid = grid;
    for (auto& s : ds.snaps) s.grid = grid;
    return ds;
}

// ---------------------------------------------------------------------------
// Disk format: <dir>/manifest.json plus one tensor pair per step
// (step0000.bin/.json, ...). The manifest carries the axes and the
// per-variable statistics so metrics do not need the generator.
// ---------------------------------------------------------------------------

template <typename T>
inline void write_dataset(const std::string& dir, const Dataset<T>& ds) {
    if (ds.snaps.empty()) throw ValueError("write_dataset: empty dataset");
    std::filesystem::create_directories(dir);
    io::json manifest;
    manifest["format"] = "emkit-dataset-v1";
    manifest["names"] = ds.names;
    manifest["steps"] = ds.size();
    manifest["height"] = ds.snaps.front().data.dim(1);
    manifest["width"] = ds.snaps.front().data.dim(2);
    manifest["mu"] = ds.grid->stats.mu;
    manifest["sigma"] = ds.grid->stats.sigma;
    io::write_json(dir + "/manifest.json", manifest);
    char name[32];
    for (int64_t t = 0; t < ds.size(); ++t) {
        std::snprintf(name, sizeof(name), "step%04lld", static_cast<long long>(t));
        io::write_tensor(dir + "/" + name, ds.snaps[static_cast<size_t>(t)].data);
    }
}

template <typename T>
inline Dataset<T> read_dataset(const std::string& dir) {
    const io::json manifest = io::read_json(dir + "/manifest.json");
    if (manifest.value("format", "") != "emkit-dataset-v1")
        throw io::IoError("not an emkit dataset: " + dir);
    Dataset<T> ds;
    ds.names = manifest.at("names").get<std::vector<std::string>>();
    const int64_t steps = manifest.at("steps");
    const int64_t h = manifest.at("height"), w = manifest.at("width");

    VarStats<T> stats;
    stats.names = ds.names;
    stats.mu = manifest.at("mu").get<std::vector<T>>();
    stats.sigma = manifest.at("sigma").get<std::vector<T>>();

    auto [lats, lons] = detail::grid_axes<T>(h, w);
    auto grid = std::make_shared<EvalGrid<T>>(
        make_eval_grid(std::move(lats), std::move(lons), std::move(stats)));
    ds.grid = grid;

    char name[32];
    for (int64_t t = 0; t < steps; ++t) {
        std::snprintf(name, sizeof(name), "step%04lld", static_cast<long long>(t));
        FieldSnapshot<T> snap;
        snap.time = t;
        snap.data = io::read_tensor<T>(dir + "/" + name);
        if (snap.data.rank() != 3 || snap.data.dim(1) != h || snap.data.dim(2) != w)
            throw io::IoError("dataset step " + std::to_string(t) + " has shape " +
                              shape_str(snap.data.shape()));
        snap.names = ds.names;
        snap.grid = grid;
        ds.snaps.push_back(std::move(snap));
    }
    return ds;
}

// Per-variable z-scoring used around the model: training and rollouts run in
// normalized space, metrics on the raw fields.
template <typename T>
inline Tensor<T> normalize_fields(const Tensor<T>& raw, const VarStats<T>& stats) {
    const int64_t v = static_cast<int64_t>(stats.mu.size());
    if (raw.dim(-3) != v)
        throw ShapeError("normalize_fields: " + std::to_string(v) + " stats for " +
                         shape_str(raw.shape()));
    Tensor<T> out(raw.shape());
    const int64_t per = raw.dim(-1) * raw.dim(-2);
    const int64_t outer = raw.numel() / (per * v);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t vi = 0; vi < v; ++vi) {
            const T mu = stats.mu[static_cast<size_t>(vi)];
            const T inv = T(1) / stats.sigma[static_cast<size_t>(vi)];
            const int64_t base = (o * v + vi) * per;
            for (int64_t k = 0; k < per; ++k) out[base + k] = (raw[base + k] - mu) * inv;
        }
    return out;
}

template <typename T>
inline Tensor<T> denormalize_fields(const Tensor<T>& norm, const VarStats<T>& stats) {
    const int64_t v = static_cast<int64_t>(stats.mu.size());
    if (norm.dim(-3) != v)
        throw ShapeError("denormalize_fields: " + std::to_string(v) + " stats for " +
                         shape_str(norm.shape()));
    Tensor<T> out(norm.shape());
    const int64_t per = norm.dim(-1) * norm.dim(-2);
    const int64_t outer = norm.numel() / (per * v);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t vi = 0; vi < v; ++vi) {
            const T mu = stats.mu[static_cast<size_t>(vi)];
            const T sg = stats.sigma[static_cast<size_t>(vi)];
            const int64_t base = (o * v + vi) * per;
            for (int64_t k = 0; k < per; ++k) out[base + k] = norm[base + k] * sg + mu;
        }
    return out;
}

}  // namespace emkit
