// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Cyclone-center tracking over a sequence of surface fields. Each step
// searches the mean-sea-level pressure minimum within a great-circle radius
// of the current fix, then validates the candidate against pressure, wind
// and displacement thresholds; the first violation ends the track.
//
// Fix 0 is the supplied initial position: it is recorded as given (values
// sampled from the first field around it) and is not threshold-checked,
// so a track is never empty. Tracking then advances one fix per subsequent
// field. MSL argmin ties resolve to the lowest flat index i*W + j, and the
// wind maximum is taken over the same search disk as the center search.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "emkit/metrics.hpp"
#include "emkit/tensor.hpp"

namespace emkit {

// Surface state at one time step, each field [H,W].
template <typename T>
struct SurfaceFields {
    Tensor<T> msl;  // mean sea-level pressure, Pa
    Tensor<T> u10;  // 10 m eastward wind, m/s
    Tensor<T> v10;  // 10 m northward wind, m/s
};

struct TrackerConfig {
    double radius_km = 278.0;    // search disk around the current fix
    double p_max = 101200.0;     // candidate pressure above this ends the track
    double wind_min = 10.2;      // disk wind maximum below this ends the track
    double disp_max_km = 400.0;  // step displacement above this ends the track
};

struct TrackFix {
    int64_t t;              // time index into the field sequence
    double lat, lon;        // degrees
    double msl;             // Pa at the fix cell
    double wind;            // max 10 m wind speed in the search disk, m/s
    double displacement_km; // from the previous fix; 0 for fix 0
};

using Track = std::vector<TrackFix>;

namespace detail {

template <typename T>
inline void check_surface(const SurfaceFields<T>& f, int64_t h, int64_t w, int64_t t) {
    const Shape want{h, w};
    if (f.msl.shape() != want || f.u10.shape() != want || f.v10.shape() != want)
        throw ShapeError("track_cyclone: fields at step " + std::to_string(t) +
                         " do not all have shape " + shape_str(want));
}

// Cells within radius_km of (lat, lon); flat indices in ascending order.
template <typename T>
inline std::vector<int64_t> disk_cells(const EvalGrid<T>& grid, double lat, double lon,
                                       double radius_km) {
    const int64_t h = grid.lats.numel(), w = grid.lons.numel();
    std::vector<int64_t> cells;
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            const double d = haversine(lat, lon, static_cast<double>(grid.lats.data()[i]),
                                       static_cast<double>(grid.lons.data()[j]));
            if (d <= radius_km) cells.push_back(i * w + j);
        }
    return cells;
}

}  // namespace detail

// Tracks a cyclone from an initial position through a field sequence.
// The returned track has between 1 and fields.size() fixes.
template <typename T>
inline Track track_cyclone(const std::vector<SurfaceFields<T>>& fields, double init_lat,
                           double init_lon, const EvalGrid<T>& grid,
                           TrackerConfig cfg = {}) {
    if (fields.empty()) throw ValueError("track_cyclone: empty field sequence");
    const int64_t h = grid.lats.numel(), w = grid.lons.numel();
    for (size_t t = 0; t < fields.size(); ++t)
        detail::check_surface(fields[t], h, w, static_cast<int64_t>(t));

    double lat_lo = grid.lats.data()[0], lat_hi = grid.lats.data()[0];
    for (int64_t i = 1; i < h; ++i) {
        lat_lo = std::min(lat_lo, static_cast<double>(grid.lats.data()[i]));
        lat_hi = std::max(lat_hi, static_cast<double>(grid.lats.data()[i]));
    }
    double lon_lo = grid.lons.data()[0], lon_hi = grid.lons.data()[0];
    for (int64_t j = 1; j < w; ++j) {
        lon_lo = std::min(lon_lo, static_cast<double>(grid.lons.data()[j]));
        lon_hi = std::max(lon_hi, static_cast<double>(grid.lons.data()[j]));
    }
    if (init_lat < lat_lo || init_lat > lat_hi || init_lon < lon_lo || init_lon > lon_hi)
        throw ValueError("track_cyclone: init (" + std::to_string(init_lat) + ", " +
                         std::to_string(init_lon) + ") outside grid");

    auto disk_stats = [&](const SurfaceFields<T>& f, const std::vector<int64_t>& cells) {
        // (argmin cell, min msl, max wind) over the disk; ties keep the
        // first (lowest) flat index because the scan is ascending.
        int64_t best = cells.front();
        double best_msl = static_cast<double>(f.msl.data()[best]);
        double wind = 0.0;
        for (int64_t c : cells) {
            const double p = static_cast<double>(f.msl.data()[c]);
            if (p < best_msl) {
                best_msl = p;
                best = c;
            }
            const double u = static_cast<double>(f.u10.data()[c]);
            const double v = static_cast<double>(f.v10.data()[c]);
            wind = std::max(wind, std::sqrt(u * u + v * v));
        }
        return std::tuple<int64_t, double, double>{best, best_msl, wind};
    };

    Track track;
    {
        // Fix 0: the given position, reported with the nearest-cell pressure
        // and the disk wind maximum from the first field.
        auto cells = detail::disk_cells(grid, init_lat, init_lon, cfg.radius_km);
        if (cells.empty())
            throw ValueError("track_cyclone: no grid cells within search radius of init");
        int64_t nearest = cells.front();
        double nearest_d = haversine(init_lat, init_lon,
                                     static_cast<double>(grid.lats.data()[nearest / w]),
                                     static_cast<double>(grid.lons.data()[nearest % w]));
        double wind = 0.0;
        for (int64_t c : cells) {
            const double d = haversine(init_lat, init_lon,
                                       static_cast<double>(grid.lats.data()[c / w]),
                                       static_cast<double>(grid.lons.data()[c % w]));
            if (d < nearest_d) {
                nearest_d = d;
                nearest = c;
            }
            const double u = static_cast<double>(fields[0].u10.data()[c]);
            const double v = static_cast<double>(fields[0].v10.data()[c]);
            wind = std::max(wind, std::sqrt(u * u + v * v));
        }
        track.push_back({0, init_lat, init_lon,
                         static_cast<double>(fields[0].msl.data()[nearest]), wind, 0.0});
    }

    for (size_t t = 1; t < fields.size(); ++t) {
        const auto& prev = track.back();
        auto cells = detail::disk_cells(grid, prev.lat, prev.lon, cfg.radius_km);
        if (cells.empty()) break;  // fix drifted off-grid; nothing to search
        auto [best, best_msl, wind] = disk_stats(fields[t], cells);
        const double cand_lat = static_cast<double>(grid.lats.data()[best / w]);
        const double cand_lon = static_cast<double>(grid.lons.data()[best % w]);
        const double disp = haversine(prev.lat, prev.lon, cand_lat, cand_lon);
        if (best_msl > cfg.p_max || wind < cfg.wind_min || disp > cfg.disp_max_km) break;
        track.push_back({static_cast<int64_t>(t), cand_lat, cand_lon, best_msl, wind, disp});
    }
    return track;
}

// Convenience: the (lat, lon) polyline of a track, for distance metrics.
inline std::vector<GeoPoint> track_points(const Track& t) {
    std::vector<GeoPoint> pts;
    pts.reserve(t.size());
    for (const auto& f : t) pts.push_back({f.lat, f.lon});
    return pts;
}

}  // namespace emkit
