// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Wall-clock comparison of the fused and plain multi-scale paths on a shared
// input, forward plus full backward per repetition, median over repeats.
// Numerical agreement between the two paths is reported alongside the times.

#pragma once

#include <chrono>
#include <ostream>

#include "emkit/multiconv.hpp"

namespace emkit {

struct BenchResult {
    int64_t batch = 0, in_ch = 0, out_ch = 0, h = 0, w = 0;
    int repeats = 0, workers = 1;
    std::string dtype;
    double plain_s = 0, fused_s = 0, speedup = 0;
    double out_diff_mean = 0, out_diff_std = 0;   // |fused - plain| over all outputs
    double gk1_max = 0, gk3_max = 0, gk5_max = 0; // max |fused - plain| per weight grad
    double gx_max = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

template <class T>
BenchResult bench_multiconv(int64_t batch, int64_t in_ch, int64_t out_ch, int64_t h, int64_t w,
                            int repeats = 5, int warmup = 1, uint64_t seed = 1234,
                            int workers = 1) {
    if (repeats < 1) throw ValueError("bench_multiconv: repeats must be >= 1");
    BenchResult res;
    res.batch = batch;
    res.in_ch = in_ch;
    res.out_ch = out_ch;
    res.h = h;
    res.w = w;
    res.repeats = repeats;
    res.workers = workers;
    res.dtype = std::is_same_v<T, float> ? "float32" : "float64";

    const auto x = seeded_tensor<T>({batch, in_ch, h, w}, seed, Dist::Normal);
    const auto go = seeded_tensor<T>({batch, out_ch, h, w}, seed + 1, Dist::Normal);
    const auto set = seeded_kernel_set<T>(out_ch, in_ch, seed + 2);

    using clock = std::chrono::steady_clock;
    auto run = [&](MultiScaleMode mode, std::vector<double>* times) {
        Tensor<T> y;
        MultiScaleGrads<T> g;
        const int total = warmup + repeats;
        for (int i = 0; i < total; ++i) {
            const auto t0 = clock::now();
            y = multi_scale_forward(x, set, mode, nullptr, workers);
            g = multi_scale_backward(x, set, go, mode, nullptr, workers);
            const auto t1 = clock::now();
            if (times && i >= warmup)
                times->push_back(std::chrono::duration<double>(t1 - t0).count());
        }
        return std::make_pair(std::move(y), std::move(g));
    };

    std::vector<double> plain_t, fused_t;
    auto [yp, gp] = run(MultiScaleMode::Plain, &plain_t);
    auto [yf, gf] = run(MultiScaleMode::Fused, &fused_t);

    res.plain_s = detail::median(plain_t);
    res.fused_s = detail::median(fused_t);
    res.speedup = res.fused_s > 0 ? res.plain_s / res.fused_s : 0.0;

    double sum = 0, sum2 = 0;
    for (int64_t i = 0; i < yp.numel(); ++i) {
        const double d = std::abs(static_cast<double>(yf[i]) - static_cast<double>(yp[i]));
        sum += d;
        sum2 += d * d;
    }
    const double n = static_cast<double>(yp.numel());
    res.out_diff_mean = sum / n;
    res.out_diff_std = std::sqrt(std::max(0.0, sum2 / n - res.out_diff_mean * res.out_diff_mean));
    res.gk1_max = max_abs_diff(gf.k1, gp.k1);
    res.gk3_max = max_abs_diff(gf.k3, gp.k3);
    res.gk5_max = max_abs_diff(gf.k5, gp.k5);
    res.gx_max = max_abs_diff(gf.input, gp.input);
    return res;
}

inline void bench_csv_header(std::ostream& os) {
    os << "batch,in_ch,out_ch,h,w,dtype,repeats,workers,plain_s,fused_s,speedup,"
          "out_diff_mean,out_diff_std,gk1_max,gk3_max,gk5_max,gx_max\n";
}

inline void bench_csv_row(std::ostream& os, const BenchResult& r) {
    os << r.batch << ',' << r.in_ch << ',' << r.out_ch << ',' << r.h << ',' << r.w << ','
       << r.dtype << ',' << r.repeats << ',' << r.workers << ',' << r.plain_s << ',' << r.fused_s
       << ',' << r.speedup << ',' << r.out_diff_mean << ',' << r.out_diff_std << ',' << r.gk1_max
       << ',' << r.gk3_max << ',' << r.gk5_max << ',' << r.gx_max << '\n';
}

}  // namespace emkit
