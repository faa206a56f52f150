// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Reference multi-head attention over channel-major token blocks and the
// index bookkeeping for window-local attention. Fields are [C, T] (one
// channel per row) to match the cache layout; heads split the channel axis.
// This is the plain O(T^2) formulation used for caching, oracles and tests;
// the training path builds the same math from tape primitives.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "emkit/tensor.hpp"

namespace emkit {

template <typename T>
struct MhaResult {
    Tensor<T> out;      // [C, Lq]
    Tensor<T> weights;  // [heads, Lq, Tk], rows sum to 1
};

// Scaled dot-product attention: per head h, A = softmax(Q_h^T K_h / sqrt(d)),
// out_h = V_h A^T with d = C / heads.
template <typename T>
inline MhaResult<T> mha(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                        int64_t heads = 1) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("mha: expected [C,T] operands, got " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
    const int64_t c = q.dim(0), lq = q.dim(1), tk = k.dim(1);
    if (k.dim(0) != c || v.dim(0) != c)
        throw ShapeError("mha: channel mismatch, q " + shape_str(q.shape()) + " k " +
                         shape_str(k.shape()) + " v " + shape_str(v.shape()));
    if (v.dim(1) != tk)
        throw ShapeError("mha: key/value token mismatch, k " + shape_str(k.shape()) + " v " +
                         shape_str(v.shape()));
    if (heads < 1 || c % heads != 0)
        throw ValueError("mha: " + std::to_string(heads) + " heads do not divide " +
                         std::to_string(c) + " channels");

    const int64_t d = c / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    MhaResult<T> r{Tensor<T>({c, lq}), Tensor<T>({heads, lq, tk})};

    for (int64_t h = 0; h < heads; ++h) {
        const T* qh = q.data() + h * d * lq;
        const T* kh = k.data() + h * d * tk;
        const T* vh = v.data() + h * d * tk;

        Tensor<T> logits({lq, tk});
        for (int64_t i = 0; i < lq; ++i)
            for (int64_t j = 0; j < tk; ++j) {
                T dot = T(0);
                for (int64_t e = 0; e < d; ++e) dot += qh[e * lq + i] * kh[e * tk + j];
                logits.data()[i * tk + j] = dot * scale;
            }
        Tensor<T> a = softmax_rows(logits);
        std::copy(a.data(), a.data() + lq * tk, r.weights.data() + h * lq * tk);

        T* oh = r.out.data() + h * d * lq;
        for (int64_t e = 0; e < d; ++e)
            for (int64_t i = 0; i < lq; ++i) {
                T acc = T(0);
                for (int64_t j = 0; j < tk; ++j) acc += vh[e * tk + j] * a.data()[i * tk + j];
                oh[e * lq + i] = acc;
            }
    }
    return r;
}

// Mean attention weight received by each key token, averaged over heads and
// queries. This is the per-token importance signal for the cache.
template <typename T>
inline std::vector<T> mean_key_scores(const Tensor<T>& weights) {
    if (weights.rank() != 3)
        throw ShapeError("mean_key_scores: expected [heads,Lq,Tk], got " +
                         shape_str(weights.shape()));
    const int64_t heads = weights.dim(0), lq = weights.dim(1), tk = weights.dim(2);
    std::vector<T> s(static_cast<size_t>(tk), T(0));
    for (int64_t h = 0; h < heads; ++h)
        for (int64_t i = 0; i < lq; ++i)
            for (int64_t j = 0; j < tk; ++j)
                s[static_cast<size_t>(j)] += weights.data()[(h * lq + i) * tk + j];
    const T inv = T(1) / static_cast<T>(heads * lq);
    for (auto& x : s) x *= inv;
    return s;
}

// Token permutation that groups an H x W row-major token grid into
// wh x ww windows, window by window in row-major window order. Applying it
// with a row gather turns global token order into window-local order;
// window_merge_indices is the inverse permutation.
inline std::vector<int64_t> window_partition_indices(int64_t h, int64_t w, int64_t wh,
                                                     int64_t ww) {
    if (h <= 0 || w <= 0 || wh <= 0 || ww <= 0 || h % wh != 0 || w % ww != 0)
        throw ValueError("window_partition_indices: " + std::to_string(wh) + "x" +
                         std::to_string(ww) + " windows do not tile a " + std::to_string(h) +
                         "x" + std::to_string(w) + " grid");
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(h * w));
    for (int64_t bi = 0; bi < h / wh; ++bi)
        for (int64_t bj = 0; bj < w / ww; ++bj)
            for (int64_t i = 0; i < wh; ++i)
                for (int64_t j = 0; j < ww; ++j)
                    idx.push_back((bi * wh + i) * w + (bj * ww + j));
    return idx;
}

inline std::vector<int64_t> window_merge_indices(int64_t h, int64_t w, int64_t wh,
                                                 int64_t ww) {
    const auto part = window_partition_indices(h, w, wh, ww);
    std::vector<int64_t> inv(part.size());
    for (size_t p = 0; p < part.size(); ++p) inv[static_cast<size_t>(part[p])] =
        static_cast<int64_t>(p);
    return inv;
}

}  // namespace emkit
