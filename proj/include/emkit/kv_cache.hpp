// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Accumulative KV cache with importance-scored pruning. Tokens arrive in
// fixed groups of L per step; the cache holds at most N steps' worth. When a
// call finds the cache full it first evicts down to (N-1)*L tokens: the L
// most recent tokens always survive, and of the older ones the (N-2)*L with
// the highest importance are kept (ties to the lowest index, order
// preserved). Importance is refreshed after every attention: an old token's
// score becomes lambda * current + (1 - lambda) * previous, while the
// newest L tokens store their current score unblended so they carry one
// when they age.
//
// The per-step mode aggregates scores as the mean over each step's L tokens
// and evicts whole steps instead of individual tokens.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "emkit/attention.hpp"
#include "emkit/tensor.hpp"

namespace emkit {

struct CachePolicy {
    double lambda = 0.9;          // weight on the current score for old tokens
    int64_t n_max = 5;            // cache length in steps
    bool per_step_scores = false; // aggregate scores per step, evict whole steps
};

inline void validate(const CachePolicy& p) {
    if (!(p.lambda >= 0.0 && p.lambda <= 1.0))
        throw ValueError("CachePolicy: lambda " + std::to_string(p.lambda) +
                         " outside [0,1]");
    if (p.n_max < 2)
        throw ValueError("CachePolicy: n_max " + std::to_string(p.n_max) + " below 2");
}

template <typename T>
struct KVCache {
    Tensor<T> keys{Shape{0, 0}};    // [C, T]
    Tensor<T> values{Shape{0, 0}};  // [C, T]
    std::vector<T> importance;      // length T
    int64_t step_tokens = 0;        // L

    bool empty() const { return keys.numel() == 0; }
    int64_t tokens() const { return empty() ? 0 : keys.dim(1); }
    int64_t channels() const { return empty() ? 0 : keys.dim(0); }
};

// lambda * cur + (1 - lambda) * old elementwise, except the trailing
// recent_count positions return cur unblended.
template <typename T>
inline std::vector<T> update_importance(const std::vector<T>& old_scores,
                                        const std::vector<T>& cur_scores, double lambda,
                                        int64_t recent_count = 0) {
    if (old_scores.size() != cur_scores.size())
        throw ShapeError("update_importance: score lengths differ, " +
                         std::to_string(old_scores.size()) + " vs " +
                         std::to_string(cur_scores.size()));
    if (recent_count < 0 || recent_count > static_cast<int64_t>(cur_scores.size()))
        throw ValueError("update_importance: recent_count out of range");
    const size_t n = cur_scores.size();
    const size_t blend_end = n - static_cast<size_t>(recent_count);
    std::vector<T> out(n);
    for (size_t i = 0; i < n; ++i)
        out[i] = i < blend_end
                     ? static_cast<T>(lambda) * cur_scores[i] +
                           (T(1) - static_cast<T>(lambda)) * old_scores[i]
                     : cur_scores[i];
    return out;
}

// Kept token indices for a full cache of n_max * L tokens: the top
// (n_max-2)*L scores among the first (n_max-1)*L tokens plus the trailing L,
// ascending. Per-step mode ranks steps by their mean score instead.
template <typename T>
inline std::vector<int64_t> prune_indices(const std::vector<T>& scores, int64_t l,
                                          const CachePolicy& policy) {
    validate(policy);
    if (l <= 0) throw ValueError("prune_indices: step token count must be positive");
    const int64_t t = static_cast<int64_t>(scores.size());
    if (t != policy.n_max * l)
        throw ValueError("prune_indices: expected " + std::to_string(policy.n_max * l) +
                         " scores at capacity, got " + std::to_string(t));

    std::vector<int64_t> keep;
    keep.reserve(static_cast<size_t>((policy.n_max - 1) * l));
    if (!policy.per_step_scores) {
        const int64_t old_count = t - l;
        std::vector<int64_t> order(static_cast<size_t>(old_count));
        std::iota(order.begin(), order.end(), 0);
        // Highest score first; equal scores keep ascending index order.
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        });
        keep.assign(order.begin(), order.begin() + (policy.n_max - 2) * l);
    } else {
        const int64_t old_steps = policy.n_max - 1;
        std::vector<T> mean(static_cast<size_t>(old_steps), T(0));
        for (int64_t s = 0; s < old_steps; ++s) {
            for (int64_t i = 0; i < l; ++i) mean[static_cast<size_t>(s)] +=
                scores[static_cast<size_t>(s * l + i)];
            mean[static_cast<size_t>(s)] /= static_cast<T>(l);
        }
        std::vector<int64_t> order(static_cast<size_t>(old_steps));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return mean[static_cast<size_t>(a)] > mean[static_cast<size_t>(b)];
        });
        for (int64_t s = 0; s < policy.n_max - 2; ++s)
            for (int64_t i = 0; i < l; ++i) keep.push_back(order[static_cast<size_t>(s)] * l + i);
    }
    for (int64_t i = t - l; i < t; ++i) keep.push_back(i);
    std::sort(keep.begin(), keep.end());
    return keep;
}

namespace detail {

template <typename T>
inline Tensor<T> gather_cols(const Tensor<T>& m, const std::vector<int64_t>& cols) {
    const int64_t c = m.dim(0), t = m.dim(1);
    Tensor<T> out({c, static_cast<int64_t>(cols.size())});
    for (int64_t i = 0; i < c; ++i)
        for (size_t j = 0; j < cols.size(); ++j)
            out.data()[i * static_cast<int64_t>(cols.size()) + static_cast<int64_t>(j)] =
                m.data()[i * t + cols[j]];
    return out;
}

template <typename T>
inline Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    const int64_t c = a.dim(0), ta = a.dim(1), tb = b.dim(1);
    if (b.dim(0) != c)
        throw ShapeError("concat_cols: channel mismatch, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<T> out({c, ta + tb});
    for (int64_t i = 0; i < c; ++i) {
        std::copy(a.data() + i * ta, a.data() + (i + 1) * ta, out.data() + i * (ta + tb));
        std::copy(b.data() + i * tb, b.data() + (i + 1) * tb,
                  out.data() + i * (ta + tb) + ta);
    }
    return out;
}

}  // namespace detail

// Evicts down to (n_max-1)*L tokens when the cache is at capacity; below
// capacity this is a documented no-op.
template <typename T>
inline KVCache<T> prune(const KVCache<T>& cache, const CachePolicy& policy) {
    validate(policy);
    if (cache.empty() || cache.tokens() < policy.n_max * cache.step_tokens) return cache;
    const auto keep = prune_indices(cache.importance, cache.step_tokens, policy);
    KVCache<T> out;
    out.keys = detail::gather_cols(cache.keys, keep);
    out.values = detail::gather_cols(cache.values, keep);
    out.importance.reserve(keep.size());
    for (int64_t i : keep) out.importance.push_back(cache.importance[static_cast<size_t>(i)]);
    out.step_tokens = cache.step_tokens;
    return out;
}

template <typename T>
struct CachedAttention {
    Tensor<T> out;     // [C, L]
    KVCache<T> cache;  // holds at most n_max * L tokens
};

// One attention step against the accumulated context. The incoming cache is
// pruned first if full, so attention never sees more than n_max * L keys and
// the returned cache holds exactly min(total steps, n_max) * L tokens.
template <typename T>
inline CachedAttention<T> attend_with_cache(const Tensor<T>& q, const Tensor<T>& k_new,
                                            const Tensor<T>& v_new, const KVCache<T>& cache,
                                            const CachePolicy& policy, int64_t heads = 1) {
    validate(policy);
    if (q.rank() != 2 || k_new.rank() != 2 || v_new.rank() != 2)
        throw ShapeError("attend_with_cache: expected [C,L] operands");
    const int64_t c = q.dim(0), l = q.dim(1);
    if (k_new.shape() != q.shape() || v_new.shape() != q.shape())
        throw ShapeError("attend_with_cache: q/k/v shapes differ, " + shape_str(q.shape()) +
                         ", " + shape_str(k_new.shape()) + ", " + shape_str(v_new.shape()));

    if (cache.empty()) {
        auto r = mha(q, k_new, v_new, heads);
        KVCache<T> next;
        next.keys = k_new;
        next.values = v_new;
        next.importance = mean_key_scores(r.weights);
        next.step_tokens = l;
        return {std::move(r.out), std::move(next)};
    }

    if (cache.channels() != c || cache.step_tokens != l)
        throw ShapeError("attend_with_cache: cache holds [" + std::to_string(cache.channels()) +
                         "," + std::to_string(cache.tokens()) + "] tokens in steps of " +
                         std::to_string(cache.step_tokens) + ", got step [" +
                         std::to_string(c) + "," + std::to_string(l) + "]");

    const KVCache<T> base = prune(cache, policy);
    KVCache<T> next;
    next.keys = detail::concat_cols(base.keys, k_new);
    next.values = detail::concat_cols(base.values, v_new);
    next.step_tokens = l;

    auto r = mha(q, next.keys, next.values, heads);
    auto cur = mean_key_scores(r.weights);
    std::vector<T> old = base.importance;
    old.resize(cur.size(), T(0));  // placeholders; recent positions take cur anyway
    next.importance = update_importance(old, cur, policy.lambda, l);
    return {std::move(r.out), std::move(next)};
}

}  // namespace emkit
