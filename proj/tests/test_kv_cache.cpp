// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Attention reference against hand arithmetic, window index permutations,
// importance blending, pruning against a brute-force oracle, and the
// accumulated-cache loop invariants (capacity, recency, score semantics).

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emkit/kv_cache.hpp"

using namespace emkit;
using Catch::Matchers::ContainsSubstring;

namespace {

// Reference pruning: sort (score desc, index asc), cut, union recent, sort.
std::vector<int64_t> brute_force_keep(const std::vector<double>& scores, int64_t l,
                                      int64_t n) {
    const int64_t t = static_cast<int64_t>(scores.size());
    std::vector<std::pair<double, int64_t>> old;
    for (int64_t i = 0; i < t - l; ++i) old.push_back({scores[static_cast<size_t>(i)], i});
    std::sort(old.begin(), old.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<int64_t> keep;
    for (int64_t i = 0; i < (n - 2) * l; ++i) keep.push_back(old[static_cast<size_t>(i)].second);
    for (int64_t i = t - l; i < t; ++i) keep.push_back(i);
    std::sort(keep.begin(), keep.end());
    return keep;
}

}  // namespace

TEST_CASE("mha: two-token hand oracle") {
    // Orthonormal queries/keys: logit matrix is diag(1/sqrt(2)).
    Tensor<double> q({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor<double> v({2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto r = mha(q, q, v, 1);

    const double s = 1.0 / std::sqrt(2.0);
    const double hi = std::exp(s) / (std::exp(s) + 1.0);
    const double lo = 1.0 - hi;
    CHECK(r.weights.at(0, 0, 0) == Catch::Approx(hi).epsilon(1e-15));
    CHECK(r.weights.at(0, 0, 1) == Catch::Approx(lo).epsilon(1e-15));
    CHECK(r.weights.at(0, 1, 1) == Catch::Approx(hi).epsilon(1e-15));
    CHECK(r.out.at(0, 0) == Catch::Approx(hi * 1.0 + lo * 2.0).epsilon(1e-15));
    CHECK(r.out.at(1, 0) == Catch::Approx(hi * 3.0 + lo * 4.0).epsilon(1e-15));

    // Rows of the weight tensor are probability vectors.
    for (int64_t i = 0; i < 2; ++i)
        CHECK(r.weights.at(0, i, 0) + r.weights.at(0, i, 1) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("mha: zero queries attend uniformly") {
    Tensor<double> q({3, 2});
    auto k = seeded_tensor<double>({3, 4}, 5, Dist::Normal);
    auto v = seeded_tensor<double>({3, 4}, 6, Dist::Normal);
    auto r = mha(q, k, v, 1);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 4; ++j) REQUIRE(r.weights.at(0, i, j) == 0.25);
    auto s = mean_key_scores(r.weights);
    for (double x : s) CHECK(x == 0.25);
}

TEST_CASE("mha: heads act on independent channel halves") {
    const int64_t c = 4, l = 3, tk = 5;
    auto q = seeded_tensor<double>({c, l}, 11, Dist::Normal);
    auto k = seeded_tensor<double>({c, tk}, 12, Dist::Normal);
    auto v = seeded_tensor<double>({c, tk}, 13, Dist::Normal);
    auto both = mha(q, k, v, 2);

    auto slice = [&](const Tensor<double>& m, int64_t row0, int64_t rows) {
        Tensor<double> out({rows, m.dim(1)});
        for (int64_t i = 0; i < rows; ++i)
            for (int64_t j = 0; j < m.dim(1); ++j) out.at(i, j) = m.at(row0 + i, j);
        return out;
    };
    for (int64_t h = 0; h < 2; ++h) {
        auto r = mha(slice(q, 2 * h, 2), slice(k, 2 * h, 2), slice(v, 2 * h, 2), 1);
        for (int64_t i = 0; i < 2; ++i)
            for (int64_t j = 0; j < l; ++j)
                REQUIRE(both.out.at(2 * h + i, j) == r.out.at(i, j));
        for (int64_t i = 0; i < l; ++i)
            for (int64_t j = 0; j < tk; ++j)
                REQUIRE(both.weights.at(h, i, j) == r.weights.at(0, i, j));
    }

    CHECK_THROWS_AS(mha(q, k, v, 3), ValueError);
    CHECK_THROWS_AS(mha(q, seeded_tensor<double>({c + 1, tk}, 1, Dist::Normal), v, 1),
                    ShapeError);
    CHECK_THROWS_AS(mha(q, k, seeded_tensor<double>({c, tk + 2}, 1, Dist::Normal), 1),
                    ShapeError);
}

TEST_CASE("window indices: 4x4 grid with 2x2 windows") {
    auto part = window_partition_indices(4, 4, 2, 2);
    REQUIRE(part == std::vector<int64_t>({0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15}));
    auto merge = window_merge_indices(4, 4, 2, 2);
    for (size_t i = 0; i < part.size(); ++i)
        REQUIRE(merge[static_cast<size_t>(part[i])] == static_cast<int64_t>(i));

    // Rectangular windows still form a permutation.
    for (auto [wh, ww] : {std::pair<int64_t, int64_t>{2, 8}, {8, 2}, {4, 4}}) {
        auto p = window_partition_indices(8, 8, wh, ww);
        auto sorted = p;
        std::sort(sorted.begin(), sorted.end());
        std::vector<int64_t> iota(64);
        std::iota(iota.begin(), iota.end(), 0);
        REQUIRE(sorted == iota);
    }
    CHECK_THROWS_WITH(window_partition_indices(4, 6, 2, 4), ContainsSubstring("tile"));
}

TEST_CASE("importance update: blend arithmetic and recency carve-out") {
    CHECK(update_importance<double>({0.2}, {0.6}, 0.9)[0] ==
          Catch::Approx(0.56).epsilon(1e-15));
    CHECK(update_importance<double>({0.2}, {0.6}, 0.0)[0] == 0.2);
    CHECK(update_importance<double>({0.0, 0.0}, {0.4, 0.8}, 0.9) ==
          std::vector<double>{0.9 * 0.4, 0.9 * 0.8});

    // Trailing recent positions bypass the blend entirely.
    auto out = update_importance<double>({0.2, 0.2, 0.2}, {0.6, 0.6, 0.6}, 0.9, 2);
    CHECK(out[0] == Catch::Approx(0.56).epsilon(1e-15));
    CHECK(out[1] == 0.6);
    CHECK(out[2] == 0.6);

    CHECK_THROWS_AS(update_importance<double>({0.1}, {0.1, 0.2}, 0.5), ShapeError);
    CHECK_THROWS_AS(update_importance<double>({0.1}, {0.1}, 0.5, 2), ValueError);
}

TEST_CASE("importance update: constant scores are a geometric fixed point") {
    std::vector<double> imp{0.9, 0.1, 0.5};
    const std::vector<double> cur{0.3, 0.3, 0.3};
    for (int it = 0; it < 20; ++it) imp = update_importance(imp, cur, 0.9);
    for (double x : imp) CHECK(x == Catch::Approx(0.3).margin(1e-12));
}

TEST_CASE("prune indices: worked example, ties, and degenerate sizes") {
    CachePolicy p;
    p.n_max = 3;
    CHECK(prune_indices<double>({0.1, 0.5, 0.3, 0.2, 0.9, 0.4}, 2, p) ==
          std::vector<int64_t>({1, 2, 4, 5}));

    // All equal: lowest indices win.
    CHECK(prune_indices<double>({1, 1, 1, 1, 1, 1}, 2, p) ==
          std::vector<int64_t>({0, 1, 4, 5}));

    // n_max = 2 keeps only the recent step.
    CachePolicy two;
    two.n_max = 2;
    CHECK(prune_indices<double>({0.9, 0.8, 0.1, 0.2}, 2, two) ==
          std::vector<int64_t>({2, 3}));

    CHECK_THROWS_WITH(prune_indices<double>({1, 2, 3}, 2, p), ContainsSubstring("capacity"));
    CHECK_THROWS_AS(prune_indices<double>({1, 2, 3}, 0, p), ValueError);
}

TEST_CASE("prune indices: per-step aggregation evicts whole steps") {
    CachePolicy p;
    p.n_max = 3;
    p.per_step_scores = true;
    // Step means: {0.3, 0.25}; keep step 0 plus the recent step.
    CHECK(prune_indices<double>({0.1, 0.5, 0.3, 0.2, 0.9, 0.4}, 2, p) ==
          std::vector<int64_t>({0, 1, 4, 5}));
    // Equal means: lowest step index wins.
    CHECK(prune_indices<double>({0.4, 0.1, 0.2, 0.3, 0.0, 0.0}, 2, p) ==
          std::vector<int64_t>({0, 1, 4, 5}));
}

TEST_CASE("prune indices: matches brute force on random score vectors") {
    Rng rng(97);
    CachePolicy p;
    for (int trial = 0; trial < 1000; ++trial) {
        p.n_max = rng.uniform_int(2, 5);
        const int64_t l = rng.uniform_int(1, 4);
        std::vector<double> scores(static_cast<size_t>(p.n_max * l));
        // One-decimal quantization provokes plenty of ties.
        for (auto& s : scores) s = std::round(rng.uniform() * 10.0) / 10.0;
        REQUIRE(prune_indices(scores, l, p) == brute_force_keep(scores, l, p.n_max));
    }
}

TEST_CASE("cache: first call attends over new tokens only") {
    const int64_t c = 4, l = 2;
    auto q = seeded_tensor<double>({c, l}, 21, Dist::Normal);
    auto k = seeded_tensor<double>({c, l}, 22, Dist::Normal);
    auto v = seeded_tensor<double>({c, l}, 23, Dist::Normal);
    CachePolicy policy;

    auto r = attend_with_cache(q, k, v, KVCache<double>{}, policy, 2);
    auto plain = mha(q, k, v, 2);
    CHECK(max_abs_diff(r.out, plain.out) == 0.0);
    REQUIRE(r.cache.tokens() == l);
    CHECK(max_abs_diff(r.cache.keys, k) == 0.0);
    CHECK(max_abs_diff(r.cache.values, v) == 0.0);
    CHECK(r.cache.importance == mean_key_scores(plain.weights));
}

TEST_CASE("cache: capacity is filled then held at n_max steps") {
    const int64_t c = 4, l = 2;
    CachePolicy policy;
    policy.n_max = 3;
    KVCache<double> cache;
    for (int call = 1; call <= 7; ++call) {
        auto q = seeded_tensor<double>({c, l}, 100 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        auto k = seeded_tensor<double>({c, l}, 101 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        auto v = seeded_tensor<double>({c, l}, 102 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        auto r = attend_with_cache(q, k, v, cache, policy);
        cache = r.cache;

        const int64_t expect = std::min<int64_t>(call * l, policy.n_max * l);
        REQUIRE(cache.tokens() == expect);
        REQUIRE(static_cast<int64_t>(cache.importance.size()) == expect);

        // Recency guarantee: the newest step is the cache tail, verbatim.
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = 0; j < l; ++j)
                REQUIRE(cache.keys.at(i, cache.tokens() - l + j) == k.at(i, j));
    }
}

TEST_CASE("cache: lambda=1 stores current attention scores verbatim") {
    const int64_t c = 4, l = 3;
    CachePolicy policy;
    policy.lambda = 1.0;
    KVCache<double> cache;
    Tensor<double> q2, k2, v2;
    for (int call = 0; call < 2; ++call) {
        auto q = seeded_tensor<double>({c, l}, 200 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        auto k = seeded_tensor<double>({c, l}, 201 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        auto v = seeded_tensor<double>({c, l}, 202 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        if (call == 1) {
            q2 = q;
            k2 = k;
            v2 = v;
        }
        cache = attend_with_cache(q, k, v, cache, policy).cache;
    }
    // Recompute the second call's attention over (step-1 tokens | step-2
    // tokens) by hand; with lambda = 1 the stored importance must equal the
    // current mean scores everywhere.
    auto again = mha(q2, cache.keys, cache.values, 1);
    CHECK(cache.importance == mean_key_scores(again.weights));
}

TEST_CASE("cache: lambda=0 freezes old scores until eviction") {
    const int64_t c = 2, l = 2;
    CachePolicy policy;
    policy.lambda = 0.0;
    policy.n_max = 3;
    KVCache<double> cache;
    std::vector<double> first_scores;
    for (int call = 0; call < 3; ++call) {
        auto q = seeded_tensor<double>({c, l}, 300 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        auto k = seeded_tensor<double>({c, l}, 301 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        auto v = seeded_tensor<double>({c, l}, 302 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        cache = attend_with_cache(q, k, v, cache, policy).cache;
        if (call == 0) first_scores = cache.importance;
    }
    CHECK(cache.importance[0] == first_scores[0]);
    CHECK(cache.importance[1] == first_scores[1]);
}

TEST_CASE("cache: forty-step rollout keeps every invariant") {
    const int64_t c = 8, l = 4;
    CachePolicy policy;  // defaults: lambda 0.9, n_max 5
    KVCache<double> cache;
    for (int step = 0; step < 40; ++step) {
        auto q = seeded_tensor<double>({c, l}, 400 + 3 * static_cast<uint64_t>(step),
                                       Dist::Normal);
        auto k = seeded_tensor<double>({c, l}, 401 + 3 * static_cast<uint64_t>(step),
                                       Dist::Normal);
        auto v = seeded_tensor<double>({c, l}, 402 + 3 * static_cast<uint64_t>(step),
                                       Dist::Normal);
        auto r = attend_with_cache(q, k, v, cache, policy, 2);
        cache = r.cache;

        REQUIRE(cache.tokens() <= policy.n_max * l);
        REQUIRE(static_cast<int64_t>(cache.importance.size()) == cache.tokens());
        for (double s : cache.importance) {
            REQUIRE(std::isfinite(s));
            REQUIRE(s >= 0.0);
        }
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = 0; j < l; ++j)
                REQUIRE(cache.keys.at(i, cache.tokens() - l + j) == k.at(i, j));
        REQUIRE(std::isfinite(static_cast<double>(r.out.at(0, 0))));
    }
    CHECK(cache.tokens() == policy.n_max * l);
}

TEST_CASE("cache: prune below capacity is a no-op") {
    const int64_t c = 2, l = 2;
    CachePolicy policy;
    policy.n_max = 4;
    KVCache<double> cache;
    for (int call = 0; call < 2; ++call) {
        auto q = seeded_tensor<double>({c, l}, 500 + 3 * static_cast<uint64_t>(call),
                                       Dist::Normal);
        cache = attend_with_cache(q, q, q, cache, policy).cache;
    }
    auto same = prune(cache, policy);
    CHECK(same.tokens() == cache.tokens());
    CHECK(max_abs_diff(same.keys, cache.keys) == 0.0);
}

TEST_CASE("cache: mismatches and bad policies throw") {
    const int64_t c = 4, l = 2;
    auto q = seeded_tensor<double>({c, l}, 601, Dist::Normal);
    CachePolicy policy;
    auto cache = attend_with_cache(q, q, q, KVCache<double>{}, policy).cache;

    auto wide = seeded_tensor<double>({c + 2, l}, 602, Dist::Normal);
    CHECK_THROWS_AS(attend_with_cache(wide, wide, wide, cache, policy), ShapeError);
    auto longer = seeded_tensor<double>({c, l + 1}, 603, Dist::Normal);
    CHECK_THROWS_AS(attend_with_cache(longer, longer, longer, cache, policy), ShapeError);
    CHECK_THROWS_AS(attend_with_cache(q, q, longer, KVCache<double>{}, policy), ShapeError);

    CachePolicy bad;
    bad.lambda = 1.5;
    CHECK_THROWS_AS(attend_with_cache(q, q, q, KVCache<double>{}, bad), ValueError);
    bad.lambda = 0.5;
    bad.n_max = 1;
    CHECK_THROWS_AS(attend_with_cache(q, q, q, KVCache<double>{}, bad), ValueError);
}
