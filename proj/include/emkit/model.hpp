// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Encoder/processor/decoder forecast model built from tape primitives.
//
//   patch embed -> pruning levels -> processor blocks -> recovering levels
//                                                      -> prediction head
//
// Every pruning level halves the token count along one grid axis
// (alternating height/width): spatially adjacent token pairs are channel-
// concatenated to 2C, linearly compressed back to C, then refined by
// cross-attention (queries = compressed tokens, keys/values = the tokens
// before compression) and self-attention. The pre-compression tokens are
// stored and re-added after the mirrored upsampling on the way out.
//
// Processor blocks alternate window-local attention (even indices, cycling
// through 4x4 / 2x8 / 8x2 windows that tile the stage grid) with global
// attention (odd indices). Each block projects tokens to 3C, runs the fused
// multi-scale convolution over the 3C token grid, splits the result into
// Q/K/V, attends, and applies the post-norm residual form
// A = LN(attn) + x, y = LN(MLP(A)) + A.
//
// Global blocks can accumulate a KV cache across autoregressive steps
// (batch 1 only): cached keys/values are concatenated before attention,
// importance scores follow the lambda blend, and pruning keeps the
// highest-scoring old tokens plus the newest step.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emkit/attention.hpp"
#include "emkit/io.hpp"
#include "emkit/kv_cache.hpp"
#include "emkit/tape.hpp"
#include "emkit/tensor.hpp"

namespace emkit {

struct ModelConfig {
    int64_t variables = 4;
    int64_t height = 64;
    int64_t width = 64;
    int64_t patch = 2;
    int64_t channels = 64;
    int64_t heads = 4;
    int64_t depth = 2;             // pruning/recovering levels
    int64_t processor_blocks = 6;  // even index: windowed, odd: global
    int64_t mlp_ratio = 4;
    bool conv_enabled = true;      // disable to run plain transformer blocks
    bool use_cache = false;        // accumulate KV in global blocks
    CachePolicy cache_policy{};
    uint64_t seed = 20260815;
};

inline io::json to_json(const ModelConfig& c) {
    return io::json{{"variables", c.variables}, {"height", c.height},
                {"width", c.width},         {"patch", c.patch},
                {"channels", c.channels},   {"heads", c.heads},
                {"depth", c.depth},         {"processor_blocks", c.processor_blocks},
                {"mlp_ratio", c.mlp_ratio}, {"conv_enabled", c.conv_enabled},
                {"use_cache", c.use_cache}, {"cache_lambda", c.cache_policy.lambda},
                {"cache_n_max", c.cache_policy.n_max},
                {"cache_per_step_scores", c.cache_policy.per_step_scores},
                {"seed", c.seed}};
}

// Missing keys keep their defaults so config files may be partial; checkpoint
// manifests always carry the full set.
inline ModelConfig model_config_from_json(const io::json& j) {
    ModelConfig c;
    c.variables = j.value("variables", c.variables);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.patch = j.value("patch", c.patch);
    c.channels = j.value("channels", c.channels);
    c.heads = j.value("heads", c.heads);
    c.depth = j.value("depth", c.depth);
    c.processor_blocks = j.value("processor_blocks", c.processor_blocks);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.conv_enabled = j.value("conv_enabled", c.conv_enabled);
    c.use_cache = j.value("use_cache", c.use_cache);
    c.cache_policy.lambda = j.value("cache_lambda", c.cache_policy.lambda);
    c.cache_policy.n_max = j.value("cache_n_max", c.cache_policy.n_max);
    c.cache_policy.per_step_scores = j.value("cache_per_step_scores", c.cache_policy.per_step_scores);
    c.seed = j.value("seed", c.seed);
    return c;
}

template <typename T>
class EmformerModel {
  public:
    using Var = typename Tape<T>::Var;
    using Params = std::vector<std::pair<std::string, Tensor<T>>>;

    explicit EmformerModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        validate_config();
        init_params();
    }

    const ModelConfig& config() const { return cfg_; }

    // Toggles KV caching without touching parameters; geometry is unchanged.
    void set_cache(bool use, CachePolicy policy = {}) {
        if (use) validate(policy);
        cfg_.use_cache = use;
        cfg_.cache_policy = policy;
    }

    Params& parameters() { return params_; }
    const Params& parameters() const { return params_; }

    Tensor<T>& param(const std::string& name) {
        for (auto& [n, t] : params_)
            if (n == name) return t;
        throw ValueError("unknown parameter: " + name);
    }

    int64_t tokens_at(int64_t level) const { return gh_[level] * gw_[level]; }
    int64_t processor_tokens() const { return tokens_at(cfg_.depth); }
    int64_t global_block_count() const { return cfg_.processor_blocks / 2; }

    // Parameters bound onto one tape for one forward/backward pass.
    struct Bound {
        Tape<T>* tape = nullptr;
        std::unordered_map<std::string, Var> vars;
        Var operator[](const std::string& name) const {
            auto it = vars.find(name);
            if (it == vars.end()) throw ValueError("unbound parameter: " + name);
            return it->second;
        }
    };

    Bound bind(Tape<T>& tape, bool trainable) const {
        Bound b;
        b.tape = &tape;
        for (const auto& [n, t] : params_) b.vars.emplace(n, tape.input(t, trainable));
        return b;
    }

    // Accumulated KV state for the global processor blocks of one stream.
    struct CacheState {
        struct Entry {
            Var k = -1, v = -1;
            std::vector<T> importance;
        };
        std::vector<Entry> blocks;
        bool empty() const { return blocks.empty(); }
    };

    CacheState make_cache() const {
        CacheState s;
        s.blocks.resize(static_cast<size_t>(global_block_count()));
        return s;
    }

    // Re-inserts cached values as constants on another tape, cutting the
    // gradient flow between autoregressive steps.
    CacheState detach_cache(const CacheState& in, const Tape<T>& from, Tape<T>& to) const {
        CacheState out = make_cache();
        for (size_t i = 0; i < in.blocks.size(); ++i) {
            const auto& e = in.blocks[i];
            if (e.k < 0) continue;
            out.blocks[i].k = to.constant(from.value(e.k));
            out.blocks[i].v = to.constant(from.value(e.v));
            out.blocks[i].importance = e.importance;
        }
        return out;
    }

    // field: [B,V,H,W] tape var. Returns the [B,V,H,W] prediction var.
    // cache == nullptr runs every block cache-free.
    Var forward(Bound& bp, Var field, CacheState* cache = nullptr) const {
        Tape<T>& t = *bp.tape;
        const auto& fs = t.value(field).shape();
        if (fs.size() != 4 || fs[1] != cfg_.variables || fs[2] != cfg_.height ||
            fs[3] != cfg_.width)
            throw ShapeError("forward: field " + shape_str(fs) + " does not match [B," +
                             std::to_string(cfg_.variables) + "," + std::to_string(cfg_.height) +
                             "," + std::to_string(cfg_.width) + "]");
        const int64_t b = fs[0];
        if (cache != nullptr && !cfg_.use_cache)
            throw ValueError("forward: cache state passed but use_cache is off");
        const bool caching = cache != nullptr;
        if (caching && b != 1)
            throw ValueError("forward: KV caching requires batch 1, got " + std::to_string(b));
        if (caching && cache->blocks.size() != static_cast<size_t>(global_block_count()))
            throw ValueError("forward: cache state sized for a different model");

        Var x = patch_embed(bp, field, b);

        std::vector<Var> residuals;
        residuals.reserve(static_cast<size_t>(cfg_.depth));
        for (int64_t k = 0; k < cfg_.depth; ++k) {
            residuals.push_back(x);
            x = prune_level(bp, k, x, b);
        }

        int win_cursor = 0, global_cursor = 0;
        for (int64_t i = 0; i < cfg_.processor_blocks; ++i)
            x = processor_block(bp, i, x, b, caching ? cache : nullptr, win_cursor,
                                global_cursor);

        for (int64_t r = 0; r < cfg_.depth; ++r) {
            const int64_t k = cfg_.depth - 1 - r;
            x = recover_level(bp, r, k, x, residuals[static_cast<size_t>(k)], b);
        }

        return head(bp, x, b);
    }

    void save(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        io::json manifest;
        manifest["format"] = "emkit-checkpoint-v1";
        manifest["config"] = to_json(cfg_);
        io::json plist = io::json::array();
        for (const auto& [n, t] : params_) {
            io::write_tensor(dir + "/" + n, t);
            plist.push_back(io::json{{"name", n}, {"shape", t.shape()}});
        }
        manifest["params"] = plist;
        io::write_json(dir + "/manifest.json", manifest);
    }

    static EmformerModel load(const std::string& dir) {
        const io::json manifest = io::read_json(dir + "/manifest.json");
        if (manifest.value("format", "") != "emkit-checkpoint-v1")
            throw io::IoError("not an emkit checkpoint: " + dir);
        EmformerModel m(model_config_from_json(manifest.at("config")));
        for (auto& [n, t] : m.params_) {
            Tensor<T> loaded = io::read_tensor<T>(dir + "/" + n);
            if (loaded.shape() != t.shape())
                throw io::IoError("checkpoint parameter " + n + " has shape " +
                              shape_str(loaded.shape()) + ", expected " + shape_str(t.shape()));
            t = std::move(loaded);
        }
        return m;
    }

  private:
    ModelConfig cfg_;
    Params params_;
    std::vector<int64_t> gh_, gw_;  // grid dims per level, 0..depth
    std::vector<std::pair<int64_t, int64_t>> windows_;

    void validate_config() {
        const auto& c = cfg_;
        if (c.variables < 1 || c.height < 1 || c.width < 1 || c.patch < 1 || c.channels < 1 ||
            c.heads < 1 || c.depth < 0 || c.processor_blocks < 0 || c.mlp_ratio < 1)
            throw ValueError("ModelConfig: non-positive dimension");
        if (c.channels % c.heads != 0)
            throw ValueError("ModelConfig: " + std::to_string(c.heads) +
                             " heads do not divide " + std::to_string(c.channels) +
                             " channels");
        if (c.height % c.patch != 0 || c.width % c.patch != 0)
            throw ShapeError("ModelConfig: patch " + std::to_string(c.patch) +
                             " does not divide " + std::to_string(c.height) + "x" +
                             std::to_string(c.width));
        gh_ = {c.height / c.patch};
        gw_ = {c.width / c.patch};
        for (int64_t k = 0; k < c.depth; ++k) {
            int64_t h = gh_.back(), w = gw_.back();
            if (k % 2 == 0) {
                if (h % 2 != 0)
                    throw ShapeError("ModelConfig: level " + std::to_string(k) +
                                     " cannot halve odd grid height " + std::to_string(h));
                h /= 2;
            } else {
                if (w % 2 != 0)
                    throw ShapeError("ModelConfig: level " + std::to_string(k) +
                                     " cannot halve odd grid width " + std::to_string(w));
                w /= 2;
            }
            gh_.push_back(h);
            gw_.push_back(w);
        }
        for (auto [wh, ww] : {std::pair<int64_t, int64_t>{4, 4}, {2, 8}, {8, 2}})
            if (gh_.back() % wh == 0 && gw_.back() % ww == 0) windows_.push_back({wh, ww});
        if (c.processor_blocks > 0 && windows_.empty())
            throw ShapeError("ModelConfig: no 16-token window tiles the " +
                             std::to_string(gh_.back()) + "x" + std::to_string(gw_.back()) +
                             " processor grid");
        if (c.use_cache) validate(c.cache_policy);
    }

    void add_param(const std::string& name, Tensor<T> t) {
        params_.emplace_back(name, std::move(t));
    }

    void init_params() {
        Rng rng(cfg_.seed);
        const int64_t c = cfg_.channels, v = cfg_.variables, p = cfg_.patch;

        auto dense = [&](int64_t in, int64_t out) {
            Tensor<T> w({in, out});
            const T s = T(1) / std::sqrt(static_cast<T>(in));
            for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal()) * s;
            return w;
        };
        auto vec = [&](int64_t n, T fill) { return Tensor<T>({n}, fill); };
        // Near-identity start: the convolution initially passes QKV through
        // almost unchanged, so early training matches a plain block.
        auto kernel = [&](int64_t ch, int64_t r, bool identity) {
            Tensor<T> k({ch, ch, r, r});
            const T s = T(0.02) / std::sqrt(static_cast<T>(ch * r * r));
            for (int64_t i = 0; i < k.numel(); ++i) k[i] = static_cast<T>(rng.normal()) * s;
            if (identity)
                for (int64_t o = 0; o < ch; ++o)
                    k[((o * ch + o) * r + r / 2) * r + r / 2] += T(1);
            return k;
        };
        auto attention_params = [&](const std::string& prefix, bool cross) {
            if (cross) {
                add_param(prefix + ".wq", dense(c, c));
                add_param(prefix + ".wk", dense(c, c));
                add_param(prefix + ".wv", dense(c, c));
            } else {
                add_param(prefix + ".wqkv", dense(c, 3 * c));
                add_param(prefix + ".bqkv", vec(3 * c, T(0)));
            }
            add_param(prefix + ".wo", dense(c, c));
            add_param(prefix + ".ln_g", vec(c, T(1)));
            add_param(prefix + ".ln_b", vec(c, T(0)));
        };

        add_param("embed.w", dense(v * p * p, c));
        add_param("embed.b", vec(c, T(0)));
        Tensor<T> pos({tokens_at(0), c});
        for (int64_t i = 0; i < pos.numel(); ++i)
            pos[i] = static_cast<T>(rng.normal()) * T(0.02);
        add_param("pos", std::move(pos));

        for (int64_t k = 0; k < cfg_.depth; ++k) {
            const std::string pre = "prune" + std::to_string(k);
            add_param(pre + ".down.w", dense(2 * c, c));
            add_param(pre + ".down.b", vec(c, T(0)));
            attention_params(pre + ".cross", true);
            attention_params(pre + ".self", false);
        }

        for (int64_t i = 0; i < cfg_.processor_blocks; ++i) {
            const std::string pre = "block" + std::to_string(i);
            add_param(pre + ".wqkv", dense(c, 3 * c));
            add_param(pre + ".bqkv", vec(3 * c, T(0)));
            add_param(pre + ".k1", kernel(3 * c, 1, true));
            add_param(pre + ".k3", kernel(3 * c, 3, false));
            add_param(pre + ".k5", kernel(3 * c, 5, false));
            add_param(pre + ".wo", dense(c, c));
            add_param(pre + ".ln1_g", vec(c, T(1)));
            add_param(pre + ".ln1_b", vec(c, T(0)));
            add_param(pre + ".mlp.w1", dense(c, cfg_.mlp_ratio * c));
            add_param(pre + ".mlp.b1", vec(cfg_.mlp_ratio * c, T(0)));
            add_param(pre + ".mlp.w2", dense(cfg_.mlp_ratio * c, c));
            add_param(pre + ".mlp.b2", vec(c, T(0)));
            add_param(pre + ".ln2_g", vec(c, T(1)));
            add_param(pre + ".ln2_b", vec(c, T(0)));
        }

        for (int64_t r = 0; r < cfg_.depth; ++r) {
            const std::string pre = "recover" + std::to_string(r);
            add_param(pre + ".up.w", dense(c, 2 * c));
            add_param(pre + ".up.b", vec(2 * c, T(0)));
            attention_params(pre + ".cross", true);
            attention_params(pre + ".self", false);
        }

        add_param("head.w", dense(c, v * p * p));
        add_param("head.b", vec(v * p * p, T(0)));
    }

    // ---- forward pieces -------------------------------------------------

    // dst slot (b, ti, tj, v, pi, pj) -> flat source pixel index.
    std::vector<int64_t> patch_perm(int64_t b) const {
        const int64_t v = cfg_.variables, hh = cfg_.height, ww = cfg_.width, p = cfg_.patch;
        std::vector<int64_t> idx;
        idx.reserve(static_cast<size_t>(b * v * hh * ww));
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ti = 0; ti < hh / p; ++ti)
                for (int64_t tj = 0; tj < ww / p; ++tj)
                    for (int64_t vv = 0; vv < v; ++vv)
                        for (int64_t pi = 0; pi < p; ++pi)
                            for (int64_t pj = 0; pj < p; ++pj)
                                idx.push_back(((bi * v + vv) * hh + ti * p + pi) * ww + tj * p +
                                              pj);
        return idx;
    }

    Var patch_embed(Bound& bp, Var field, int64_t b) const {
        Tape<T>& t = *bp.tape;
        const int64_t v = cfg_.variables, p = cfg_.patch;
        auto flat = t.reshape(field, {b * v * cfg_.height * cfg_.width, 1});
        auto gathered = t.index_rows(flat, patch_perm(b));
        auto tokens = t.reshape(gathered, {b * tokens_at(0), v * p * p});
        auto emb = t.linear(tokens, bp["embed.w"], bp["embed.b"]);
        return t.add(emb, t.repeat_rows(bp["pos"], b));
    }

    Var head(Bound& bp, Var x, int64_t b) const {
        Tape<T>& t = *bp.tape;
        auto slots = t.linear(x, bp["head.w"], bp["head.b"]);
        auto flat = t.reshape(slots, {t.value(slots).numel(), 1});
        const auto perm = patch_perm(b);
        std::vector<int64_t> inv(perm.size());
        for (size_t s = 0; s < perm.size(); ++s)
            inv[static_cast<size_t>(perm[s])] = static_cast<int64_t>(s);
        auto pixels = t.index_rows(flat, inv);
        return t.reshape(pixels, {b, cfg_.variables, cfg_.height, cfg_.width});
    }

    // Multi-head attention over G row groups; q has tq tokens per group,
    // k/v tk. Writes mean per-key attention into *scores when requested
    // (averaged over heads and queries; meaningful for G == 1).
    Var mha_groups(Tape<T>& t, Var q, Var k, Var v, int64_t groups, Var wo,
                   std::vector<T>* scores) const {
        const int64_t c = cfg_.channels, heads = cfg_.heads, d = c / heads;
        const int64_t tq = t.value(q).dim(0) / groups;
        const int64_t tk = t.value(k).dim(0) / groups;
        if (scores) scores->assign(static_cast<size_t>(groups * tk), T(0));
        Var merged = -1;
        for (int64_t h = 0; h < heads; ++h) {
            auto qh = t.reshape(t.slice_cols(q, h * d, d), {groups, tq, d});
            auto kh = t.reshape(t.slice_cols(k, h * d, d), {groups, tk, d});
            auto vh = t.reshape(t.slice_cols(v, h * d, d), {groups, tk, d});
            auto logits = t.scale(t.matmul(qh, kh, false, true),
                                  T(1) / std::sqrt(static_cast<T>(d)));
            auto attn = t.softmax(logits);
            if (scores) {
                const auto& a = t.value(attn);
                for (int64_t g = 0; g < groups; ++g)
                    for (int64_t i = 0; i < tq; ++i)
                        for (int64_t j = 0; j < tk; ++j)
                            (*scores)[static_cast<size_t>(g * tk + j)] +=
                                a.data()[(g * tq + i) * tk + j];
            }
            auto oh = t.reshape(t.matmul(attn, vh), {groups * tq, d});
            merged = h == 0 ? oh : t.concat_cols(merged, oh);
        }
        if (scores)
            for (auto& s : *scores) s /= static_cast<T>(heads * tq);
        return t.linear(merged, wo);
    }

    // x + LN(attention(x)) with a fused QKV projection; used by the pruning
    // and recovering levels (no conv, no MLP).
    Var self_attention_stage(Bound& bp, const std::string& pre, Var x, int64_t groups) const {
        Tape<T>& t = *bp.tape;
        const int64_t c = cfg_.channels;
        auto qkv = t.linear(x, bp[pre + ".wqkv"], bp[pre + ".bqkv"]);
        auto q = t.slice_cols(qkv, 0, c);
        auto k = t.slice_cols(qkv, c, c);
        auto v = t.slice_cols(qkv, 2 * c, c);
        auto attn = mha_groups(t, q, k, v, groups, bp[pre + ".wo"], nullptr);
        return t.add(t.layer_norm(attn, bp[pre + ".ln_g"], bp[pre + ".ln_b"]), x);
    }

    // q_src + LN(cross-attention(q_src -> kv_src)).
    Var cross_attention_stage(Bound& bp, const std::string& pre, Var q_src, Var kv_src,
                              int64_t groups) const {
        Tape<T>& t = *bp.tape;
        auto q = t.linear(q_src, bp[pre + ".wq"]);
        auto k = t.linear(kv_src, bp[pre + ".wk"]);
        auto v = t.linear(kv_src, bp[pre + ".wv"]);
        auto attn = mha_groups(t, q, k, v, groups, bp[pre + ".wo"], nullptr);
        return t.add(t.layer_norm(attn, bp[pre + ".ln_g"], bp[pre + ".ln_b"]), q_src);
    }

    // Channel-concatenate adjacent token pairs along the level's axis.
    Var pair_tokens(Tape<T>& t, Var x, int64_t level, int64_t b) const {
        const int64_t h = gh_[level], w = gw_[level], tn = h * w;
        std::vector<int64_t> even, odd;
        even.reserve(static_cast<size_t>(b * tn / 2));
        odd.reserve(static_cast<size_t>(b * tn / 2));
        for (int64_t bi = 0; bi < b; ++bi) {
            if (level % 2 == 0) {
                for (int64_t i2 = 0; i2 < h / 2; ++i2)
                    for (int64_t j = 0; j < w; ++j) {
                        even.push_back(bi * tn + (2 * i2) * w + j);
                        odd.push_back(bi * tn + (2 * i2 + 1) * w + j);
                    }
            } else {
                for (int64_t i = 0; i < h; ++i)
                    for (int64_t j2 = 0; j2 < w / 2; ++j2) {
                        even.push_back(bi * tn + i * w + 2 * j2);
                        odd.push_back(bi * tn + i * w + 2 * j2 + 1);
                    }
            }
        }
        return t.concat_cols(t.index_rows(x, even), t.index_rows(x, odd));
    }

    Var prune_level(Bound& bp, int64_t k, Var x, int64_t b) const {
        Tape<T>& t = *bp.tape;
        const std::string pre = "prune" + std::to_string(k);
        auto paired = pair_tokens(t, x, k, b);
        auto down = t.linear(paired, bp[pre + ".down.w"], bp[pre + ".down.b"]);
        auto ca = cross_attention_stage(bp, pre + ".cross", down, x, b);
        return self_attention_stage(bp, pre + ".self", ca, b);
    }

    Var recover_level(Bound& bp, int64_t r, int64_t k, Var x, Var residual, int64_t b) const {
        Tape<T>& t = *bp.tape;
        const std::string pre = "recover" + std::to_string(r);
        const int64_t c = cfg_.channels;
        const int64_t h = gh_[k], w = gw_[k];  // fine grid being restored
        const int64_t tc = tokens_at(k + 1);   // coarse token count

        auto up2 = t.linear(x, bp[pre + ".up.w"], bp[pre + ".up.b"]);
        auto stacked = t.concat_rows(t.slice_cols(up2, 0, c), t.slice_cols(up2, c, c));
        // stacked rows: [even members of all pairs | odd members], b-major
        // inside each half. Rebuild fine row-major order.
        std::vector<int64_t> perm;
        perm.reserve(static_cast<size_t>(2 * b * tc));
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t i = 0; i < h; ++i)
                for (int64_t j = 0; j < w; ++j) {
                    int64_t par, coarse;
                    if (k % 2 == 0) {
                        par = i % 2;
                        coarse = (i / 2) * w + j;
                    } else {
                        par = j % 2;
                        coarse = i * (w / 2) + j / 2;
                    }
                    perm.push_back(par * b * tc + bi * tc + coarse);
                }
        auto up = t.index_rows(stacked, perm);
        auto merged = t.add(up, residual);
        auto ca = cross_attention_stage(bp, pre + ".cross", merged, x, b);
        return self_attention_stage(bp, pre + ".self", ca, b);
    }

    Var processor_block(Bound& bp, int64_t i, Var x, int64_t b, CacheState* cache,
                        int& win_cursor, int& global_cursor) const {
        Tape<T>& t = *bp.tape;
        const std::string pre = "block" + std::to_string(i);
        const int64_t c = cfg_.channels;
        const int64_t h = gh_[cfg_.depth], w = gw_[cfg_.depth], tn = h * w;

        auto qkv = t.linear(x, bp[pre + ".wqkv"], bp[pre + ".bqkv"]);
        if (cfg_.conv_enabled)
            qkv = t.multiconv(qkv, bp[pre + ".k1"], bp[pre + ".k3"], bp[pre + ".k5"], b, h, w);
        auto q = t.slice_cols(qkv, 0, c);
        auto k = t.slice_cols(qkv, c, c);
        auto v = t.slice_cols(qkv, 2 * c, c);

        Var attn;
        if (i % 2 == 0) {
            const auto [wh, ww] = windows_[static_cast<size_t>(win_cursor++) % windows_.size()];
            auto part = batched(window_partition_indices(h, w, wh, ww), b, tn);
            auto merge = batched(window_merge_indices(h, w, wh, ww), b, tn);
            const int64_t groups = b * tn / (wh * ww);
            auto local = mha_groups(t, t.index_rows(q, part), t.index_rows(k, part),
                                    t.index_rows(v, part), groups, bp[pre + ".wo"], nullptr);
            attn = t.index_rows(local, merge);
        } else if (cache != nullptr) {
            attn = cached_global_attention(bp, pre, q, k, v,
                                           cache->blocks[static_cast<size_t>(global_cursor++)]);
        } else {
            attn = mha_groups(t, q, k, v, b, bp[pre + ".wo"], nullptr);
        }

        auto a = t.add(t.layer_norm(attn, bp[pre + ".ln1_g"], bp[pre + ".ln1_b"]), x);
        auto hidden = t.gelu(t.linear(a, bp[pre + ".mlp.w1"], bp[pre + ".mlp.b1"]));
        auto m = t.linear(hidden, bp[pre + ".mlp.w2"], bp[pre + ".mlp.b2"]);
        return t.add(t.layer_norm(m, bp[pre + ".ln2_g"], bp[pre + ".ln2_b"]), a);
    }

    Var cached_global_attention(Bound& bp, const std::string& pre, Var q, Var k, Var v,
                                typename CacheState::Entry& e) const {
        Tape<T>& t = *bp.tape;
        const int64_t l = processor_tokens();
        const auto& policy = cfg_.cache_policy;

        Var k_all = k, v_all = v;
        std::vector<T> old;
        if (e.k >= 0) {
            if (static_cast<int64_t>(e.importance.size()) == policy.n_max * l) {
                const auto keep = prune_indices(e.importance, l, policy);
                e.k = t.index_rows(e.k, keep);
                e.v = t.index_rows(e.v, keep);
                std::vector<T> kept;
                kept.reserve(keep.size());
                for (int64_t idx : keep) kept.push_back(e.importance[static_cast<size_t>(idx)]);
                e.importance = std::move(kept);
            }
            k_all = t.concat_rows(e.k, k);
            v_all = t.concat_rows(e.v, v);
            old = e.importance;
        }
        old.resize(static_cast<size_t>(t.value(k_all).dim(0)), T(0));

        std::vector<T> cur;
        Var attn = mha_groups(t, q, k_all, v_all, 1, bp[pre + ".wo"], &cur);
        e.importance = update_importance(old, cur, policy.lambda, l);
        e.k = k_all;
        e.v = v_all;
        return attn;
    }

    static std::vector<int64_t> batched(const std::vector<int64_t>& per_item, int64_t b,
                                        int64_t tn) {
        std::vector<int64_t> out;
        out.reserve(per_item.size() * static_cast<size_t>(b));
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t s : per_item) out.push_back(bi * tn + s);
        return out;
    }
};

}  // namespace emkit
