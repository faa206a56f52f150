// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Training and evaluation harness: single-step pretraining, multi-step
// finetuning (plain feedback or cache-accumulating), autoregressive rollout
// with per-step metrics, and deterministic result tables.
//
// The objective everywhere is the adaptive blended loss from loss.hpp; the
// harness never re-derives it. theta and the per-variable log-variances are
// trained alongside the network with the same optimizer, using their
// closed-form gradients. Models run in per-variable z-score space; rollout
// metrics against raw fields use the dataset statistics.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "emkit/loss.hpp"
#include "emkit/metrics.hpp"
#include "emkit/model.hpp"
#include "emkit/synthetic.hpp"
#include "emkit/tensor.hpp"

namespace emkit {

struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// theta is kept strictly inside (-pi/2, pi/2) during training: the blend
// gradient carries a cos(theta) factor, so the exact endpoints are absorbing
// states the optimizer could never leave once a large step lands on them.
inline constexpr double kThetaClampMargin = 1e-3;

enum class Strategy { none, plain, accumulative };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::none: return "none";
        case Strategy::plain: return "plain";
        case Strategy::accumulative: return "accumulative";
    }
    return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "none") return Strategy::none;
    if (s == "plain") return Strategy::plain;
    if (s == "accumulative") return Strategy::accumulative;
    throw ValueError("unknown strategy '" + s + "' (none|plain|accumulative)");
}

struct TrainConfig {
    int64_t epochs = 10;
    int64_t batch = 2;       // pretraining only; unrolled finetuning is single-stream
    double lr = 2e-4;
    double lr_min = 1e-7;    // cosine floor
    // Step size for theta and the log-variances. These sit O(1) from their
    // targets (w tracks ln E) while the adaptive optimizer moves any
    // parameter at most ~lr per step, so they get their own rate.
    double loss_lr = 0.05;
    double weight_decay = 0.0;
    double holdout = 0.2;    // trailing fraction of pairs reserved for evaluation
    int64_t finetune_steps = 10;  // K
    Strategy strategy = Strategy::none;
    CachePolicy cache_policy{};
    bool detach_cache = false;  // cut gradients at cached K/V between unroll steps
    double theta0 = 0.0;
    uint64_t seed = 1;
};

inline TrainConfig finetune_defaults() {
    TrainConfig cfg;
    cfg.lr = 5e-5;
    cfg.strategy = Strategy::accumulative;
    return cfg;
}

inline io::json to_json(const TrainConfig& c) {
    return io::json{{"epochs", c.epochs},
                    {"batch", c.batch},
                    {"lr", c.lr},
                    {"lr_min", c.lr_min},
                    {"loss_lr", c.loss_lr},
                    {"weight_decay", c.weight_decay},
                    {"holdout", c.holdout},
                    {"finetune_steps", c.finetune_steps},
                    {"strategy", to_string(c.strategy)},
                    {"cache_lambda", c.cache_policy.lambda},
                    {"cache_n_max", c.cache_policy.n_max},
                    {"cache_per_step_scores", c.cache_policy.per_step_scores},
                    {"detach_cache", c.detach_cache},
                    {"theta0", c.theta0},
                    {"seed", c.seed}};
}

// Missing keys keep their defaults so config files may be partial.
inline TrainConfig train_config_from_json(const io::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.lr_min = j.value("lr_min", c.lr_min);
    c.loss_lr = j.value("loss_lr", c.loss_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.holdout = j.value("holdout", c.holdout);
    c.finetune_steps = j.value("finetune_steps", c.finetune_steps);
    if (j.contains("strategy")) c.strategy = strategy_from_string(j.at("strategy"));
    c.cache_policy.lambda = j.value("cache_lambda", c.cache_policy.lambda);
    c.cache_policy.n_max = j.value("cache_n_max", c.cache_policy.n_max);
    c.cache_policy.per_step_scores =
        j.value("cache_per_step_scores", c.cache_policy.per_step_scores);
    c.detach_cache = j.value("detach_cache", c.detach_cache);
    c.theta0 = j.value("theta0", c.theta0);
    c.seed = j.value("seed", c.seed);
    return c;
}

inline double cosine_lr(int64_t step, int64_t total, double lr0, double lr_min) {
    if (total <= 1) return lr0;
    const double t = static_cast<double>(step) / static_cast<double>(total - 1);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * std::min(1.0, t)));
}

// First-order optimizer with adaptive moment estimates and decoupled weight
// decay. Slots are registered lazily by (index, length).
template <typename T>
class AdamW {
  public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void begin_step() { ++t_; }

    void update(size_t slot, T* p, const T* g, int64_t n, double lr, double weight_decay) {
        if (slots_.size() <= slot) slots_.resize(slot + 1);
        auto& s = slots_[slot];
        if (s.m.empty()) {
            s.m.assign(static_cast<size_t>(n), 0.0);
            s.v.assign(static_cast<size_t>(n), 0.0);
        }
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (int64_t i = 0; i < n; ++i) {
            const double gi = static_cast<double>(g[i]);
            s.m[static_cast<size_t>(i)] = beta1_ * s.m[static_cast<size_t>(i)] + (1 - beta1_) * gi;
            s.v[static_cast<size_t>(i)] =
                beta2_ * s.v[static_cast<size_t>(i)] + (1 - beta2_) * gi * gi;
            const double mh = s.m[static_cast<size_t>(i)] / bc1;
            const double vh = s.v[static_cast<size_t>(i)] / bc2;
            double x = static_cast<double>(p[i]);
            x -= lr * (mh / (std::sqrt(vh) + eps_) + weight_decay * x);
            p[i] = static_cast<T>(x);
        }
    }

  private:
    struct Slot {
        std::vector<double> m, v;
    };
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Slot> slots_;
};

template <typename T>
struct TrainLog {
    std::vector<double> loss;   // per-epoch mean blended loss
    std::vector<double> theta;  // at epoch end
    std::vector<double> alpha;
};

template <typename T>
struct TrainResult {
    TrainLog<T> log;
    double theta = 0.0;
    Tensor<T> log_var;  // [V]
    double holdout_rmse_before = 0.0;  // normalized-space one-step RMSE
    double holdout_rmse_after = 0.0;
    int64_t max_cache_tokens = 0;  // finetuning instrumentation
};

namespace detail {

// Mean over variables of the latitude-weighted RMSE between two [V,H,W]
// normalized fields; the harness's scalar forecast score.
template <typename T>
inline double mean_lat_rmse(const Tensor<T>& pred, const Tensor<T>& truth,
                            const Tensor<T>& weights) {
    const int64_t v = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
    double acc = 0.0;
    for (int64_t vi = 0; vi < v; ++vi) {
        Tensor<T> pv({h, w});
        Tensor<T> tv({h, w});
        std::copy_n(pred.data() + vi * h * w, h * w, pv.data());
        std::copy_n(truth.data() + vi * h * w, h * w, tv.data());
        acc += static_cast<double>(rmse(pv, tv, weights));
    }
    return acc / static_cast<double>(v);
}

template <typename T>
inline Tensor<T> stack_pairs(const std::vector<Tensor<T>>& norm,
                             const std::vector<int64_t>& times, int64_t offset) {
    const auto& first = norm[static_cast<size_t>(times[0] + offset)];
    const int64_t b = static_cast<int64_t>(times.size());
    Tensor<T> out({b, first.dim(0), first.dim(1), first.dim(2)});
    const int64_t per = first.numel();
    for (int64_t i = 0; i < b; ++i)
        std::copy_n(norm[static_cast<size_t>(times[static_cast<size_t>(i)] + offset)].data(),
                    per, out.data() + i * per);
    return out;
}

template <typename T>
inline void check_finite_loss(const LossBreakdown<T>& lb, int64_t epoch, int64_t step) {
    if (std::isfinite(static_cast<double>(lb.total))) return;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "training diverged at epoch %lld step %lld: total=%g lat=%g var=%g alpha=%g",
                  static_cast<long long>(epoch), static_cast<long long>(step),
                  static_cast<double>(lb.total), static_cast<double>(lb.lat),
                  static_cast<double>(lb.var), static_cast<double>(lb.alpha));
    throw TrainingDiverged(buf);
}

template <typename T>
inline std::vector<Tensor<T>> normalized_series(const Dataset<T>& ds) {
    std::vector<Tensor<T>> norm;
    norm.reserve(ds.snaps.size());
    for (const auto& s : ds.snaps) norm.push_back(normalize_fields(s.data, ds.grid->stats));
    return norm;
}

// Mean one-step forecast RMSE over the given start times (normalized space).
template <typename T>
inline double one_step_rmse(const EmformerModel<T>& model, const std::vector<Tensor<T>>& norm,
                            const std::vector<int64_t>& starts, const Tensor<T>& weights) {
    if (starts.empty()) return 0.0;
    double acc = 0.0;
    for (int64_t s : starts) {
        Tape<T> t;
        auto bound = model.bind(t, false);
        const auto& x = norm[static_cast<size_t>(s)];
        auto in = t.constant(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}));
        Tensor<T> pred = t.value(model.forward(bound, in))
                             .reshaped({x.dim(0), x.dim(1), x.dim(2)});
        acc += mean_lat_rmse(pred, norm[static_cast<size_t>(s + 1)], weights);
    }
    return acc / static_cast<double>(starts.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-step pretraining: predict snapshot t+1 from t, optimizing all model
// parameters plus (theta, log-variances) with their closed-form gradients.
// ---------------------------------------------------------------------------
template <typename T>
inline TrainResult<T> pretrain(EmformerModel<T>& model, const Dataset<T>& ds,
                               const TrainConfig& cfg) {
    if (ds.size() < 2) throw ValueError("pretrain: dataset needs at least 2 snapshots");
    if (cfg.epochs < 0 || cfg.batch < 1) throw ValueError("pretrain: bad epochs/batch");
    if (!(cfg.holdout >= 0.0 && cfg.holdout < 1.0))
        throw ValueError("pretrain: holdout fraction outside [0, 1)");

    const auto norm = detail::normalized_series(ds);
    const Tensor<T>& weights = ds.grid->weights;
    const int64_t pairs = ds.size() - 1;
    int64_t held = static_cast<int64_t>(std::floor(cfg.holdout * static_cast<double>(pairs)));
    held = std::min(held, pairs - 1);  // keep at least one training pair
    const int64_t train_pairs = pairs - held;

    std::vector<int64_t> train_ix(static_cast<size_t>(train_pairs));
    std::iota(train_ix.begin(), train_ix.end(), 0);
    std::vector<int64_t> hold_ix(static_cast<size_t>(held));
    std::iota(hold_ix.begin(), hold_ix.end(), train_pairs);

    TrainResult<T> out;
    out.theta = cfg.theta0;
    out.log_var = Tensor<T>({ds.variables()});
    out.holdout_rmse_before = detail::one_step_rmse(model, norm, hold_ix, weights);

    AdamW<T> opt;
    Rng rng(cfg.seed);
    const int64_t steps_per_epoch = (train_pairs + cfg.batch - 1) / cfg.batch;
    const int64_t total_steps = cfg.epochs * steps_per_epoch;
    int64_t global_step = 0;
    const double half_pi = M_PI / 2.0;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(train_ix);
        double epoch_loss = 0.0;
        for (int64_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<int64_t> batch;
            for (int64_t i = s * cfg.batch; i < std::min((s + 1) * cfg.batch, train_pairs); ++i)
                batch.push_back(train_ix[static_cast<size_t>(i)]);

            Tape<T> t;
            auto bound = model.bind(t, true);
            auto in = t.constant(detail::stack_pairs(norm, batch, 0));
            auto pred = model.forward(bound, in);
            const Tensor<T> target = detail::stack_pairs(norm, batch, 1);

            const auto& pv = t.value(pred);
            const auto lb = loss_breakdown(pv, target, out.log_var,
                                           static_cast<T>(out.theta), weights);
            detail::check_finite_loss(lb, epoch, s);
            // The optimizer consumes exactly the adaptive blend, nothing else.
            if (lb.total != loss_total(pv, target, out.log_var, static_cast<T>(out.theta),
                                       weights))
                throw std::logic_error("pretrain: objective drifted from the blended loss");
            auto lg = loss_grads(pv, target, out.log_var, static_cast<T>(out.theta), weights);
            epoch_loss += static_cast<double>(lb.total);

            t.backward(pred, std::move(lg.dpred));
            const double lr = cosine_lr(global_step++, total_steps, cfg.lr, cfg.lr_min);
            opt.begin_step();
            size_t slot = 0;
            for (auto& [name, p] : model.parameters()) {
                const Tensor<T> g = t.grad(bound[name]);
                opt.update(slot++, p.data(), g.data(), p.numel(), lr, cfg.weight_decay);
            }
            T theta_t = static_cast<T>(out.theta);
            opt.update(slot++, &theta_t, &lg.dtheta, 1, cfg.loss_lr, 0.0);
            out.theta = std::clamp(static_cast<double>(theta_t), -half_pi + kThetaClampMargin,
                                   half_pi - kThetaClampMargin);
            opt.update(slot++, out.log_var.data(), lg.dlog_var_inner.data(),
                       out.log_var.numel(), cfg.loss_lr, 0.0);
        }
        out.log.loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
        out.log.theta.push_back(out.theta);
        out.log.alpha.push_back(
            static_cast<double>(blend_alpha(static_cast<T>(out.theta))));
    }

    out.holdout_rmse_after = detail::one_step_rmse(model, norm, hold_ix, weights);
    return out;
}

// ---------------------------------------------------------------------------
// Multi-step finetuning: unroll K forecast steps feeding each prediction
// back as the next input, with gradients flowing through the whole rollout.
// strategy=accumulative threads the KV cache (pruned at capacity) through
// the unroll; strategy=plain runs cache-free; strategy=none is a no-op.
// ---------------------------------------------------------------------------
template <typename T>
inline TrainResult<T> finetune(EmformerModel<T>& model, const Dataset<T>& ds,
                               const TrainConfig& cfg, double theta0 = 0.0,
                               const Tensor<T>* log_var0 = nullptr) {
    TrainResult<T> out;
    out.theta = theta0;
    out.log_var = log_var0 ? *log_var0 : Tensor<T>({ds.variables()});
    if (cfg.strategy == Strategy::none) return out;

    const int64_t K = cfg.finetune_steps;
    if (K < 2) throw ValueError("finetune: need at least 2 unroll steps");
    if (ds.size() < K + 1)
        throw ValueError("finetune: dataset has " + std::to_string(ds.size()) +
                         " snapshots, unrolling needs " + std::to_string(K + 1));
    if (cfg.epochs < 0) throw ValueError("finetune: bad epochs");
    const bool with_cache = cfg.strategy == Strategy::accumulative;
    if (with_cache) {
        validate(cfg.cache_policy);
        model.set_cache(true, cfg.cache_policy);
    } else {
        model.set_cache(false);
    }

    const auto norm = detail::normalized_series(ds);
    const Tensor<T>& weights = ds.grid->weights;
    std::vector<int64_t> starts(static_cast<size_t>(ds.size() - K));
    std::iota(starts.begin(), starts.end(), 0);

    AdamW<T> opt;
    Rng rng(cfg.seed);
    const int64_t total_steps = cfg.epochs * static_cast<int64_t>(starts.size());
    int64_t global_step = 0;
    const double half_pi = M_PI / 2.0;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(starts);
        double epoch_loss = 0.0;
        for (size_t si = 0; si < starts.size(); ++si) {
            const int64_t s0 = starts[si];
            Tape<T> t;
            auto bound = model.bind(t, true);
            auto cache = model.make_cache();

            const auto& x0 = norm[static_cast<size_t>(s0)];
            auto x = t.constant(x0.reshaped({1, x0.dim(0), x0.dim(1), x0.dim(2)}));
            typename Tape<T>::Var objective = -1;
            double seq_loss = 0.0, dtheta = 0.0;
            Tensor<T> dlog_var({ds.variables()});

            for (int64_t k = 1; k <= K; ++k) {
                auto pred = model.forward(bound, x, with_cache ? &cache : nullptr);
                const auto& pv = t.value(pred);
                const Tensor<T> target =
                    norm[static_cast<size_t>(s0 + k)].reshaped(pv.shape());
                const auto lb = loss_breakdown(pv, target, out.log_var,
                                               static_cast<T>(out.theta), weights);
                detail::check_finite_loss(lb, epoch, static_cast<int64_t>(si));
                auto lg = loss_grads(pv, target, out.log_var, static_cast<T>(out.theta),
                                     weights);
                seq_loss += static_cast<double>(lb.total) / static_cast<double>(K);
                dtheta += static_cast<double>(lg.dtheta) / static_cast<double>(K);
                for (int64_t vi = 0; vi < dlog_var.numel(); ++vi)
                    dlog_var[vi] += lg.dlog_var_inner[vi] / static_cast<T>(K);

                // First-order surrogate sum_k <pred_k, dL_k/dpred_k> / K: its
                // tape gradient equals the true blended-loss gradient while
                // still flowing through the fed-back predictions and cache.
                Tensor<T> c = lg.dpred;
                for (int64_t i = 0; i < c.numel(); ++i) c[i] /= static_cast<T>(K);
                auto term = t.scale(t.mean_all(t.mul(pred, t.constant(std::move(c)))),
                                    static_cast<T>(pv.numel()));
                objective = objective < 0 ? term : t.add(objective, term);

                if (with_cache) {
                    for (const auto& e : cache.blocks)
                        if (e.k >= 0)
                            out.max_cache_tokens =
                                std::max(out.max_cache_tokens, t.value(e.k).dim(0));
                    if (cfg.detach_cache)
                        for (auto& e : cache.blocks)
                            if (e.k >= 0) {
                                e.k = t.constant(t.value(e.k));
                                e.v = t.constant(t.value(e.v));
                            }
                }
                x = pred;
            }
            epoch_loss += seq_loss;

            t.backward(objective, Tensor<T>({1}, {T(1)}));
            const double lr = cosine_lr(global_step++, total_steps, cfg.lr, cfg.lr_min);
            opt.begin_step();
            size_t slot = 0;
            for (auto& [name, p] : model.parameters()) {
                const Tensor<T> g = t.grad(bound[name]);
                opt.update(slot++, p.data(), g.data(), p.numel(), lr, cfg.weight_decay);
            }
            T theta_t = static_cast<T>(out.theta);
            const T dth = static_cast<T>(dtheta);
            opt.update(slot++, &theta_t, &dth, 1, cfg.loss_lr, 0.0);
            out.theta = std::clamp(static_cast<double>(theta_t), -half_pi + kThetaClampMargin,
                                   half_pi - kThetaClampMargin);
            opt.update(slot++, out.log_var.data(), dlog_var.data(), out.log_var.numel(),
                       cfg.loss_lr, 0.0);
        }
        out.log.loss.push_back(epoch_loss / static_cast<double>(starts.size()));
        out.log.theta.push_back(out.theta);
        out.log.alpha.push_back(
            static_cast<double>(blend_alpha(static_cast<T>(out.theta))));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Autoregressive rollout scored against the dataset's own future.
// ---------------------------------------------------------------------------
template <typename T>
struct RolloutResult {
    std::vector<FieldSnapshot<T>> snaps;          // denormalized predictions
    std::vector<double> rmse;                     // per step, normalized space
    std::vector<std::vector<MetricRow<T>>> rows;  // per step, raw space
    int64_t max_cache_tokens = 0;
};

template <typename T>
inline RolloutResult<T> rollout(const EmformerModel<T>& model, const Dataset<T>& ds,
                                int64_t start, int64_t steps, bool with_cache) {
    if (steps < 1) throw ValueError("rollout: steps must be >= 1");
    if (start < 0 || start + steps >= ds.size())
        throw ValueError("rollout: window [" + std::to_string(start) + ", " +
                         std::to_string(start + steps) + "] leaves the dataset of " +
                         std::to_string(ds.size()));
    if (with_cache && !model.config().use_cache)
        throw ValueError("rollout: with_cache needs a cache-enabled model");

    const auto& stats = ds.grid->stats;
    const Tensor<T>& weights = ds.grid->weights;
    RolloutResult<T> out;

    std::vector<std::unique_ptr<Tape<T>>> tapes;
    auto cache = model.make_cache();
    Tensor<T> cur = normalize_fields(ds.snaps[static_cast<size_t>(start)].data, stats);

    for (int64_t k = 1; k <= steps; ++k) {
        tapes.push_back(std::make_unique<Tape<T>>());
        auto& t = *tapes.back();
        auto bound = model.bind(t, false);
        if (with_cache && tapes.size() > 1)
            cache = model.detach_cache(cache, *tapes[tapes.size() - 2], t);
        auto in = t.constant(cur.reshaped({1, cur.dim(0), cur.dim(1), cur.dim(2)}));
        auto pred = model.forward(bound, in, with_cache ? &cache : nullptr);
        cur = t.value(pred).reshaped({cur.dim(0), cur.dim(1), cur.dim(2)});

        if (with_cache)
            for (const auto& e : cache.blocks)
                if (e.k >= 0)
                    out.max_cache_tokens = std::max(out.max_cache_tokens, t.value(e.k).dim(0));

        const auto& truth = ds.snaps[static_cast<size_t>(start + k)];
        out.rmse.push_back(
            detail::mean_lat_rmse(cur, normalize_fields(truth.data, stats), weights));

        FieldSnapshot<T> snap;
        snap.time = truth.time;
        snap.data = denormalize_fields(cur, stats);
        snap.names = ds.names;
        snap.grid = ds.grid;
        out.rows.push_back(evaluate(snap.data, truth.data, *ds.grid));
        out.snaps.push_back(std::move(snap));

        if (tapes.size() > 2) tapes[tapes.size() - 3].reset();  // keep only the live pair
    }
    return out;
}

// Per-step score of the frozen-state forecast; the natural floor for any
// trained model on a dissipative system.
template <typename T>
inline std::vector<double> persistence_rmse(const Dataset<T>& ds, int64_t start,
                                            int64_t steps) {
    if (steps < 1) throw ValueError("persistence_rmse: steps must be >= 1");
    if (start < 0 || start + steps >= ds.size())
        throw ValueError("persistence_rmse: window leaves the dataset");
    const auto& stats = ds.grid->stats;
    const Tensor<T> base = normalize_fields(ds.snaps[static_cast<size_t>(start)].data, stats);
    std::vector<double> out;
    for (int64_t k = 1; k <= steps; ++k)
        out.push_back(detail::mean_lat_rmse(
            base, normalize_fields(ds.snaps[static_cast<size_t>(start + k)].data, stats),
            ds.grid->weights));
    return out;
}

// ---------------------------------------------------------------------------
// Result tables: one row per (strategy, lead step), deterministic formatting,
// missing cells rendered as "-".
// ---------------------------------------------------------------------------
struct ReportRow {
    std::string strategy;
    int64_t lead = 0;
    std::optional<double> rmse;
    std::optional<double> acc;
};

namespace detail {

inline std::string fmt_cell(const std::optional<double>& x) {
    if (!x) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", *x);
    return buf;
}

}  // namespace detail

inline std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string out = "strategy,lead,rmse,acc\n";
    for (const auto& r : rows)
        out += r.strategy + "," + std::to_string(r.lead) + "," + detail::fmt_cell(r.rmse) +
               "," + detail::fmt_cell(r.acc) + "\n";
    return out;
}

inline std::string report_markdown(const std::vector<ReportRow>& rows) {
    std::string out = "| strategy | lead | rmse | acc |\n|---|---|---|---|\n";
    for (const auto& r : rows)
        out += "| " + r.strategy + " | " + std::to_string(r.lead) + " | " +
               detail::fmt_cell(r.rmse) + " | " + detail::fmt_cell(r.acc) + " |\n";
    return out;
}

}  // namespace emkit
