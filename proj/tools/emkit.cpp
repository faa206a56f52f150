// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Single-binary command-line front end. The pipeline subcommands (gen-data,
// train, finetune, rollout, report) move datasets and checkpoints between
// directories; the module-level tools (equiv, bench, grad-check,
// loss-dynamics, metrics, track) are self-contained numerical utilities.
// Every subcommand that writes files drops a run_manifest.json (effective
// config, seeds, git hash) beside its outputs.
//
// Option precedence: built-in defaults, then --config JSON, then flags.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emkit/bench.hpp"
#include "emkit/grad_check.hpp"
#include "emkit/tracker.hpp"
#include "emkit/train.hpp"

namespace fs = std::filesystem;
using emkit::io::json;

#ifndef EMKIT_GIT_HASH
#define EMKIT_GIT_HASH "unknown"
#endif

namespace {

void write_run_manifest(const std::string& dir, const std::string& command, json config,
                        std::vector<uint64_t> seeds) {
    fs::create_directories(dir);
    json m{{"tool", "emkit"},
           {"command", command},
           {"git_hash", EMKIT_GIT_HASH},
           {"config", std::move(config)},
           {"seeds", std::move(seeds)}};
    emkit::io::write_json(dir + "/run_manifest.json", m);
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw emkit::io::IoError("cannot open " + path + " for writing");
    os << body;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

// [V,H,W] -> copy of variable v as [H,W].
emkit::Tensor<double> slice_var(const emkit::Tensor<double>& t, int64_t v) {
    const int64_t h = t.dim(1), w = t.dim(2);
    emkit::Tensor<double> out({h, w});
    std::copy_n(t.data() + v * h * w, h * w, out.data());
    return out;
}

// The pretrain/finetune outputs live in <dir>/checkpoint plus <dir>/result.json;
// accept either that layout or a bare checkpoint directory.
std::string resolve_checkpoint(const std::string& dir) {
    if (fs::exists(dir + "/checkpoint/manifest.json")) return dir + "/checkpoint";
    return dir;
}

struct LossState {
    double theta = 0.0;
    emkit::Tensor<double> log_var;
};

LossState load_loss_state(const std::string& dir, int64_t variables, double fallback_theta) {
    LossState st;
    st.theta = fallback_theta;
    st.log_var = emkit::Tensor<double>({variables});
    const std::string path = dir + "/result.json";
    if (!fs::exists(path)) return st;
    const json r = emkit::io::read_json(path);
    st.theta = r.value("theta", st.theta);
    if (r.contains("log_var")) {
        const std::vector<double> lv = r.at("log_var");
        if (static_cast<int64_t>(lv.size()) != variables)
            throw emkit::ValueError("result.json log_var has " + std::to_string(lv.size()) +
                                    " entries for " + std::to_string(variables) + " variables");
        std::copy(lv.begin(), lv.end(), st.log_var.data());
    }
    return st;
}

void write_train_outputs(const std::string& out, const emkit::EmformerModel<double>& model,
                         const emkit::TrainResult<double>& res) {
    fs::create_directories(out);
    model.save(out + "/checkpoint");
    std::string log = "epoch,loss,theta,alpha\n";
    for (size_t e = 0; e < res.log.loss.size(); ++e)
        log += std::to_string(e) + "," + fmt(res.log.loss[e]) + "," + fmt(res.log.theta[e]) +
               "," + fmt(res.log.alpha[e]) + "\n";
    write_text(out + "/training_log.csv", log);
    json r{{"theta", res.theta},
           {"log_var", std::vector<double>(res.log_var.data(),
                                           res.log_var.data() + res.log_var.numel())},
           {"holdout_rmse_before", res.holdout_rmse_before},
           {"holdout_rmse_after", res.holdout_rmse_after},
           {"max_cache_tokens", res.max_cache_tokens}};
    emkit::io::write_json(out + "/result.json", r);
}

// --config is applied before CLI11 binds flag values, so flags given on the
// command line override the file. Only a plain prescan of argv is needed.
json prescan_config(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" || a == "-c") {
            if (i + 1 >= argc) throw emkit::ValueError("--config needs a file argument");
            return emkit::io::read_json(argv[i + 1]);
        }
        if (a.rfind("--config=", 0) == 0) return emkit::io::read_json(a.substr(9));
    }
    return json::object();
}

template <class T>
void run_equiv(uint64_t seed, int trials) {
    using namespace emkit;
    double mo = 0, m1 = 0, m3 = 0, m5 = 0, mx = 0;
    Rng rng(seed);
    for (int t = 0; t < trials; ++t) {
        const int64_t b = rng.uniform_int(1, 4), ci = rng.uniform_int(1, 16);
        const int64_t co = rng.uniform_int(1, 16);
        const int64_t h = rng.uniform_int(5, 32), w = rng.uniform_int(5, 32);
        const uint64_t s = seed * 1000003 + static_cast<uint64_t>(t) * 7;
        const auto x = seeded_tensor<T>({b, ci, h, w}, s + 1, Dist::Normal);
        const auto go = seeded_tensor<T>({b, co, h, w}, s + 2, Dist::Normal);
        const auto set = seeded_kernel_set<T>(co, ci, s + 3);
        mo = std::max(mo, max_abs_diff(multi_scale_forward(x, set, MultiScaleMode::Fused),
                                       multi_scale_forward(x, set, MultiScaleMode::Plain)));
        const auto gf = multi_scale_backward(x, set, go, MultiScaleMode::Fused);
        const auto gp = multi_scale_backward(x, set, go, MultiScaleMode::Plain);
        m1 = std::max(m1, max_abs_diff(gf.k1, gp.k1));
        m3 = std::max(m3, max_abs_diff(gf.k3, gp.k3));
        m5 = std::max(m5, max_abs_diff(gf.k5, gp.k5));
        mx = std::max(mx, max_abs_diff(gf.input, gp.input));
    }
    std::printf("trials=%d precision=%s\n", trials, std::is_same_v<T, float> ? "f32" : "f64");
    std::printf("max_out_diff=%.3e\n", mo);
    std::printf("max_gk1_diff=%.3e max_gk3_diff=%.3e max_gk5_diff=%.3e\n", m1, m3, m5);
    std::printf("max_gx_diff=%.3e\n", mx);
}

// Worst relative FD error of the closed-form loss gradients on one random
// instance: theta, every log-variance, and a sample of prediction entries.
double loss_fd_worst(uint64_t seed) {
    using namespace emkit;
    const int64_t B = 2, V = 3, H = 5, W = 6;
    const auto pred = seeded_tensor<double>({B, V, H, W}, seed + 1, Dist::Normal);
    const auto truth = seeded_tensor<double>({B, V, H, W}, seed + 2, Dist::Normal);
    auto log_var = seeded_tensor<double>({V}, seed + 3, Dist::Normal);
    const double theta = 0.3;
    Tensor<double> lats({H});
    for (int64_t i = 0; i < H; ++i) lats[i] = 80.0 - 32.0 * static_cast<double>(i);
    const auto weights = latitude_weights(lats);
    const auto g = loss_grads(pred, truth, log_var, theta, weights);

    const double eps = 1e-6;
    auto rel = [](double an, double fd) {
        return std::abs(an - fd) / std::max(1.0, std::abs(fd));
    };
    double worst = rel(g.dtheta, (loss_total(pred, truth, log_var, theta + eps, weights) -
                                  loss_total(pred, truth, log_var, theta - eps, weights)) /
                                     (2 * eps));
    for (int64_t v = 0; v < V; ++v) {
        Tensor<double> lp = log_var, lm = log_var;
        lp[v] += eps;
        lm[v] -= eps;
        const double fd = (loss_total(pred, truth, lp, theta, weights) -
                           loss_total(pred, truth, lm, theta, weights)) /
                          (2 * eps);
        worst = std::max(worst, rel(g.dlog_var[v], fd));
    }
    Rng rng(seed + 4);
    for (int k = 0; k < 24; ++k) {
        const int64_t i = rng.uniform_int(0, pred.numel() - 1);
        Tensor<double> pp = pred, pm = pred;
        pp[i] += eps;
        pm[i] -= eps;
        const double fd = (loss_total(pp, truth, log_var, theta, weights) -
                           loss_total(pm, truth, log_var, theta, weights)) /
                          (2 * eps);
        worst = std::max(worst, rel(g.dpred[i], fd));
    }
    return worst;
}

// Worst relative FD error of the fused backward kernels (weight branches and
// input) against the fused forward on one small random instance.
double multiconv_fd_worst(uint64_t seed) {
    using namespace emkit;
    const int64_t B = 2, CI = 2, CO = 2, H = 6, W = 7;
    const auto x = seeded_tensor<double>({B, CI, H, W}, seed + 1, Dist::Normal);
    const auto go = seeded_tensor<double>({B, CO, H, W}, seed + 2, Dist::Normal);
    auto set = seeded_kernel_set<double>(CO, CI, seed + 3);
    const auto g = multi_scale_backward(x, set, go, MultiScaleMode::Fused);

    auto weighted_out = [&](const ConvKernelSet<double>& s, const Tensor<double>& xin) {
        const auto y = multi_scale_forward(xin, s, MultiScaleMode::Fused);
        double acc = 0;
        for (int64_t i = 0; i < y.numel(); ++i) acc += y[i] * go[i];
        return acc;
    };

    double worst = 0;
    auto check_kernel = [&](Tensor<double> ConvKernelSet<double>::*member,
                            const Tensor<double>& grad) {
        worst = std::max(worst, grad_check(
                                    [&](const Tensor<double>& k) {
                                        ConvKernelSet<double> s = set;
                                        s.*member = k;
                                        return weighted_out(s, x);
                                    },
                                    [&](const Tensor<double>&) { return grad; }, set.*member,
                                    1e-5));
    };
    check_kernel(&ConvKernelSet<double>::k1, g.k1);
    check_kernel(&ConvKernelSet<double>::k3, g.k3);
    check_kernel(&ConvKernelSet<double>::k5, g.k5);
    worst = std::max(worst, grad_check([&](const Tensor<double>& xin) {
                                           return weighted_out(set, xin);
                                       },
                                       [&](const Tensor<double>&) { return g.input; }, x, 1e-5));
    return worst;
}

// Worst relative FD error of a tape-built scalar loss through a tiny model,
// checked on a few representative parameters.
double model_fd_worst(uint64_t seed) {
    using namespace emkit;
    ModelConfig mc;
    mc.variables = 1;
    mc.height = 4;
    mc.width = 8;
    mc.patch = 1;
    mc.channels = 4;
    mc.heads = 2;
    mc.depth = 0;
    mc.processor_blocks = 2;
    mc.mlp_ratio = 1;
    mc.seed = seed;
    EmformerModel<double> model(mc);
    const auto x = seeded_tensor<double>({1, 1, 4, 8}, seed + 9, Dist::Normal);
    const auto target = seeded_tensor<double>({1, 1, 4, 8}, seed + 10, Dist::Normal);

    auto scalar_loss = [&](EmformerModel<double>& m) {
        Tape<double> tape;
        auto bp = m.bind(tape, false);
        const auto pred = tape.value(m.forward(bp, tape.constant(x)));
        double acc = 0;
        for (int64_t i = 0; i < pred.numel(); ++i) {
            const double d = pred[i] - target[i];
            acc += d * d;
        }
        return acc / static_cast<double>(pred.numel());
    };

    double worst = 0;
    for (const std::string name : {"embed.w", "block0.k3", "head.w"}) {
        const Tensor<double> saved = model.param(name);
        const auto value_fn = [&](const Tensor<double>& p) {
            model.param(name) = p;
            const double v = scalar_loss(model);
            model.param(name) = saved;
            return v;
        };
        const auto grad_fn = [&](const Tensor<double>& p) {
            model.param(name) = p;
            Tape<double> tape;
            auto bp = model.bind(tape, true);
            const auto pred_var = model.forward(bp, tape.constant(x));
            const auto pred = tape.value(pred_var);
            Tensor<double> dpred(pred.shape());
            for (int64_t i = 0; i < pred.numel(); ++i)
                dpred[i] = 2.0 * (pred[i] - target[i]) / static_cast<double>(pred.numel());
            tape.backward(pred_var, dpred);
            Tensor<double> g = tape.grad(bp[name]);
            model.param(name) = saved;
            return g;
        };
        worst = std::max(worst, grad_check(value_fn, grad_fn, saved, 1e-5));
    }
    return worst;
}

std::vector<double> parse_schedule(const std::string& text, int64_t steps) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    const std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (kind == "const") {
        if (args.empty()) throw emkit::ValueError("error-schedule const needs const:E");
        return emkit::const_schedule(std::stod(args), steps);
    }
    if (kind == "geometric") {
        const auto comma = args.find(',');
        if (comma == std::string::npos)
            throw emkit::ValueError("error-schedule geometric needs geometric:E0,ratio");
        return emkit::geometric_schedule(std::stod(args.substr(0, comma)),
                                         std::stod(args.substr(comma + 1)), steps);
    }
    throw emkit::ValueError("unknown error schedule '" + text + "' (const:E | geometric:E0,r)");
}

std::vector<emkit::ReportRow> read_rows_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw emkit::io::IoError("cannot open " + path);
    std::vector<emkit::ReportRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("strategy,", 0) == 0) continue;
        }
        std::vector<std::string> cells;
        size_t pos = 0;
        while (cells.size() < 4) {
            const auto comma = line.find(',', pos);
            cells.push_back(line.substr(pos, comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cells.size() != 4)
            throw emkit::io::IoError(path + ": expected strategy,lead,rmse,acc rows");
        emkit::ReportRow r;
        r.strategy = cells[0];
        r.lead = std::stoll(cells[1]);
        if (cells[2] != "-") r.rmse = std::stod(cells[2]);
        if (cells[3] != "-") r.acc = std::stod(cells[3]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace emkit;
    CLI::App app{"emkit: fused multi-scale attention forecasting kit"};
    app.require_subcommand(1);
    app.fallthrough();  // lets --config appear after the subcommand name
    int rc = 0;

    json cfg;
    try {
        cfg = prescan_config(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::string config_path;
    app.add_option("--config,-c", config_path, "JSON config file; flags override its values");

    // ---- gen-data ----------------------------------------------------------
    auto sys = system_from_json(cfg.value("system", json::object()));
    int64_t gen_steps = cfg.value("steps", int64_t{64});
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--out", gen_out, "output dataset directory")->required();
    gen->add_option("--height", sys.height, "grid rows");
    gen->add_option("--width", sys.width, "grid columns");
    gen->add_option("--steps", gen_steps, "trajectory length (>= 2)");
    gen->add_option("--velocity", sys.velocity, "zonal drift, cells/step");
    gen->add_option("--diffusion", sys.diffusion, "smoothing coefficient in [0, 0.25]");
    gen->add_option("--amplitudes", sys.amplitudes, "per-variable scales")->delimiter(',');
    gen->add_option("--seed", sys.seed, "system seed");
    gen->callback([&] {
        const auto ds = generate_dataset<double>(sys, gen_steps);
        write_dataset(gen_out, ds);
        json c = to_json(sys);
        c["steps"] = gen_steps;
        write_run_manifest(gen_out, "gen-data", c, {sys.seed});
        std::printf("wrote %lld steps of %lld variables to %s\n",
                    static_cast<long long>(ds.size()),
                    static_cast<long long>(ds.variables()), gen_out.c_str());
    });

    // ---- train -------------------------------------------------------------
    auto mc = model_config_from_json(cfg.value("model", json::object()));
    auto tc = train_config_from_json(cfg.value("train", json::object()));
    std::string train_data, train_out;
    bool no_conv = false;
    auto* train = app.add_subcommand("train", "single-step pretraining");
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--patch", mc.patch, "patch size");
    train->add_option("--channels", mc.channels, "embedding channels");
    train->add_option("--heads", mc.heads, "attention heads");
    train->add_option("--depth", mc.depth, "pruning/recovering levels");
    train->add_option("--blocks", mc.processor_blocks, "processor blocks");
    train->add_option("--mlp-ratio", mc.mlp_ratio, "MLP expansion factor");
    train->add_flag("--no-conv", no_conv, "disable the multi-scale convolution");
    train->add_option("--model-seed", mc.seed, "parameter init seed");
    train->add_option("--epochs", tc.epochs, "training epochs");
    train->add_option("--batch", tc.batch, "batch size");
    train->add_option("--lr", tc.lr, "peak learning rate");
    train->add_option("--loss-lr", tc.loss_lr, "step size for theta and log-variances");
    train->add_option("--weight-decay", tc.weight_decay, "decoupled weight decay");
    train->add_option("--holdout", tc.holdout, "trailing holdout fraction");
    train->add_option("--theta0", tc.theta0, "initial blend angle");
    train->add_option("--seed", tc.seed, "shuffling seed");
    train->callback([&] {
        const auto ds = read_dataset<double>(train_data);
        mc.variables = ds.variables();
        mc.height = ds.snaps.front().data.dim(1);
        mc.width = ds.snaps.front().data.dim(2);
        mc.conv_enabled = !no_conv;
        EmformerModel<double> model(mc);
        const auto res = pretrain(model, ds, tc);
        write_train_outputs(train_out, model, res);
        write_run_manifest(train_out, "train",
                           json{{"model", to_json(mc)}, {"train", to_json(tc)},
                                {"data", train_data}},
                           {mc.seed, tc.seed});
        std::printf("holdout one-step RMSE %.6g -> %.6g over %lld epochs\n",
                    res.holdout_rmse_before, res.holdout_rmse_after,
                    static_cast<long long>(tc.epochs));
    });

    // ---- finetune ----------------------------------------------------------
    auto fc = finetune_defaults();
    if (cfg.contains("finetune")) {
        json merged = to_json(fc);
        merged.update(cfg.at("finetune"));
        fc = train_config_from_json(merged);
    }
    std::string ft_data, ft_model, ft_out, ft_strategy;
    auto* ft = app.add_subcommand("finetune", "multi-step rollout finetuning");
    ft->add_option("--data", ft_data, "dataset directory")->required();
    ft->add_option("--model", ft_model, "pretrained run directory (or checkpoint)")->required();
    ft->add_option("--out", ft_out, "output directory")->required();
    ft->add_option("--strategy", ft_strategy, "none | plain | accumulative");
    ft->add_option("--steps", fc.finetune_steps, "unroll length K (>= 2)");
    ft->add_option("--epochs", fc.epochs, "finetune epochs");
    ft->add_option("--lr", fc.lr, "peak learning rate");
    ft->add_option("--loss-lr", fc.loss_lr, "step size for theta and log-variances");
    ft->add_option("--n-max", fc.cache_policy.n_max, "cache length in steps");
    ft->add_option("--lambda", fc.cache_policy.lambda, "importance decay");
    ft->add_flag("--detach-cache", fc.detach_cache, "cut gradients at cached K/V");
    ft->add_option("--theta0", fc.theta0, "blend angle if no result.json is found");
    ft->add_option("--seed", fc.seed, "sequence sampling seed");
    ft->callback([&] {
        if (!ft_strategy.empty()) fc.strategy = strategy_from_string(ft_strategy);
        const auto ds = read_dataset<double>(ft_data);
        auto model = EmformerModel<double>::load(resolve_checkpoint(ft_model));
        const auto st = load_loss_state(ft_model, ds.variables(), fc.theta0);
        const auto res = finetune(model, ds, fc, st.theta, &st.log_var);
        write_train_outputs(ft_out, model, res);
        write_run_manifest(ft_out, "finetune",
                           json{{"finetune", to_json(fc)}, {"data", ft_data},
                                {"model", ft_model}},
                           {fc.seed});
        std::printf("%s finetune done; peak cache %lld tokens\n",
                    to_string(fc.strategy).c_str(),
                    static_cast<long long>(res.max_cache_tokens));
    });

    // ---- rollout -----------------------------------------------------------
    std::string ro_data, ro_model, ro_out, ro_label = "model";
    int64_t ro_start = cfg.value("start", int64_t{0});
    int64_t ro_steps = cfg.value("rollout_steps", int64_t{10});
    bool ro_cache = false;
    CachePolicy ro_policy;
    auto* ro = app.add_subcommand("rollout", "autoregressive prediction with metrics");
    ro->add_option("--data", ro_data, "dataset directory")->required();
    ro->add_option("--model", ro_model, "run directory (or checkpoint)")->required();
    ro->add_option("--out", ro_out, "output directory")->required();
    ro->add_option("--start", ro_start, "initial snapshot index");
    ro->add_option("--steps", ro_steps, "rollout length");
    ro->add_flag("--with-cache", ro_cache, "thread the K/V cache through the rollout");
    ro->add_option("--n-max", ro_policy.n_max, "cache length when enabling the cache here");
    ro->add_option("--lambda", ro_policy.lambda, "importance decay for --with-cache");
    ro->add_option("--label", ro_label, "strategy label used in rows.csv");
    ro->callback([&] {
        const auto ds = read_dataset<double>(ro_data);
        auto model = EmformerModel<double>::load(resolve_checkpoint(ro_model));
        if (ro_cache && !model.config().use_cache) model.set_cache(true, ro_policy);
        const auto res = rollout(model, ds, ro_start, ro_steps, ro_cache);

        fs::create_directories(ro_out);
        std::vector<ReportRow> rows;
        std::string detail = "lead,variable,rmse,nrmse,acc\n";
        for (int64_t k = 0; k < ro_steps; ++k) {
            const auto& step_rows = res.rows[static_cast<size_t>(k)];
            double acc = 0;
            for (const auto& r : step_rows) {
                detail += std::to_string(k + 1) + "," + r.name + "," + fmt(r.rmse) + "," +
                          fmt(r.nrmse) + "," + fmt(r.acc) + "\n";
                acc += r.acc;
            }
            rows.push_back({ro_label, k + 1, res.rmse[static_cast<size_t>(k)],
                            acc / static_cast<double>(step_rows.size())});
        }
        write_text(ro_out + "/rows.csv", report_csv(rows));
        write_text(ro_out + "/metrics.csv", detail);
        Dataset<double> pred{res.snaps, ds.names, ds.grid};
        write_dataset(ro_out + "/pred", pred);
        write_run_manifest(ro_out, "rollout",
                           json{{"data", ro_data}, {"model", ro_model}, {"start", ro_start},
                                {"steps", ro_steps}, {"with_cache", ro_cache},
                                {"label", ro_label}},
                           {});
        std::printf("%s", report_csv(rows).c_str());
        if (ro_cache)
            std::printf("peak cache %lld tokens\n",
                        static_cast<long long>(res.max_cache_tokens));
    });

    // ---- report ------------------------------------------------------------
    std::string rep_out, rep_persist;
    std::vector<std::string> rep_inputs;
    int64_t rep_start = 0, rep_steps = 10;
    auto* rep = app.add_subcommand("report", "merge rollout rows into CSV/markdown tables");
    rep->add_option("--out", rep_out, "output directory")->required();
    rep->add_option("--inputs", rep_inputs, "rows.csv files from rollout runs")
        ->required()
        ->expected(-1);
    rep->add_option("--persistence", rep_persist, "dataset dir for a persistence baseline");
    rep->add_option("--start", rep_start, "persistence start index");
    rep->add_option("--steps", rep_steps, "persistence lead steps");
    rep->callback([&] {
        std::vector<ReportRow> rows;
        for (const auto& p : rep_inputs) {
            auto part = read_rows_csv(p);
            rows.insert(rows.end(), part.begin(), part.end());
        }
        if (!rep_persist.empty()) {
            const auto ds = read_dataset<double>(rep_persist);
            const auto prmse = persistence_rmse(ds, rep_start, rep_steps);
            for (size_t k = 0; k < prmse.size(); ++k)
                rows.push_back({"persistence", static_cast<int64_t>(k + 1), prmse[k],
                                std::nullopt});
        }
        fs::create_directories(rep_out);
        write_text(rep_out + "/report.csv", report_csv(rows));
        write_text(rep_out + "/report.md", report_markdown(rows));
        write_run_manifest(rep_out, "report",
                           json{{"inputs", rep_inputs}, {"persistence", rep_persist}}, {});
        std::printf("%s", report_markdown(rows).c_str());
    });

    // ---- equiv -------------------------------------------------------------
    uint64_t eq_seed = 1;
    int eq_trials = 100;
    std::string eq_precision = "f64";
    auto* eq = app.add_subcommand("equiv", "fused vs plain equivalence sweep");
    eq->add_option("--seed", eq_seed, "sweep seed");
    eq->add_option("--trials", eq_trials, "random configurations");
    eq->add_option("--precision", eq_precision, "f32 | f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    eq->callback([&] {
        if (eq_precision == "f32")
            run_equiv<float>(eq_seed, eq_trials);
        else
            run_equiv<double>(eq_seed, eq_trials);
    });

    // ---- bench -------------------------------------------------------------
    int64_t bb = 8, bci = 64, bco = 64, bh = 56, bw = 56;
    int brep = 5, bworkers = 1;
    auto* bn = app.add_subcommand("bench", "fused vs plain wall-clock benchmark");
    bn->set_help_flag("--help", "print help");  // frees -h for the --h dimension flag
    bn->add_option("--b", bb, "batch");
    bn->add_option("--cin", bci, "input channels");
    bn->add_option("--cout", bco, "output channels");
    bn->add_option("--h", bh, "height");
    bn->add_option("--w", bw, "width");
    bn->add_option("--repeats", brep, "timed repetitions (median)");
    bn->add_option("--workers", bworkers, "threads per convolution");
    bn->callback([&] {
        const auto r =
            bench_multiconv<double>(bb, bci, bco, bh, bw, brep, 1, 1234, bworkers);
        std::ostringstream os;
        bench_csv_header(os);
        bench_csv_row(os, r);
        std::printf("%s", os.str().c_str());
    });

    // ---- grad-check --------------------------------------------------------
    uint64_t gc_seed = 1;
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient audit");
    gc->add_option("--seed", gc_seed, "instance seed");
    gc->callback([&] {
        struct Group {
            const char* name;
            double worst, tol;
        };
        const Group groups[] = {
            {"loss closed forms", loss_fd_worst(gc_seed), 1e-6},
            {"multiconv backward", multiconv_fd_worst(gc_seed), 1e-4},
            {"model end-to-end", model_fd_worst(gc_seed), 1e-3},
        };
        for (const auto& g : groups) {
            const bool ok = g.worst <= g.tol;
            std::printf("%-20s max_rel_err=%.3e tol=%.0e %s\n", g.name, g.worst, g.tol,
                        ok ? "PASS" : "FAIL");
            if (!ok) rc = 1;
        }
    });

    // ---- loss-dynamics -----------------------------------------------------
    double ld_eta = 0.05, ld_theta0 = 0.0, ld_w0 = 0.0;
    int64_t ld_steps = 10000;
    std::string ld_schedule = "const:1.0", ld_orient = "standard", ld_out;
    DynamicsOptions ld_opts;
    auto* ld = app.add_subcommand("loss-dynamics", "scalar blend-dynamics trajectory CSV");
    ld->add_option("--eta", ld_eta, "gradient step size");
    ld->add_option("--steps", ld_steps, "simulation steps");
    ld->add_option("--error-schedule", ld_schedule, "const:E or geometric:E0,r");
    ld->add_option("--theta0", ld_theta0, "initial blend angle");
    ld->add_option("--w0", ld_w0, "initial log-variance");
    ld->add_option("--lat-scale", ld_opts.lat_scale, "weighted branch scale (A = scale * E)");
    ld->add_option("--orientation", ld_orient, "standard | swapped")
        ->check(CLI::IsMember({"standard", "swapped"}));
    ld->add_flag("--beta-scaled-w", ld_opts.beta_scaled_w,
                 "use the blended (beta-scaled) log-variance step");
    ld->add_option("--out", ld_out, "CSV file (default stdout)");
    ld->callback([&] {
        ld_opts.orientation = ld_orient == "swapped" ? BlendOrientation::Swapped
                                                     : BlendOrientation::Standard;
        const auto sched = parse_schedule(ld_schedule, ld_steps);
        const auto tr = dynamics_sim(sched, ld_eta, ld_theta0, ld_w0, ld_opts);
        std::string csv = "step,theta,alpha,beta,A,B,w_mean\n";
        for (size_t k = 0; k < tr.theta.size(); ++k)
            csv += std::to_string(k) + "," + fmt(tr.theta[k]) + "," + fmt(tr.alpha[k]) + "," +
                   fmt(tr.beta[k]) + "," + fmt(tr.a[k]) + "," + fmt(tr.b[k]) + "," +
                   fmt(tr.w[k]) + "\n";
        if (ld_out.empty()) {
            std::printf("%s", csv.c_str());
        } else {
            write_text(ld_out, csv);
            write_run_manifest(fs::path(ld_out).parent_path().string().empty()
                                   ? "."
                                   : fs::path(ld_out).parent_path().string(),
                               "loss-dynamics",
                               json{{"eta", ld_eta}, {"steps", ld_steps},
                                    {"error_schedule", ld_schedule}, {"theta0", ld_theta0},
                                    {"w0", ld_w0}, {"lat_scale", ld_opts.lat_scale},
                                    {"orientation", ld_orient},
                                    {"beta_scaled_w", ld_opts.beta_scaled_w}},
                               {});
        }
    });

    // ---- metrics -----------------------------------------------------------
    std::string mt_pred, mt_truth, mt_stats, mt_out;
    int64_t mt_offset = 0;
    auto* mt = app.add_subcommand("metrics", "latitude-weighted RMSE/NRMSE/ACC tables");
    mt->add_option("--pred", mt_pred, "prediction dataset directory")->required();
    mt->add_option("--truth", mt_truth, "ground-truth dataset directory")->required();
    mt->add_option("--stats", mt_stats, "JSON {names, mu, sigma} overriding truth stats");
    mt->add_option("--truth-offset", mt_offset,
                   "truth index of the first prediction (rollout start + 1)");
    mt->add_option("--out", mt_out, "CSV file (default stdout)");
    mt->callback([&] {
        const auto pred = read_dataset<double>(mt_pred);
        const auto truth = read_dataset<double>(mt_truth);
        EvalGrid<double> grid = *truth.grid;
        if (!mt_stats.empty()) {
            const json s = io::read_json(mt_stats);
            grid.stats.names = s.at("names").get<std::vector<std::string>>();
            grid.stats.mu = s.at("mu").get<std::vector<double>>();
            grid.stats.sigma = s.at("sigma").get<std::vector<double>>();
        }
        std::string csv = "lead,variable,rmse,nrmse,acc\n";
        for (int64_t k = 0; k < pred.size(); ++k) {
            if (mt_offset + k >= truth.size())
                throw ValueError("metrics: prediction step " + std::to_string(k) +
                                 " has no truth at offset " + std::to_string(mt_offset));
            const auto rows =
                evaluate(pred.snaps[static_cast<size_t>(k)].data,
                         truth.snaps[static_cast<size_t>(mt_offset + k)].data, grid);
            for (const auto& r : rows)
                csv += std::to_string(k + 1) + "," + r.name + "," + fmt(r.rmse) + "," +
                       fmt(r.nrmse) + "," + fmt(r.acc) + "\n";
        }
        if (mt_out.empty())
            std::printf("%s", csv.c_str());
        else
            write_text(mt_out, csv);
    });

    // ---- track -------------------------------------------------------------
    std::string tk_fields, tk_out, tk_msl, tk_u, tk_v;
    double tk_lat = 0, tk_lon = 0;
    TrackerConfig tk_cfg;
    auto* tk = app.add_subcommand("track", "minimum-pressure cyclone tracking");
    tk->add_option("--fields", tk_fields, "dataset directory")->required();
    tk->add_option("--init-lat", tk_lat, "first-guess latitude, degrees")->required();
    tk->add_option("--init-lon", tk_lon, "first-guess longitude, degrees")->required();
    tk->add_option("--radius-km", tk_cfg.radius_km, "search disk radius");
    tk->add_option("--pmax", tk_cfg.p_max, "pressure ceiling, Pa");
    tk->add_option("--wmin", tk_cfg.wind_min, "wind floor, m/s");
    tk->add_option("--dmax", tk_cfg.disp_max_km, "step displacement ceiling, km");
    tk->add_option("--msl", tk_msl, "pressure variable name (default: first variable)");
    tk->add_option("--u", tk_u, "eastward wind variable name (default: second)");
    tk->add_option("--v", tk_v, "northward wind variable name (default: third)");
    tk->add_option("--out", tk_out, "CSV file (default stdout)");
    tk->callback([&] {
        const auto ds = read_dataset<double>(tk_fields);
        if (ds.variables() < 3)
            throw ValueError("track needs at least 3 variables (msl, u, v)");
        auto index_of = [&](const std::string& name, int64_t fallback) {
            if (name.empty()) return fallback;
            for (int64_t i = 0; i < ds.variables(); ++i)
                if (ds.names[static_cast<size_t>(i)] == name) return i;
            throw ValueError("track: no variable named '" + name + "'");
        };
        const int64_t im = index_of(tk_msl, 0), iu = index_of(tk_u, 1), iv = index_of(tk_v, 2);
        std::vector<SurfaceFields<double>> fields;
        for (const auto& s : ds.snaps)
            fields.push_back({slice_var(s.data, im), slice_var(s.data, iu),
                              slice_var(s.data, iv)});
        const auto track = track_cyclone(fields, tk_lat, tk_lon, *ds.grid, tk_cfg);
        std::string csv = "step,lat,lon,msl,wind,displacement_km\n";
        for (const auto& f : track)
            csv += std::to_string(f.t) + "," + fmt(f.lat) + "," + fmt(f.lon) + "," +
                   fmt(f.msl) + "," + fmt(f.wind) + "," + fmt(f.displacement_km) + "\n";
        if (tk_out.empty())
            std::printf("%s", csv.c_str());
        else
            write_text(tk_out, csv);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return rc;
}
