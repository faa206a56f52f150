// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode tape over Tensor<T>. Differentiable ops: add, mul,
// scale, matmul (rank-2 or batched rank-3, transpose flags), softmax over the
// last axis, layer-norm, GELU, mean, linear projection, and the multi-scale
// convolution with its branch-distinct custom backward. Three structural ops
// (reshape, row index-select, row concat) are exact 0/1 linear maps whose
// adjoints are reshape, scatter-add, and split; they carry no arithmetic.
//
// Usage: record a forward pass, call backward(seed, dL/dseed) once, read
// gradients off the leaves. Nodes are append-only and identified by index.

#pragma once

#include "emkit/multiconv.hpp"
#include "emkit/tensor.hpp"

namespace emkit {

struct TapeError : std::logic_error {
    using std::logic_error::logic_error;
};

template <class T>
class Tape {
  public:
    using Var = int32_t;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Tensor<T> v, bool requires_grad = true) {
        Node n;
        n.op = Op::Leaf;
        n.value = std::move(v);
        n.needs = requires_grad;
        return push(std::move(n));
    }
    Var constant(Tensor<T> v) { return input(std::move(v), false); }

    Var add(Var a, Var b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (!va.same_shape(vb))
            throw ShapeError("tape add: shapes " + shape_str(va.shape()) + " vs " +
                             shape_str(vb.shape()));
        Node n = binary(Op::Add, a, b);
        n.value = va + vb;
        return push(std::move(n));
    }

    Var mul(Var a, Var b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (!va.same_shape(vb))
            throw ShapeError("tape mul: shapes " + shape_str(va.shape()) + " vs " +
                             shape_str(vb.shape()));
        Node n = binary(Op::Mul, a, b);
        n.value = va;
        for (int64_t i = 0; i < n.value.numel(); ++i) n.value[i] *= vb[i];
        return push(std::move(n));
    }

    Var scale(Var a, T c) {
        Node n = unary(Op::Scale, a);
        n.scalar = c;
        n.value = val(a) * c;
        return push(std::move(n));
    }

    // Rank-2 [m,k]x[k,n] or batched rank-3 [G,m,k]x[G,k,n]; flags transpose
    // the trailing two axes of the corresponding operand.
    Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (va.rank() != vb.rank() || (va.rank() != 2 && va.rank() != 3))
            throw ShapeError("tape matmul: ranks must both be 2 or 3, got " +
                             shape_str(va.shape()) + " x " + shape_str(vb.shape()));
        const int64_t G = va.rank() == 3 ? va.dim(0) : 1;
        if (va.rank() == 3 && vb.dim(0) != G)
            throw ShapeError("tape matmul: batch dims disagree, " + shape_str(va.shape()) +
                             " x " + shape_str(vb.shape()));
        const int64_t am = va.dim(-2), ak = va.dim(-1);
        const int64_t bk = vb.dim(-2), bn = vb.dim(-1);
        const int64_t m = ta ? ak : am, k = ta ? am : ak;
        const int64_t kb = tb ? bn : bk, nn = tb ? bk : bn;
        if (k != kb)
            throw ShapeError("tape matmul: inner dims disagree, " + shape_str(va.shape()) +
                             (ta ? "^T" : "") + " x " + shape_str(vb.shape()) + (tb ? "^T" : ""));
        Node n = binary(Op::Matmul, a, b);
        n.ta = ta;
        n.tb = tb;
        n.value = va.rank() == 3 ? Tensor<T>({G, m, nn}) : Tensor<T>({m, nn});
        for (int64_t g = 0; g < G; ++g)
            gemm_acc(n.value.data() + g * m * nn, va.data() + g * am * ak,
                     vb.data() + g * bk * bn, m, nn, k, ta, tb, am, ak, bk, bn);
        return push(std::move(n));
    }

    Var softmax(Var a) {
        Node n = unary(Op::Softmax, a);
        n.value = softmax_rows(val(a));
        return push(std::move(n));
    }

    // Normalizes the last axis; gamma/beta are rank-1 of that length.
    Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
        const auto& vx = val(x);
        const int64_t C = vx.dim(-1);
        if (val(gamma).shape() != Shape{C} || val(beta).shape() != Shape{C})
            throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(C) + "], got " +
                             shape_str(val(gamma).shape()) + " and " +
                             shape_str(val(beta).shape()));
        Node n;
        n.op = Op::LayerNorm;
        n.a = check(x);
        n.b = check(gamma);
        n.c = check(beta);
        n.needs = needs(x) || needs(gamma) || needs(beta);
        n.scalar = eps;
        n.value = Tensor<T>(vx.shape());
        const int64_t rows = vx.numel() / C;
        const T* g = val(gamma).data();
        const T* be = val(beta).data();
        for (int64_t r = 0; r < rows; ++r) {
            const T* in = vx.data() + r * C;
            T* out = n.value.data() + r * C;
            auto [mu, inv] = ln_stats(in, C, eps);
            for (int64_t j = 0; j < C; ++j) out[j] = (in[j] - mu) * inv * g[j] + be[j];
        }
        return push(std::move(n));
    }

    Var gelu(Var a) {
        Node n = unary(Op::Gelu, a);
        n.value = val(a);
        for (int64_t i = 0; i < n.value.numel(); ++i) {
            const double x = static_cast<double>(n.value[i]);
            n.value[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)));
        }
        return push(std::move(n));
    }

    Var mean_all(Var a) {
        Node n = unary(Op::MeanAll, a);
        T acc = T(0);
        const auto& va = val(a);
        for (int64_t i = 0; i < va.numel(); ++i) acc += va[i];
        n.value = Tensor<T>({1}, {acc / static_cast<T>(va.numel())});
        return push(std::move(n));
    }

    // x[N,in] * w[in,out] + b[out]; pass b = kNone for a bias-free projection.
    static constexpr Var kNone = -1;
    Var linear(Var x, Var w, Var b = kNone) {
        const auto& vx = val(x);
        const auto& vw = val(w);
        if (vx.rank() != 2 || vw.rank() != 2 || vx.dim(1) != vw.dim(0))
            throw ShapeError("linear: want [N,in]x[in,out], got " + shape_str(vx.shape()) +
                             " x " + shape_str(vw.shape()));
        if (b != kNone && val(b).shape() != Shape{vw.dim(1)})
            throw ShapeError("linear: bias must be [" + std::to_string(vw.dim(1)) + "], got " +
                             shape_str(val(b).shape()));
        Node n;
        n.op = Op::LinearOp;
        n.a = check(x);
        n.b = check(w);
        n.c = b == kNone ? kNone : check(b);
        n.needs = needs(x) || needs(w) || (b != kNone && needs(b));
        const int64_t N = vx.dim(0), in = vx.dim(1), out = vw.dim(1);
        n.value = Tensor<T>({N, out});
        gemm_acc(n.value.data(), vx.data(), vw.data(), N, out, in, false, false, N, in, in, out);
        if (b != kNone) {
            const T* bp = val(b).data();
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < out; ++j) n.value[i * out + j] += bp[j];
        }
        return push(std::move(n));
    }

    // tokens [B*T, C] viewed as B grids of h x w; fused multi-scale conv with
    // branch-distinct kernel gradients.
    Var multiconv(Var tokens, Var k1, Var k3, Var k5, int64_t batch, int64_t h, int64_t w,
                  int workers = 1) {
        const auto& vt = val(tokens);
        if (vt.rank() != 2 || vt.dim(0) != batch * h * w)
            throw ShapeError("multiconv: tokens " + shape_str(vt.shape()) + " do not cover batch " +
                             std::to_string(batch) + " of " + std::to_string(h) + "x" +
                             std::to_string(w));
        auto set = make_kernel_set(val(k1), val(k3), val(k5));
        const int64_t C = vt.dim(1);
        if (set.in_channels() != C || set.out_channels() != C)
            throw ShapeError("multiconv: kernel channels " + std::to_string(set.in_channels()) +
                             " must equal token channels " + std::to_string(C));
        Node n;
        n.op = Op::MultiConv;
        n.a = check(tokens);
        n.b = check(k1);
        n.c = check(k3);
        n.d = check(k5);
        n.needs = needs(tokens) || needs(k1) || needs(k3) || needs(k5);
        n.conv_b = batch;
        n.conv_h = h;
        n.conv_w = w;
        n.workers = workers;
        n.value = nchw_to_tokens(
            multi_scale_forward(tokens_to_nchw(vt, batch, h, w), set, MultiScaleMode::Fused,
                                nullptr, workers),
            C);
        return push(std::move(n));
    }

    // out[i, :] = in[idx[i], :] on the leading axis; adjoint scatter-adds.
    Var index_rows(Var a, std::vector<int64_t> idx) {
        const auto& va = val(a);
        if (va.rank() < 1) throw ShapeError("index_rows: rank-0 input");
        const int64_t rows = va.dim(0);
        for (int64_t i : idx)
            if (i < 0 || i >= rows)
                throw ShapeError("index_rows: index " + std::to_string(i) +
                                 " out of range for leading dim " + std::to_string(rows));
        Node n = unary(Op::IndexRows, a);
        Shape os = va.shape();
        os[0] = static_cast<int64_t>(idx.size());
        const int64_t rs = va.numel() / std::max<int64_t>(rows, 1);
        n.value = Tensor<T>(os);
        for (size_t i = 0; i < idx.size(); ++i)
            std::copy_n(va.data() + idx[i] * rs, rs, n.value.data() + static_cast<int64_t>(i) * rs);
        n.idx = std::move(idx);
        return push(std::move(n));
    }

    Var concat_rows(Var a, Var b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (va.rank() != vb.rank() || va.rank() < 1)
            throw ShapeError("concat_rows: ranks disagree, " + shape_str(va.shape()) + " vs " +
                             shape_str(vb.shape()));
        Shape os = va.shape();
        for (int i = 1; i < va.rank(); ++i)
            if (va.dim(i) != vb.dim(i))
                throw ShapeError("concat_rows: trailing dims disagree, " + shape_str(va.shape()) +
                                 " vs " + shape_str(vb.shape()));
        os[0] += vb.dim(0);
        Node n = binary(Op::ConcatRows, a, b);
        n.value = Tensor<T>(os);
        std::copy_n(va.data(), va.numel(), n.value.data());
        std::copy_n(vb.data(), vb.numel(), n.value.data() + va.numel());
        return push(std::move(n));
    }

    Var reshape(Var a, Shape s) {
        Node n = unary(Op::ReshapeOp, a);
        n.value = val(a).reshaped(std::move(s));
        return push(std::move(n));
    }

    // Columns [c0, c0+len) of a rank-2 value; the adjoint zero-pads the
    // complement, so slicing is an exact linear map like index_rows.
    Var slice_cols(Var a, int64_t c0, int64_t len) {
        const auto& va = val(a);
        if (va.rank() != 2 || c0 < 0 || len <= 0 || c0 + len > va.dim(1))
            throw ShapeError("slice_cols: columns [" + std::to_string(c0) + "," +
                             std::to_string(c0 + len) + ") invalid for " +
                             shape_str(va.shape()));
        Node n = unary(Op::SliceCols, a);
        n.col0 = c0;
        const int64_t rows = va.dim(0), cols = va.dim(1);
        n.value = Tensor<T>({rows, len});
        for (int64_t i = 0; i < rows; ++i)
            std::copy_n(va.data() + i * cols + c0, len, n.value.data() + i * len);
        return push(std::move(n));
    }

    Var concat_cols(Var a, Var b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.dim(0) != vb.dim(0))
            throw ShapeError("concat_cols: want [N,Ca] with [N,Cb], got " +
                             shape_str(va.shape()) + " vs " + shape_str(vb.shape()));
        const int64_t rows = va.dim(0), ca = va.dim(1), cb = vb.dim(1);
        Node n = binary(Op::ConcatCols, a, b);
        n.value = Tensor<T>({rows, ca + cb});
        for (int64_t i = 0; i < rows; ++i) {
            std::copy_n(va.data() + i * ca, ca, n.value.data() + i * (ca + cb));
            std::copy_n(vb.data() + i * cb, cb, n.value.data() + i * (ca + cb) + ca);
        }
        return push(std::move(n));
    }

    // `times` stacked copies along the leading axis; the adjoint sums the
    // per-copy gradients, which makes broadcast-add over a batch exact.
    Var repeat_rows(Var a, int64_t times) {
        const auto& va = val(a);
        if (va.rank() < 1 || times <= 0)
            throw ShapeError("repeat_rows: need rank >= 1 and positive count");
        Node n = unary(Op::RepeatRows, a);
        Shape os = va.shape();
        os[0] *= times;
        n.value = Tensor<T>(os);
        for (int64_t r = 0; r < times; ++r)
            std::copy_n(va.data(), va.numel(), n.value.data() + r * va.numel());
        return push(std::move(n));
    }

    const Tensor<T>& value(Var v) const { return nodes_[static_cast<size_t>(check(v))].value; }

    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(check(v))].needs; }

    // Gradient of the last backward() seed w.r.t. v; zero if v never received one.
    Tensor<T> grad(Var v) const {
        const Node& n = nodes_[static_cast<size_t>(check(v))];
        return n.grad.numel() ? n.grad : Tensor<T>(n.value.shape());
    }

    size_t size() const { return nodes_.size(); }

    void backward(Var seed, Tensor<T> seed_grad) {
        check(seed);
        if (!seed_grad.same_shape(nodes_[static_cast<size_t>(seed)].value))
            throw ShapeError("backward: seed grad " + shape_str(seed_grad.shape()) +
                             " must match value " +
                             shape_str(nodes_[static_cast<size_t>(seed)].value.shape()));
        for (auto& n : nodes_) n.grad = Tensor<T>();
        accum(seed, std::move(seed_grad));
        for (Var id = seed; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs || n.grad.numel() == 0) continue;
            step_back(n);
        }
    }

  private:
    enum class Op : uint8_t {
        Leaf,
        Add,
        Mul,
        Scale,
        Matmul,
        Softmax,
        LayerNorm,
        Gelu,
        MeanAll,
        LinearOp,
        MultiConv,
        IndexRows,
        ConcatRows,
        ReshapeOp,
        SliceCols,
        ConcatCols,
        RepeatRows
    };

    struct Node {
        Op op = Op::Leaf;
        Var a = -1, b = -1, c = -1, d = -1;
        bool needs = false;
        bool ta = false, tb = false;
        T scalar = T(0);
        int64_t conv_b = 0, conv_h = 0, conv_w = 0;
        int64_t col0 = 0;
        int workers = 1;
        std::vector<int64_t> idx;
        Tensor<T> value;
        Tensor<T> grad;
    };

    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;

    std::vector<Node> nodes_;

    Var check(Var v) const {
        if (v < 0 || static_cast<size_t>(v) >= nodes_.size())
            throw TapeError("invalid tape var " + std::to_string(v));
        return v;
    }
    const Tensor<T>& val(Var v) const { return nodes_[static_cast<size_t>(check(v))].value; }
    bool needs(Var v) const { return nodes_[static_cast<size_t>(check(v))].needs; }

    Node unary(Op op, Var a) {
        Node n;
        n.op = op;
        n.a = check(a);
        n.needs = needs(a);
        return n;
    }
    Node binary(Op op, Var a, Var b) {
        Node n;
        n.op = op;
        n.a = check(a);
        n.b = check(b);
        n.needs = needs(a) || needs(b);
        return n;
    }
    Var push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<Var>(nodes_.size() - 1);
    }

    void accum(Var v, Tensor<T> g) {
        Node& n = nodes_[static_cast<size_t>(v)];
        if (!n.needs) return;
        if (n.grad.numel() == 0) n.grad = std::move(g);
        else n.grad += g;
    }
    Tensor<T>& grad_buf(Var v) {
        Node& n = nodes_[static_cast<size_t>(v)];
        if (n.grad.numel() == 0) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    static std::pair<T, T> ln_stats(const T* row, int64_t C, T eps) {
        T mu = T(0);
        for (int64_t j = 0; j < C; ++j) mu += row[j];
        mu /= static_cast<T>(C);
        T var = T(0);
        for (int64_t j = 0; j < C; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(C);
        return {mu, T(1) / std::sqrt(var + eps)};
    }

    // c[m,n] += op(a) * op(b); (ar,ac)/(br,bc) are the stored layouts.
    static void gemm_acc(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t k, bool ta,
                         bool tb, int64_t ar, int64_t ac, int64_t br, int64_t bc) {
        (void)ar;
        (void)br;
        if (!ta && !tb) {
            for (int64_t i = 0; i < m; ++i)
                for (int64_t l = 0; l < k; ++l) {
                    const T av = a[i * ac + l];
                    const T* brow = b + l * bc;
                    T* crow = c + i * n;
                    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
        } else if (!ta && tb) {
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    const T* arow = a + i * ac;
                    const T* brow = b + j * bc;
                    T acc = T(0);
                    for (int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
                    c[i * n + j] += acc;
                }
        } else if (ta && !tb) {
            for (int64_t l = 0; l < k; ++l)
                for (int64_t i = 0; i < m; ++i) {
                    const T av = a[l * ac + i];
                    const T* brow = b + l * bc;
                    T* crow = c + i * n;
                    for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
        } else {
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (int64_t l = 0; l < k; ++l) acc += a[l * ac + i] * b[j * bc + l];
                    c[i * n + j] += acc;
                }
        }
    }

    static Tensor<T> tokens_to_nchw(const Tensor<T>& tokens, int64_t B, int64_t h, int64_t w) {
        const int64_t C = tokens.dim(1), HW = h * w;
        Tensor<T> x({B, C, h, w});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < HW; ++t) {
                const T* row = tokens.data() + (b * HW + t) * C;
                for (int64_t c = 0; c < C; ++c) x[((b * C + c) * HW) + t] = row[c];
            }
        return x;
    }
    static Tensor<T> nchw_to_tokens(const Tensor<T>& x, int64_t C) {
        const int64_t B = x.dim(0), HW = x.dim(2) * x.dim(3);
        Tensor<T> tokens({B * HW, C});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t t = 0; t < HW; ++t) {
                T* row = tokens.data() + (b * HW + t) * C;
                for (int64_t c = 0; c < C; ++c) row[c] = x[(b * C + c) * HW + t];
            }
        return tokens;
    }

    void step_back(Node& n) {
        const Tensor<T>& gy = n.grad;
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add:
                accum(n.a, gy);
                accum(n.b, gy);
                break;
            case Op::Mul: {
                if (needs(n.a)) {
                    Tensor<T> g = gy;
                    const auto& vb = val(n.b);
                    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= vb[i];
                    accum(n.a, std::move(g));
                }
                if (needs(n.b)) {
                    Tensor<T> g = gy;
                    const auto& va = val(n.a);
                    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= va[i];
                    accum(n.b, std::move(g));
                }
                break;
            }
            case Op::Scale:
                accum(n.a, gy * n.scalar);
                break;
            case Op::Matmul: {
                const auto& va = val(n.a);
                const auto& vb = val(n.b);
                const int64_t G = va.rank() == 3 ? va.dim(0) : 1;
                const int64_t am = va.dim(-2), ak = va.dim(-1);
                const int64_t bk = vb.dim(-2), bn = vb.dim(-1);
                const int64_t m = n.value.dim(-2), nn = n.value.dim(-1);
                if (needs(n.a)) {
                    Tensor<T>& ga = grad_buf(n.a);
                    for (int64_t g = 0; g < G; ++g) {
                        T* gp = ga.data() + g * am * ak;
                        const T* yp = gy.data() + g * m * nn;
                        const T* bp = vb.data() + g * bk * bn;
                        if (!n.ta && !n.tb)       gemm_acc(gp, yp, bp, am, ak, nn, false, true, m, nn, bk, bn);
                        else if (!n.ta && n.tb)   gemm_acc(gp, yp, bp, am, ak, nn, false, false, m, nn, bk, bn);
                        else if (n.ta && !n.tb)   gemm_acc(gp, bp, yp, am, ak, nn, false, true, bk, bn, m, nn);
                        else                      gemm_acc(gp, bp, yp, am, ak, nn, true, true, bk, bn, m, nn);
                    }
                }
                if (needs(n.b)) {
                    Tensor<T>& gb = grad_buf(n.b);
                    for (int64_t g = 0; g < G; ++g) {
                        T* gp = gb.data() + g * bk * bn;
                        const T* yp = gy.data() + g * m * nn;
                        const T* ap = va.data() + g * am * ak;
                        if (!n.ta && !n.tb)       gemm_acc(gp, ap, yp, bk, bn, m, true, false, am, ak, m, nn);
                        else if (!n.ta && n.tb)   gemm_acc(gp, yp, ap, bk, bn, m, true, false, m, nn, am, ak);
                        else if (n.ta && !n.tb)   gemm_acc(gp, ap, yp, bk, bn, m, false, false, am, ak, m, nn);
                        else                      gemm_acc(gp, yp, ap, bk, bn, m, true, true, m, nn, am, ak);
                    }
                }
                break;
            }
            case Op::Softmax: {
                const auto& y = n.value;
                const int64_t C = y.dim(-1);
                const int64_t rows = y.numel() / C;
                Tensor<T> gx(y.shape());
                for (int64_t r = 0; r < rows; ++r) {
                    const T* yr = y.data() + r * C;
                    const T* dr = gy.data() + r * C;
                    T dot = T(0);
                    for (int64_t j = 0; j < C; ++j) dot += dr[j] * yr[j];
                    T* gr = gx.data() + r * C;
                    for (int64_t j = 0; j < C; ++j) gr[j] = yr[j] * (dr[j] - dot);
                }
                accum(n.a, std::move(gx));
                break;
            }
            case Op::LayerNorm: {
                const auto& vx = val(n.a);
                const auto& vg = val(n.b);
                const int64_t C = vx.dim(-1);
                const int64_t rows = vx.numel() / C;
                Tensor<T> gx(vx.shape());
                Tensor<T> gg({C});
                Tensor<T> gb({C});
                for (int64_t r = 0; r < rows; ++r) {
                    const T* x = vx.data() + r * C;
                    const T* dy = gy.data() + r * C;
                    auto [mu, inv] = ln_stats(x, C, n.scalar);
                    T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
                    for (int64_t j = 0; j < C; ++j) {
                        const T xhat = (x[j] - mu) * inv;
                        const T dxhat = dy[j] * vg[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                        gg[j] += dy[j] * xhat;
                        gb[j] += dy[j];
                    }
                    mean_dxhat /= static_cast<T>(C);
                    mean_dxhat_xhat /= static_cast<T>(C);
                    T* g = gx.data() + r * C;
                    for (int64_t j = 0; j < C; ++j) {
                        const T xhat = (x[j] - mu) * inv;
                        g[j] = inv * (dy[j] * vg[j] - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                accum(n.a, std::move(gx));
                accum(n.b, std::move(gg));
                accum(n.c, std::move(gb));
                break;
            }
            case Op::Gelu: {
                const auto& vx = val(n.a);
                Tensor<T> gx(vx.shape());
                for (int64_t i = 0; i < vx.numel(); ++i) {
                    const double x = static_cast<double>(vx[i]);
                    const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                    gx[i] = static_cast<T>(static_cast<double>(gy[i]) * (phi + x * pdf));
                }
                accum(n.a, std::move(gx));
                break;
            }
            case Op::MeanAll: {
                const auto& vx = val(n.a);
                Tensor<T> gx(vx.shape());
                const T d = gy[0] / static_cast<T>(vx.numel());
                for (int64_t i = 0; i < gx.numel(); ++i) gx[i] = d;
                accum(n.a, std::move(gx));
                break;
            }
            case Op::LinearOp: {
                const auto& vx = val(n.a);
                const auto& vw = val(n.b);
                const int64_t N = vx.dim(0), in = vx.dim(1), out = vw.dim(1);
                if (needs(n.a))
                    gemm_acc(grad_buf(n.a).data(), gy.data(), vw.data(), N, in, out, false, true,
                             N, out, in, out);
                if (needs(n.b))
                    gemm_acc(grad_buf(n.b).data(), vx.data(), gy.data(), in, out, N, true, false,
                             N, in, N, out);
                if (n.c != kNone && needs(n.c)) {
                    Tensor<T>& gb = grad_buf(n.c);
                    for (int64_t i = 0; i < N; ++i)
                        for (int64_t j = 0; j < out; ++j) gb[j] += gy[i * out + j];
                }
                break;
            }
            case Op::MultiConv: {
                auto set = make_kernel_set(val(n.b), val(n.c), val(n.d));
                const int64_t C = val(n.a).dim(1);
                auto g = multi_scale_backward(tokens_to_nchw(val(n.a), n.conv_b, n.conv_h, n.conv_w),
                                              set, tokens_to_nchw(gy, n.conv_b, n.conv_h, n.conv_w),
                                              MultiScaleMode::Fused, nullptr, n.workers);
                if (needs(n.a)) accum(n.a, nchw_to_tokens(g.input, C));
                if (needs(n.b)) accum(n.b, std::move(g.k1));
                if (needs(n.c)) accum(n.c, std::move(g.k3));
                if (needs(n.d)) accum(n.d, std::move(g.k5));
                break;
            }
            case Op::IndexRows: {
                const auto& vx = val(n.a);
                const int64_t rs = vx.numel() / vx.dim(0);
                Tensor<T>& gx = grad_buf(n.a);
                for (size_t i = 0; i < n.idx.size(); ++i) {
                    const T* src = gy.data() + static_cast<int64_t>(i) * rs;
                    T* dst = gx.data() + n.idx[i] * rs;
                    for (int64_t j = 0; j < rs; ++j) dst[j] += src[j];
                }
                break;
            }
            case Op::ConcatRows: {
                const auto& va = val(n.a);
                if (needs(n.a)) {
                    Tensor<T> ga(va.shape());
                    std::copy_n(gy.data(), va.numel(), ga.data());
                    accum(n.a, std::move(ga));
                }
                if (needs(n.b)) {
                    const auto& vb = val(n.b);
                    Tensor<T> gb(vb.shape());
                    std::copy_n(gy.data() + va.numel(), vb.numel(), gb.data());
                    accum(n.b, std::move(gb));
                }
                break;
            }
            case Op::ReshapeOp: {
                accum(n.a, gy.reshaped(val(n.a).shape()));
                break;
            }
            case Op::SliceCols: {
                const auto& va = val(n.a);
                const int64_t rows = va.dim(0), cols = va.dim(1), len = n.value.dim(1);
                Tensor<T>& gx = grad_buf(n.a);
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t j = 0; j < len; ++j)
                        gx.data()[i * cols + n.col0 + j] += gy.data()[i * len + j];
                break;
            }
            case Op::ConcatCols: {
                const int64_t rows = n.value.dim(0);
                const int64_t ca = val(n.a).dim(1), cb = val(n.b).dim(1);
                if (needs(n.a)) {
                    Tensor<T>& ga = grad_buf(n.a);
                    for (int64_t i = 0; i < rows; ++i)
                        for (int64_t j = 0; j < ca; ++j)
                            ga.data()[i * ca + j] += gy.data()[i * (ca + cb) + j];
                }
                if (needs(n.b)) {
                    Tensor<T>& gb = grad_buf(n.b);
                    for (int64_t i = 0; i < rows; ++i)
                        for (int64_t j = 0; j < cb; ++j)
                            gb.data()[i * cb + j] += gy.data()[i * (ca + cb) + ca + j];
                }
                break;
            }
            case Op::RepeatRows: {
                const auto& va = val(n.a);
                const int64_t times = n.value.dim(0) / va.dim(0);
                Tensor<T>& ga = grad_buf(n.a);
                for (int64_t r = 0; r < times; ++r)
                    for (int64_t i = 0; i < va.numel(); ++i)
                        ga.data()[i] += gy.data()[r * va.numel() + i];
                break;
            }
        }
    }
};

}  // namespace emkit
