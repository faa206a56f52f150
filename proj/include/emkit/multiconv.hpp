// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Multi-scale convolution with branch-distinct gradients. Three kernels
// (1x1, 3x3, 5x5, OIHW, stride 1, zero same-padding, no bias) act on the same
// input. The fused path folds them into one center-aligned 5x5 composite, so
// forward and input-gradient cost 25 MACs per output element instead of the
// plain path's 35 (= 1 + 9 + 25), while the weight gradient still comes out
// per branch: every composite tap's gradient is accumulated into each kernel
// whose support covers that tap.
//
// Determinism contract: a given (input, kernels, precision) produces identical
// bits for any worker count. Parallel loops only split work whose results are
// disjoint (output planes), and the batch reduction of weight gradients is the
// fixed sum partial[0] + partial[1] + ... regardless of who computed what.

#pragma once

#include <cstdint>
#include <thread>

#include "emkit/tensor.hpp"

namespace emkit {

// Multiply-accumulate tallies, one bucket per pass. Counting mode walks the
// dense padded loops so the tally is exactly B*H*W*Cout*Cin*r^2 per conv.
struct FlopCounter {
    uint64_t forward_macs = 0;
    uint64_t weight_grad_macs = 0;
    uint64_t input_grad_macs = 0;
    uint64_t total() const { return forward_macs + weight_grad_macs + input_grad_macs; }
};

enum class MultiScaleMode { Fused, Plain };

template <class T>
struct ConvKernelSet {
    Tensor<T> k1;  // [O,I,1,1]
    Tensor<T> k3;  // [O,I,3,3]
    Tensor<T> k5;  // [O,I,5,5]
    int64_t out_channels() const { return k5.dim(0); }
    int64_t in_channels() const { return k5.dim(1); }
};

namespace detail {

template <class T>
void check_kernel(const Tensor<T>& k, const char* name) {
    if (k.rank() != 4)
        throw ShapeError(std::string(name) + " must be rank-4 OIHW, got " + shape_str(k.shape()));
    if (k.dim(2) != k.dim(3))
        throw ShapeError(std::string(name) + " must be square, got " + shape_str(k.shape()));
    const int64_t r = k.dim(2);
    if (r != 1 && r != 3 && r != 5)
        throw ValueError(std::string(name) + " has kernel size " + std::to_string(r) +
                         "; supported sizes are {1,3,5}");
}

// Runs fn(i) for i in [0, n). Work items must be independent; the split is
// only a schedule and never changes results.
inline void parallel_for(int64_t n, int workers, const std::function<void(int64_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int w = static_cast<int>(std::min<int64_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(w));
    for (int t = 0; t < w; ++t) {
        pool.emplace_back([&, t] {
            for (int64_t i = t; i < n; i += w) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace detail

template <class T>
ConvKernelSet<T> make_kernel_set(Tensor<T> k1, Tensor<T> k3, Tensor<T> k5) {
    detail::check_kernel(k1, "k1");
    detail::check_kernel(k3, "k3");
    detail::check_kernel(k5, "k5");
    if (k1.dim(2) != 1 || k3.dim(2) != 3 || k5.dim(2) != 5)
        throw ValueError("kernel set must hold sizes (1,3,5), got (" + std::to_string(k1.dim(2)) +
                         "," + std::to_string(k3.dim(2)) + "," + std::to_string(k5.dim(2)) + ")");
    if (k1.dim(0) != k3.dim(0) || k1.dim(0) != k5.dim(0) || k1.dim(1) != k3.dim(1) ||
        k1.dim(1) != k5.dim(1))
        throw ShapeError("kernel channel counts disagree: k1 " + shape_str(k1.shape()) + ", k3 " +
                         shape_str(k3.shape()) + ", k5 " + shape_str(k5.shape()));
    return ConvKernelSet<T>{std::move(k1), std::move(k3), std::move(k5)};
}

template <class T>
ConvKernelSet<T> seeded_kernel_set(int64_t out_ch, int64_t in_ch, uint64_t seed, double scale = 0.1) {
    auto gen = [&](int64_t r, uint64_t salt) {
        Tensor<T> k = seeded_tensor<T>({out_ch, in_ch, r, r}, seed + salt, Dist::Normal);
        k *= static_cast<T>(scale);
        return k;
    };
    return make_kernel_set(gen(1, 0x11), gen(3, 0x33), gen(5, 0x55));
}

// Center-aligned zero-padded sum: composite[u,v] = k5[u,v] + k3[u-1,v-1] + k1 at (2,2).
template <class T>
Tensor<T> compose_kernels(const ConvKernelSet<T>& set) {
    const int64_t O = set.out_channels(), I = set.in_channels();
    Tensor<T> w = set.k5;
    for (int64_t o = 0; o < O; ++o) {
        for (int64_t c = 0; c < I; ++c) {
            T* wp = w.data() + ((o * I + c) * 5) * 5;
            const T* k3p = set.k3.data() + ((o * I + c) * 3) * 3;
            for (int64_t u = 0; u < 3; ++u)
                for (int64_t v = 0; v < 3; ++v) wp[(u + 1) * 5 + (v + 1)] += k3p[u * 3 + v];
            wp[2 * 5 + 2] += set.k1[o * I + c];
        }
    }
    return w;
}

// Stride-1 zero same-padded convolution, NCHW x OIHW -> NCHW. With a counter
// the dense padded loops run and every multiply-accumulate is tallied; the
// fast path skips zero taps, which only ever drops exact +0 terms.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, FlopCounter* counter = nullptr,
                 int workers = 1) {
    if (x.rank() != 4)
        throw ShapeError("conv2d input must be rank-4 NCHW, got " + shape_str(x.shape()));
    if (k.rank() != 4 || k.dim(2) != k.dim(3) || k.dim(2) % 2 == 0)
        throw ShapeError("conv2d kernel must be odd square OIHW, got " + shape_str(k.shape()));
    if (x.dim(1) != k.dim(1))
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(k.shape()));
    const int64_t B = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = k.dim(0), r = k.dim(2), p = r / 2;
    Tensor<T> out({B, O, H, W});

    if (counter) {
        uint64_t macs = 0;
        for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < O; ++o)
                for (int64_t i = 0; i < H; ++i)
                    for (int64_t j = 0; j < W; ++j) {
                        T acc = T(0);
                        for (int64_t c = 0; c < I; ++c)
                            for (int64_t u = 0; u < r; ++u)
                                for (int64_t v = 0; v < r; ++v) {
                                    const int64_t y = i + u - p, z = j + v - p;
                                    const T xv = (y >= 0 && y < H && z >= 0 && z < W)
                                                     ? x[((b * I + c) * H + y) * W + z]
                                                     : T(0);
                                    acc += k[((o * I + c) * r + u) * r + v] * xv;
                                    ++macs;
                                }
                        out[((b * O + o) * H + i) * W + j] = acc;
                    }
        counter->forward_macs += macs;
        return out;
    }

    detail::parallel_for(B * O, workers, [&](int64_t plane) {
        const int64_t b = plane / O, o = plane % O;
        T* op = out.data() + ((b * O + o) * H) * W;
        for (int64_t c = 0; c < I; ++c) {
            const T* xp = x.data() + ((b * I + c) * H) * W;
            const T* kp = k.data() + ((o * I + c) * r) * r;
            for (int64_t u = 0; u < r; ++u) {
                for (int64_t v = 0; v < r; ++v) {
                    const T kv = kp[u * r + v];
                    const int64_t di = u - p, dj = v - p;
                    const int64_t i0 = std::max<int64_t>(0, -di), i1 = std::min(H, H - di);
                    const int64_t j0 = std::max<int64_t>(0, -dj), j1 = std::min(W, W - dj);
                    for (int64_t i = i0; i < i1; ++i) {
                        T* orow = op + i * W;
                        const T* xrow = xp + (i + di) * W + dj;
                        for (int64_t j = j0; j < j1; ++j) orow[j] += kv * xrow[j];
                    }
                }
            }
        }
    });
    return out;
}

template <class T>
struct MultiScaleGrads {
    Tensor<T> k1, k3, k5;  // same shapes as the kernel set
    Tensor<T> input;       // same shape as the input
};

template <class T>
Tensor<T> multi_scale_forward(const Tensor<T>& x, const ConvKernelSet<T>& set,
                              MultiScaleMode mode = MultiScaleMode::Fused,
                              FlopCounter* counter = nullptr, int workers = 1) {
    if (mode == MultiScaleMode::Fused) return conv2d(x, compose_kernels(set), counter, workers);
    Tensor<T> y = conv2d(x, set.k1, counter, workers);
    y += conv2d(x, set.k3, counter, workers);
    y += conv2d(x, set.k5, counter, workers);
    return y;
}

namespace detail {

// Per-tap weight gradient: sum over one batch item of grad_out[o,i,j] *
// x[c, i+u-p, j+v-p]. Shared by the plain and fused paths so mapped taps are
// computed by the very same loop.
template <class T>
T weight_tap_sum(const T* gp, const T* xp, int64_t H, int64_t W, int64_t di, int64_t dj) {
    const int64_t i0 = std::max<int64_t>(0, -di), i1 = std::min(H, H - di);
    const int64_t j0 = std::max<int64_t>(0, -dj), j1 = std::min(W, W - dj);
    T acc = T(0);
    for (int64_t i = i0; i < i1; ++i) {
        const T* grow = gp + i * W;
        const T* xrow = xp + (i + di) * W + dj;
        for (int64_t j = j0; j < j1; ++j) acc += grow[j] * xrow[j];
    }
    return acc;
}

template <class T>
T weight_tap_sum_dense(const T* gp, const T* xp, int64_t H, int64_t W, int64_t di, int64_t dj,
                       uint64_t& macs) {
    T acc = T(0);
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j) {
            const int64_t y = i + di, z = j + dj;
            const T xv = (y >= 0 && y < H && z >= 0 && z < W) ? xp[y * W + z] : T(0);
            acc += gp[i * W + j] * xv;
            ++macs;
        }
    return acc;
}

// Weight gradient of one branch for one batch item, accumulated into gk.
template <class T>
void weight_grad_branch(const T* x, const T* g, int64_t I, int64_t O, int64_t H, int64_t W,
                        int64_t r, Tensor<T>& gk, uint64_t* macs) {
    const int64_t p = r / 2;
    for (int64_t o = 0; o < O; ++o)
        for (int64_t c = 0; c < I; ++c) {
            const T* gp = g + o * H * W;
            const T* xp = x + c * H * W;
            for (int64_t u = 0; u < r; ++u)
                for (int64_t v = 0; v < r; ++v) {
                    const T s = macs ? weight_tap_sum_dense(gp, xp, H, W, u - p, v - p, *macs)
                                     : weight_tap_sum(gp, xp, H, W, u - p, v - p);
                    gk[((o * I + c) * r + u) * r + v] += s;
                }
        }
}

// Fused weight gradient for one batch item: one sweep over the 5x5 support;
// each tap sum lands in k5 and additionally in k3/k1 where their padded
// supports cover the tap. 25 tap sums replace the plain path's 35.
template <class T>
void weight_grad_fused(const T* x, const T* g, int64_t I, int64_t O, int64_t H, int64_t W,
                       Tensor<T>& gk1, Tensor<T>& gk3, Tensor<T>& gk5, uint64_t* macs) {
    for (int64_t o = 0; o < O; ++o)
        for (int64_t c = 0; c < I; ++c) {
            const T* gp = g + o * H * W;
            const T* xp = x + c * H * W;
            for (int64_t u = 0; u < 5; ++u)
                for (int64_t v = 0; v < 5; ++v) {
                    const T s = macs ? weight_tap_sum_dense(gp, xp, H, W, u - 2, v - 2, *macs)
                                     : weight_tap_sum(gp, xp, H, W, u - 2, v - 2);
                    gk5[((o * I + c) * 5 + u) * 5 + v] += s;
                    if (u >= 1 && u <= 3 && v >= 1 && v <= 3)
                        gk3[((o * I + c) * 3 + (u - 1)) * 3 + (v - 1)] += s;
                    if (u == 2 && v == 2) gk1[o * I + c] += s;
                }
        }
}

// Input gradient: transposed convolution of grad_out with the kernel,
// grad_in[c,y,z] += k[o,c,u,v] * grad_out[o, y-u+p, z-v+p].
template <class T>
void input_grad_accum(const Tensor<T>& grad_out, const Tensor<T>& k, Tensor<T>& gx,
                      uint64_t* macs, int workers) {
    const int64_t B = grad_out.dim(0), O = grad_out.dim(1), H = grad_out.dim(2),
                  W = grad_out.dim(3);
    const int64_t I = k.dim(1), r = k.dim(2), p = r / 2;
    uint64_t local = 0;
    auto plane = [&](int64_t idx) {
        const int64_t b = idx / I, c = idx % I;
        T* gp = gx.data() + ((b * I + c) * H) * W;
        for (int64_t o = 0; o < O; ++o) {
            const T* dp = grad_out.data() + ((b * O + o) * H) * W;
            const T* kp = k.data() + ((o * I + c) * r) * r;
            for (int64_t u = 0; u < r; ++u)
                for (int64_t v = 0; v < r; ++v) {
                    const T kv = kp[u * r + v];
                    const int64_t di = p - u, dj = p - v;  // grad_out offset
                    if (macs) {
                        for (int64_t y = 0; y < H; ++y)
                            for (int64_t z = 0; z < W; ++z) {
                                const int64_t i = y + di, j = z + dj;
                                const T dv = (i >= 0 && i < H && j >= 0 && j < W)
                                                 ? dp[i * W + j]
                                                 : T(0);
                                gp[y * W + z] += kv * dv;
                                ++local;
                            }
                    } else {
                        const int64_t y0 = std::max<int64_t>(0, -di), y1 = std::min(H, H - di);
                        const int64_t z0 = std::max<int64_t>(0, -dj), z1 = std::min(W, W - dj);
                        for (int64_t y = y0; y < y1; ++y) {
                            T* grow = gp + y * W;
                            const T* drow = dp + (y + di) * W + dj;
                            for (int64_t z = z0; z < z1; ++z) grow[z] += kv * drow[z];
                        }
                    }
                }
        }
    };
    // Counting mode stays sequential so the tally is race-free.
    parallel_for(B * I, macs ? 1 : workers, plane);
    if (macs) *macs += local;
}

}  // namespace detail

// Branch-distinct gradients plus the input gradient. Both modes return the
// same mathematical values (Plain is the three-pass reference); Fused computes
// all three weight gradients in a single 5x5 sweep and the input gradient via
// one transposed convolution with the composite kernel.
//
// Batch reduction contract: weight gradients are per-item partials summed in
// batch order, whatever the worker count, so results are bit-reproducible.
template <class T>
MultiScaleGrads<T> multi_scale_backward(const Tensor<T>& x, const ConvKernelSet<T>& set,
                                        const Tensor<T>& grad_out,
                                        MultiScaleMode mode = MultiScaleMode::Fused,
                                        FlopCounter* counter = nullptr, int workers = 1) {
    if (x.rank() != 4)
        throw ShapeError("multi_scale_backward input must be rank-4 NCHW, got " +
                         shape_str(x.shape()));
    if (x.dim(1) != set.in_channels())
        throw ShapeError("input channels " + shape_str(x.shape()) + " do not match kernel set [" +
                         std::to_string(set.out_channels()) + "," +
                         std::to_string(set.in_channels()) + ",...]");
    const Shape want{x.dim(0), set.out_channels(), x.dim(2), x.dim(3)};
    if (grad_out.shape() != want)
        throw ShapeError("grad_out shape " + shape_str(grad_out.shape()) + " must be " +
                         shape_str(want));

    const int64_t B = x.dim(0), I = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t O = set.out_channels();

    MultiScaleGrads<T> g{Tensor<T>({O, I, 1, 1}), Tensor<T>({O, I, 3, 3}), Tensor<T>({O, I, 5, 5}),
                         Tensor<T>({B, I, H, W})};

    const int w = std::max(1, workers);
    const bool parallel_batch = w > 1 && B > 1 && !counter;

    if (mode == MultiScaleMode::Fused) {
        uint64_t macs = 0;
        uint64_t* mp = counter ? &macs : nullptr;
        if (!parallel_batch) {
            for (int64_t b = 0; b < B; ++b)
                detail::weight_grad_fused(x.data() + b * I * H * W, grad_out.data() + b * O * H * W,
                                          I, O, H, W, g.k1, g.k3, g.k5, mp);
        } else {
            std::vector<MultiScaleGrads<T>> parts(static_cast<size_t>(B),
                                                  MultiScaleGrads<T>{Tensor<T>({O, I, 1, 1}),
                                                                     Tensor<T>({O, I, 3, 3}),
                                                                     Tensor<T>({O, I, 5, 5}),
                                                                     Tensor<T>()});
            detail::parallel_for(B, w, [&](int64_t b) {
                auto& pb = parts[static_cast<size_t>(b)];
                detail::weight_grad_fused(x.data() + b * I * H * W,
                                          grad_out.data() + b * O * H * W, I, O, H, W, pb.k1,
                                          pb.k3, pb.k5, nullptr);
            });
            for (int64_t b = 0; b < B; ++b) {  // fixed index-order reduction
                g.k1 += parts[static_cast<size_t>(b)].k1;
                g.k3 += parts[static_cast<size_t>(b)].k3;
                g.k5 += parts[static_cast<size_t>(b)].k5;
            }
        }
        if (counter) counter->weight_grad_macs += macs;

        uint64_t imacs = 0;
        detail::input_grad_accum(grad_out, compose_kernels(set), g.input,
                                 counter ? &imacs : nullptr, w);
        if (counter) counter->input_grad_macs += imacs;
        return g;
    }

    // Plain reference: one pass per branch for weights, one transposed
    // convolution per branch for the input gradient, branches summed in
    // (k1, k3, k5) order.
    uint64_t macs = 0;
    uint64_t* mp = counter ? &macs : nullptr;
    auto run_branch = [&](const Tensor<T>& k, Tensor<T>& gk) {
        const int64_t r = k.dim(2);
        if (!parallel_batch) {
            for (int64_t b = 0; b < B; ++b)
                detail::weight_grad_branch(x.data() + b * I * H * W,
                                           grad_out.data() + b * O * H * W, I, O, H, W, r, gk, mp);
        } else {
            std::vector<Tensor<T>> parts(static_cast<size_t>(B), Tensor<T>(k.shape()));
            detail::parallel_for(B, w, [&](int64_t b) {
                detail::weight_grad_branch(x.data() + b * I * H * W,
                                           grad_out.data() + b * O * H * W, I, O, H, W, r,
                                           parts[static_cast<size_t>(b)], nullptr);
            });
            for (int64_t b = 0; b < B; ++b) gk += parts[static_cast<size_t>(b)];
        }
    };
    run_branch(set.k1, g.k1);
    run_branch(set.k3, g.k3);
    run_branch(set.k5, g.k5);
    if (counter) counter->weight_grad_macs += macs;

    uint64_t imacs = 0;
    uint64_t* ip = counter ? &imacs : nullptr;
    detail::input_grad_accum(grad_out, set.k1, g.input, ip, w);
    detail::input_grad_accum(grad_out, set.k3, g.input, ip, w);
    detail::input_grad_accum(grad_out, set.k5, g.input, ip, w);
    if (counter) counter->input_grad_macs += imacs;
    return g;
}

// Dense MAC counts implied by the counting mode, for cross-checking tallies.
inline uint64_t conv_macs(int64_t B, int64_t O, int64_t I, int64_t H, int64_t W, int64_t r) {
    return static_cast<uint64_t>(B) * static_cast<uint64_t>(O) * static_cast<uint64_t>(I) *
           static_cast<uint64_t>(H) * static_cast<uint64_t>(W) * static_cast<uint64_t>(r * r);
}

}  // namespace emkit
