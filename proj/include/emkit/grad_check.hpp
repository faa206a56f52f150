// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient checking. The analytic gradient of a scalar
// function is compared coordinate-by-coordinate against
// (f(x + h e_i) - f(x - h e_i)) / 2h with h = eps * max(1, |x_i|); the
// returned figure is the worst relative error max_i |ga_i - fd_i| / max(1, |fd_i|).

#pragma once

#include "emkit/tensor.hpp"

namespace emkit {

template <class T, class ValueFn>
Tensor<double> fd_gradient(ValueFn&& f, const Tensor<T>& x, double eps = 1e-5) {
    Tensor<double> fd(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double h = eps * std::max(1.0, std::abs(static_cast<double>(x[i])));
        Tensor<T> xp = x, xm = x;
        xp[i] = static_cast<T>(static_cast<double>(x[i]) + h);
        xm[i] = static_cast<T>(static_cast<double>(x[i]) - h);
        fd[i] = (static_cast<double>(f(xp)) - static_cast<double>(f(xm))) / (2.0 * h);
    }
    return fd;
}

template <class T, class ValueFn, class GradFn>
double grad_check(ValueFn&& f, GradFn&& g, const Tensor<T>& x, double eps = 1e-5) {
    const Tensor<T> analytic = g(x);
    if (analytic.shape() != x.shape())
        throw ShapeError("grad_check: analytic gradient shape " + shape_str(analytic.shape()) +
                         " does not match input " + shape_str(x.shape()));
    const Tensor<double> fd = fd_gradient(f, x, eps);
    double worst = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double rel =
            std::abs(static_cast<double>(analytic[i]) - fd[i]) / std::max(1.0, std::abs(fd[i]));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace emkit
