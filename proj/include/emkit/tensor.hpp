// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with value semantics, a portable seeded RNG, and the
// couple of numeric kernels (matmul, row softmax) the rest of the library is
// built on. Templated on the scalar type: float for benchmarking paths,
// double for verification and the end-to-end pipeline.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace emkit {

using Shape = std::vector<int64_t>;

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

template <class T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
            throw ShapeError("shape " + shape_str(shape_) + " expects " +
                             std::to_string(shape_numel(shape_)) + " values, got " +
                             std::to_string(data_.size()));
        }
    }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int i) const {
        if (i < 0) i += static_cast<int>(shape_.size());
        if (i < 0 || i >= static_cast<int>(shape_.size()))
            throw ShapeError("dim index out of range for shape " + shape_str(shape_));
        return shape_[static_cast<size_t>(i)];
    }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Strided element access; bounds are always checked (these live on cold paths).
    template <class... Ix>
    T& at(Ix... ix) {
        return data_[flat_index({static_cast<int64_t>(ix)...})];
    }
    template <class... Ix>
    const T& at(Ix... ix) const {
        return data_[flat_index({static_cast<int64_t>(ix)...})];
    }

    Tensor reshaped(Shape s) const& {
        check_numel(s);
        Tensor out = *this;
        out.shape_ = std::move(s);
        return out;
    }
    Tensor reshaped(Shape s) && {
        check_numel(s);
        shape_ = std::move(s);
        return std::move(*this);
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor& operator+=(const Tensor& o) {
        binary_check(o, "+=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        binary_check(o, "-=");
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(T c) {
        for (auto& v : data_) v *= c;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, T c) { return a *= c; }

  private:
    size_t flat_index(std::initializer_list<int64_t> idx) const {
        if (static_cast<int64_t>(idx.size()) != rank())
            throw ShapeError("indexing rank-" + std::to_string(rank()) + " tensor " +
                             shape_str(shape_) + " with " + std::to_string(idx.size()) +
                             " indices");
        int64_t flat = 0;
        size_t d = 0;
        for (int64_t i : idx) {
            int64_t extent = shape_[d];
            if (i < 0 || i >= extent)
                throw ShapeError("index " + std::to_string(i) + " out of range for dim " +
                                 std::to_string(d) + " of " + shape_str(shape_));
            flat = flat * extent + i;
            ++d;
        }
        return static_cast<size_t>(flat);
    }
    void check_numel(const Shape& s) const {
        if (shape_numel(s) != numel())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    void binary_check(const Tensor& o, const char* op) const {
        if (!same_shape(o))
            throw ShapeError(std::string("elementwise ") + op + " with mismatched shapes " +
                             shape_str(shape_) + " vs " + shape_str(o.shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

// Portable seeded generator. mt19937_64 output is pinned by the standard and the
// derived uniform/normal transforms below avoid libstdc++'s unspecified
// distribution algorithms, so identical seeds give identical streams everywhere.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t raw() { return gen_(); }

    // [0, 1), 53-bit mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // (0, 1], safe to pass through log().
    double uniform_open() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; second deviate cached so the stream stays deterministic.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform_open();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [lo, hi] by rejection; exact and portable.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (lo > hi) throw ValueError("uniform_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return lo + static_cast<int64_t>(x % span);
    }

    // Fisher-Yates with the portable integer draw above (std::shuffle is
    // implementation-defined and would break cross-machine reproducibility).
    template <class V>
    void shuffle(std::vector<V>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(0, i))]);
        }
    }

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

enum class Dist { Uniform, Normal };

// Deterministic for fixed (shape, seed, dist): values are generated in double
// and narrowed once, so float tensors are exact casts of the double stream.
template <class T>
Tensor<T> seeded_tensor(const Shape& shape, uint64_t seed, Dist dist) {
    Tensor<T> out(shape);
    Rng rng(seed);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = dist == Dist::Uniform ? rng.uniform() : rng.normal();
        out[i] = static_cast<T>(v);
    }
    return out;
}

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return Tensor<T>(t.shape());
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff with mismatched shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            const T aik = pa[i * k + kk];
            const T* brow = pb + kk * n;
            T* orow = po + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    if (a.rank() != 2) throw ShapeError("transpose2d expects rank-2, got " + shape_str(a.shape()));
    Tensor<T> out({a.dim(1), a.dim(0)});
    for (int64_t i = 0; i < a.dim(0); ++i)
        for (int64_t j = 0; j < a.dim(1); ++j) out[j * a.dim(0) + i] = a[i * a.dim(1) + j];
    return out;
}

// Softmax over the last axis. Max-subtraction keeps it stable and makes
// all-equal rows come out exactly uniform (every exp() is exactly 1).
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.rank() < 1) throw ShapeError("softmax_rows expects rank >= 1");
    const int64_t cols = x.dim(-1);
    if (cols == 0) throw ShapeError("softmax_rows: empty last axis");
    const int64_t rows = x.numel() / cols;
    Tensor<T> out(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const T* in = x.data() + r * cols;
        T* o = out.data() + r * cols;
        T mx = in[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        T sum = T(0);
        for (int64_t j = 0; j < cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (int64_t j = 0; j < cols; ++j) o[j] /= sum;
    }
    return out;
}

}  // namespace emkit
