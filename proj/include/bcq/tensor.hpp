#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "bcq/errors.hpp"
#include "bcq/rng.hpp"

namespace bcq {

// Dense row-major tensor. Shape is dynamic; scalars use shape {} with one element.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)), v(count(shape), T(0)) {}
    Tensor(std::vector<int64_t> s, T fill) : shape(std::move(s)), v(count(shape), fill) {}

    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw ShapeError("negative dimension");
            n *= d;
        }
        return n;
    }

    static Tensor scalar(T value) {
        Tensor t;
        t.v.assign(1, value);
        return t;
    }

    static Tensor from(std::vector<int64_t> s, std::vector<T> data) {
        if (count(s) != static_cast<int64_t>(data.size()))
            throw ShapeError("data size does not match shape");
        Tensor t;
        t.shape = std::move(s);
        t.v = std::move(data);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int64_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
    // product of all dims except the last; how many rows a matrix view has
    int64_t rows() const { return last_dim() == 0 ? 0 : numel() / last_dim(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    T& at2(int64_t r, int64_t c) { return v[static_cast<size_t>(r * shape[1] + c)]; }
    const T& at2(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * shape[1] + c)]; }

    T& at3(int64_t a, int64_t b, int64_t c) {
        return v[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
    }
    const T& at3(int64_t a, int64_t b, int64_t c) const {
        return v[static_cast<size_t>((a * shape[1] + b) * shape[2] + c)];
    }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) os << 'x';
            os << shape[i];
        }
        os << ']';
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
Tensor<T> randn(std::vector<int64_t> shape, Rng& rng, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (auto& x : t.v) x = static_cast<T>(rng.normal() * stddev);
    return t;
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

} // namespace bcq
