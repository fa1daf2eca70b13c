#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpsnn {

// Global working precision. Training and gradient checks require 64-bit.
using Real = double;

class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape: " + msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric: " + msg) {}
};

// Dense row-major n-d array. Immutable by convention once handed to the tape.
struct Array {
    std::vector<long> shape;
    std::vector<Real> data;

    Array() = default;
    explicit Array(std::vector<long> s) : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), Real(0)) {}
    Array(std::vector<long> s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<long>(data.size()))
            throw ShapeError("data length does not match shape");
    }

    static long numel_of(const std::vector<long>& s) {
        long n = 1;
        for (long e : s) {
            if (e < 0) throw ShapeError("negative extent");
            n *= e;
        }
        return n;
    }

    static Array zeros(std::vector<long> s) { return Array(std::move(s)); }

    static Array full(std::vector<long> s, Real v) {
        Array a(std::move(s));
        std::fill(a.data.begin(), a.data.end(), v);
        return a;
    }

    static Array scalar(Real v) { return Array({1}, {v}); }

    long numel() const { return static_cast<long>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    long dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    Real& operator[](long i) { return data[static_cast<size_t>(i)]; }
    Real operator[](long i) const { return data[static_cast<size_t>(i)]; }

    // index helpers for the rank-3 [B,C,T] layout used throughout
    Real& at3(long b, long c, long t) { return data[static_cast<size_t>((b * shape[1] + c) * shape[2] + t)]; }
    Real at3(long b, long c, long t) const { return data[static_cast<size_t>((b * shape[1] + c) * shape[2] + t)]; }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    void check_finite(const char* what) const {
        for (Real v : data)
            if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
    }
};

inline std::string shape_str(const std::vector<long>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace dpsnn
