#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "samlab/error.hpp"

namespace samlab {

using Shape = std::vector<long long>;

inline long long shape_numel(const Shape& shape) {
    long long n = 1;
    for (long long d : shape) n *= d;
    return n;
}

/// Dense row-major tensor of f64. Rank 0 is a scalar (one element).
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;

    Tensor(Shape s, std::vector<double> d, bool rg = false)
        : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
        check_invariants();
    }

    static Tensor zeros(Shape s, bool rg = false) {
        long long n = checked_numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0), rg);
    }

    static Tensor full(Shape s, double value, bool rg = false) {
        long long n = checked_numel(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), value), rg);
    }

    static Tensor scalar(double value, bool rg = false) { return Tensor({}, {value}, rg); }

    long long numel() const { return static_cast<long long>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    long long rows() const { return shape.at(0); }
    long long cols() const { return shape.at(1); }

    double& at(long long i, long long j) { return data[static_cast<size_t>(i * cols() + j)]; }
    double at(long long i, long long j) const { return data[static_cast<size_t>(i * cols() + j)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void check_invariants() const {
        for (long long d : shape)
            if (d < 1) throw ValidationError("tensor dimension must be >= 1");
        if (shape_numel(shape) != numel())
            throw ValidationError("tensor data length does not match shape product");
    }

private:
    static long long checked_numel(const Shape& s) {
        for (long long d : s)
            if (d < 1) throw ValidationError("tensor dimension must be >= 1");
        return shape_numel(s);
    }
};

}  // namespace samlab
