// Dense row-major float64 tensor. Value semantics; autodiff bookkeeping
// (gradients, requires_grad) lives in the Tape, not here.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chroma/error.hpp"

namespace chroma {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

    static Tensor from(std::vector<int> shape, std::vector<double> values) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (static_cast<std::int64_t>(values.size()) != checked_size(t.shape_))
            throw ShapeError("tensor data length does not match shape");
        t.data_ = std::move(values);
        return t;
    }

    static Tensor scalar(double v) { return from({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at2(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double at2(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }

    double& at3(int c, int h, int w) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    double at3(int c, int h, int w) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }

    double& at4(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at4(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor reshaped(std::vector<int> shape) const {
        if (checked_size(shape) != size()) throw ShapeError("reshape changes element count");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    bool all_finite() const;

    static std::string shape_str(const std::vector<int>& shape);

private:
    static std::int64_t checked_size(const std::vector<int>& shape);

    std::vector<int> shape_;
    std::vector<double> data_;
};

// Plain (tape-free) helpers used by oracles, metrics and optimizer code.
Tensor randn(std::vector<int> shape, class Rng& rng, double stddev = 1.0);
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

// C = A (m x k) * B (k x n), row-major. Accumulates over k in index order so
// every caller sees one well-defined rounding.
void matmul_accum(const double* a, const double* b, double* c, int m, int k, int n);
// C (m x n) += A (m x k) * B^T, with B stored (n x k).
void matmul_nt_accum(const double* a, const double* b, double* c, int m, int k, int n);
// C (m x n) += A^T * B, with A stored (k x m), B (k x n).
void matmul_tn_accum(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace chroma
