#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "breg/error.hpp"

namespace breg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor of 64-bit floats.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : shape_(std::move(shape)), values_(std::move(values)),
          requires_grad_(requires_grad) {
        if (shape_numel(shape_) != values_.size()) {
            throw ContractError("tensor_of: shape " + shape_str(shape_) +
                                " wants " + std::to_string(shape_numel(shape_)) +
                                " values, got " + std::to_string(values_.size()));
        }
    }

    static Tensor zeros(Shape shape) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0));
    }

    static Tensor full(Shape shape, double value) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value));
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t dim) const { return shape_[dim]; }
    std::size_t numel() const { return values_.size(); }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    // Row-major element access, rank checked by the caller.
    double& at(std::size_t i, std::size_t j) {
        return values_[i * shape_[1] + j];
    }
    double at(std::size_t i, std::size_t j) const {
        return values_[i * shape_[1] + j];
    }
    double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool all_finite() const {
        for (double v : values_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
    std::vector<double> values_;
    bool requires_grad_ = false;
};

// Spec entry point: row-major construction with shape/length validation.
inline Tensor tensor_of(Shape shape, std::vector<double> values) {
    return Tensor(std::move(shape), std::move(values));
}

} // namespace breg
