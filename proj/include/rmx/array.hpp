#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmx {

// Dense row-major array of doubles with an explicit shape.
// All numeric kernels in this library compute in f64; narrowing to f32
// happens only at serialization boundaries.
class Array {
public:
    Array() = default;

    explicit Array(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Array(std::vector<std::size_t> shape, double fill)
        : shape_(std::move(shape)), data_(count(shape_), fill) {}

    static Array from(std::vector<std::size_t> shape, std::vector<double> data) {
        if (count(shape) != data.size()) {
            throw std::runtime_error("Array::from: shape does not match data length");
        }
        Array a;
        a.shape_ = std::move(shape);
        a.data_ = std::move(data);
        return a;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D / 3-D access; bounds are the caller's responsibility on hot paths.
    double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    // Contiguous view of row i of a 2-D array.
    std::span<double> row(std::size_t i) {
        return std::span<double>(data_.data() + i * shape_[1], shape_[1]);
    }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(data_.data() + i * shape_[1], shape_[1]);
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool same_shape(const Array& other) const { return shape_ == other.shape_; }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// Throws if any element is NaN or infinite. Public entry points call this on
// their outputs so numeric faults surface at the operation that produced them.
void ensure_finite(const Array& a, const std::string& what);
void ensure_finite(std::span<const double> v, const std::string& what);

}  // namespace rmx
