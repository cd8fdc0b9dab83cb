#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "modalmend/errors.hpp"

namespace modalmend {

// Dimension sizes, row-major layout. An empty shape denotes a scalar.
using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense 64-bit float array. Plain value type: copyable, no views.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v);

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Multi-index access, bounds unchecked beyond debug builds.
    double& at(std::initializer_list<int64_t> idx);
    double at(std::initializer_list<int64_t> idx) const;

    double item() const;  // requires size() == 1

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(double v);

private:
    Shape shape_;
    std::vector<double> data_;
};

} // namespace modalmend
