#include "modalmend/tensor.hpp"

#include <cmath>
#include <sstream>

namespace modalmend {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (int64_t d : shape_) {
        if (d < 0) throw ShapeError("tensor: negative dimension in " + shape_str(shape_));
    }
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match data length " +
                         std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double v) {
    Tensor t{Shape{}};
    t.data_[0] = v;
    return t;
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
}

double& Tensor::at(std::initializer_list<int64_t> idx) {
    int64_t flat = 0;
    size_t k = 0;
    for (int64_t i : idx) {
        flat = flat * shape_[k] + i;
        ++k;
    }
    return data_[static_cast<size_t>(flat)];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
}

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item: tensor with shape " + shape_str(shape_) + " is not a scalar");
    }
    return data_[0];
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

} // namespace modalmend
