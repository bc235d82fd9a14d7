/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "tgan/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace tgan {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(data.begin(), data.end()) {
    if (data_.size() != shape_.size()) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    }
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_.str());
    }
    return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace tgan
