#include "squat/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace squat {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match data size " +
                                    std::to_string(data.size()));
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

}  // namespace squat
