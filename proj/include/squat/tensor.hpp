#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace squat {

// Dense row-major f64 tensor. Rank 0 (empty shape) is a scalar with one
// element. `grad` stays empty until a backward pass populates it.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor scalar(double v);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return shape.empty(); }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace squat
