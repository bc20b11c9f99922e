#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace squat {

// Cosine annealing: lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0);

// Adam with per-parameter moment buffers keyed by the parameter's storage
// address; state survives across steps for as long as the optimizer lives.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void update(const void* key, double* param, const double* grad, std::size_t n, double lr);
    void reset() { states_.clear(); }

private:
    struct State {
        std::vector<double> m, v;
        std::int64_t t = 0;
    };
    double beta1_, beta2_, eps_;
    std::unordered_map<const void*, State> states_;
};

class Sgd {
public:
    explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}

    void update(const void* key, double* param, const double* grad, std::size_t n, double lr);
    void reset() { velocity_.clear(); }

private:
    double momentum_;
    std::unordered_map<const void*, std::vector<double>> velocity_;
};

}  // namespace squat
