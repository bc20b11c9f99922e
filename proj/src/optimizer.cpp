#include "squat/optimizer.hpp"

namespace squat {

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
    if (total_steps <= 0) return lr0;
    if (step >= total_steps) return 0.0;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

void Adam::update(const void* key, double* param, const double* grad, std::size_t n, double lr) {
    State& st = states_[key];
    if (st.m.empty()) {
        st.m.assign(n, 0.0);
        st.v.assign(n, 0.0);
    }
    ++st.t;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
    for (std::size_t i = 0; i < n; ++i) {
        st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * grad[i];
        st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
}

void Sgd::update(const void* key, double* param, const double* grad, std::size_t n, double lr) {
    if (momentum_ == 0.0) {
        for (std::size_t i = 0; i < n; ++i) param[i] -= lr * grad[i];
        return;
    }
    auto& vel = velocity_[key];
    if (vel.empty()) vel.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        vel[i] = momentum_ * vel[i] + grad[i];
        param[i] -= lr * vel[i];
    }
}

}  // namespace squat
