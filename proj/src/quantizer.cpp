#include "squat/quantizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace squat {

QuantRange qrange(int bits, bool is_signed) {
    if (bits < 2 || bits > 8)
        throw std::invalid_argument("qrange: bits must be in [2,8], got " + std::to_string(bits));
    QuantRange r;
    if (is_signed) {
        r.q_n = -(1L << (bits - 1));
        r.q_p = (1L << (bits - 1)) - 1;
    } else {
        r.q_n = 0;
        r.q_p = (1L << bits) - 1;
    }
    return r;
}

double round_half_even(double x) {
    double fl = std::floor(x);
    double frac = x - fl;
    if (frac > 0.5) return fl + 1.0;
    if (frac < 0.5) return fl;
    // tie: pick the even neighbor
    return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

double quantize_scalar(double w, double s, const QuantRange& r) {
    double ratio = w / s;
    double lo = static_cast<double>(r.q_n), hi = static_cast<double>(r.q_p);
    double clipped = ratio < lo ? lo : (ratio > hi ? hi : ratio);
    return round_half_even(clipped) * s;
}

Tensor quantize_forward(const Tensor& w, double s, const QuantRange& r) {
    if (!(s > 0.0)) throw std::invalid_argument("quantize_forward: step size must be > 0, got " +
                                                std::to_string(s));
    Tensor out = w;
    out.requires_grad = false;
    out.grad.clear();
    for (double& v : out.data) {
        if (!std::isfinite(v)) throw std::invalid_argument("quantize_forward: non-finite weight");
        v = quantize_scalar(v, s, r);
    }
    return out;
}

double step_size_grad(double w, double s, const QuantRange& r) {
    double ratio = w / s;
    if (ratio <= static_cast<double>(r.q_n)) return static_cast<double>(r.q_n);
    if (ratio >= static_cast<double>(r.q_p)) return static_cast<double>(r.q_p);
    return -ratio + round_half_even(ratio);
}

Tensor weight_grad_ste(const Tensor& upstream, const Tensor& w, double s, const QuantRange& r) {
    if (!same_shape(upstream, w))
        throw std::invalid_argument("weight_grad_ste: upstream " + shape_str(upstream.shape) +
                                    " vs weight " + shape_str(w.shape));
    Tensor out = upstream;
    out.requires_grad = false;
    out.grad.clear();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double ratio = w.data[i] / s;
        bool in_range = ratio > static_cast<double>(r.q_n) && ratio < static_cast<double>(r.q_p);
        if (!in_range) out.data[i] = 0.0;
    }
    return out;
}

double init_step_size(const Tensor& w, long q_p) {
    if (w.size() == 0) throw std::invalid_argument("init_step_size: empty tensor");
    double mean_abs = 0.0;
    for (double v : w.data) mean_abs += std::fabs(v);
    mean_abs /= static_cast<double>(w.size());
    double s = 2.0 * mean_abs / std::sqrt(static_cast<double>(q_p));
    return s > 0.0 ? s : 1e-3;
}

double grad_scale(std::size_t num_elements, long q_p) {
    return 1.0 / std::sqrt(static_cast<double>(num_elements) * static_cast<double>(q_p));
}

NodeId fake_quantize(Tape& tape, NodeId w, NodeId s, const QuantRange& r, double gscale) {
    auto fwd = [r](const std::vector<Tensor>& in) -> Tensor {
        return quantize_forward(in[0], in[1].data[0], r);
    };
    auto bwd = [r, gscale](const Tensor& up, const std::vector<Tensor>& in) -> std::vector<Tensor> {
        const Tensor& w = in[0];
        double sv = in[1].data[0];
        Tensor gw = weight_grad_ste(up, w, sv, r);
        double gs = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i)
            gs += up.data[i] * step_size_grad(w.data[i], sv, r);
        gs *= gscale;
        return {std::move(gw), Tensor::scalar(gs)};
    };
    return tape.custom(fwd, bwd, {w, s});
}

}  // namespace squat
