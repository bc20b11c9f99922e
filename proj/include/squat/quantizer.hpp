#pragma once

#include <cstdint>
#include <optional>

#include "squat/tape.hpp"
#include "squat/tensor.hpp"

namespace squat {

// Integer level range of an n-bit uniform quantizer.
struct QuantRange {
    long q_n = 0;
    long q_p = 0;
};

// Note: the usual signed convention here is (q_n, q_p) = (-2^(n-1), 2^(n-1)-1).
QuantRange qrange(int bits, bool is_signed);

double round_half_even(double x);

// Elementwise round(clip(w/s, q_n, q_p)) * s.
Tensor quantize_forward(const Tensor& w, double s, const QuantRange& r);
double quantize_scalar(double w, double s, const QuantRange& r);

// d quantize / d s for one element under the straight-through estimator:
// -w/s + round(w/s) in range, q_n / q_p in the clipped regions.
double step_size_grad(double w, double s, const QuantRange& r);

// Clip-masked pass-through of the upstream gradient (dQ/dw treated as 1
// in range, 0 where clipped).
Tensor weight_grad_ste(const Tensor& upstream, const Tensor& w, double s, const QuantRange& r);

// LSQ heuristic 2*mean(|w|)/sqrt(q_p), with a 1e-3 floor for all-zero input.
double init_step_size(const Tensor& w, long q_p);

// 1/sqrt(num_elements * q_p), applied to the raw step-size gradient.
double grad_scale(std::size_t num_elements, long q_p);

// One learnable step size per weight tensor.
struct WeightQuantizer {
    double step_size = 0.0;
    int bits = 8;
    bool is_signed = true;
    bool initialized = false;

    QuantRange range() const { return qrange(bits, is_signed); }
};

// Per-site activation quantizer; step size initialized from the first batch.
struct ActQuantizer {
    double step_size = 0.0;
    int bits = 8;
    bool is_signed = true;
    bool initialized = false;

    QuantRange range() const { return qrange(bits, is_signed); }
};

// Records a fake-quantization node on the tape: forward per quantize_forward,
// backward routes STE gradients to the latent weight leaf and the (scaled)
// step-size gradient to the step-size leaf. The returned node's gradient is
// the loss gradient w.r.t. the quantized image Q(w,s).
NodeId fake_quantize(Tape& tape, NodeId w, NodeId s, const QuantRange& r, double gscale = 1.0);

}  // namespace squat
