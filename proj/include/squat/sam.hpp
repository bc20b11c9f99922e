#pragma once

#include <vector>

#include "squat/data.hpp"
#include "squat/model.hpp"

namespace squat {

// SAM perturbation on the quantized weight images. The l2 norm of the
// concatenated buffers equals rho whenever the global gradient norm is
// nonzero; the buffers are constants during the subsequent backward pass.
struct Perturbation {
    std::vector<std::vector<double>> buffers;  // per quant site
    double rho = 0.0;
    double global_norm = 0.0;  // norm of the gradients the perturbation was built from
};

// epsilon = rho * g / ||g||_2, with the norm taken globally across all site
// gradients. A norm below 1e-12 yields the zero perturbation.
Perturbation compute_epsilon(const std::vector<std::vector<double>>& site_grads, double rho);

struct PerturbedGrads {
    double loss = 0.0;
    // per-parameter gradients, aligned with Model::params()
    std::vector<std::vector<double>> param_grads;
    std::vector<std::vector<double>> site_grads;  // grad w.r.t. Q(w,s)+eps per site
};

// Forward with each quantized weight replaced by Q(w,s)+eps, one backward,
// gradients returned. Model state is untouched (offsets live on the tape).
PerturbedGrads perturbed_grads(Model& model, const Batch& batch, const Perturbation& perturbation);

// Unperturbed pass: loss plus gradients per parameter and per quant site.
PerturbedGrads plain_grads(Model& model, const Batch& batch);

}  // namespace squat
