#include "squat/sam.hpp"

#include <cmath>
#include <stdexcept>

namespace squat {

Perturbation compute_epsilon(const std::vector<std::vector<double>>& site_grads, double rho) {
    if (site_grads.empty()) throw std::invalid_argument("compute_epsilon: empty gradient set");
    if (!(rho > 0.0)) throw std::invalid_argument("compute_epsilon: rho must be > 0");
    double ss = 0.0;
    for (const auto& g : site_grads)
        for (double v : g) ss += v * v;
    double norm = std::sqrt(ss);
    Perturbation p;
    p.rho = rho;
    p.global_norm = norm;
    p.buffers.reserve(site_grads.size());
    double k = norm < 1e-12 ? 0.0 : rho / norm;
    for (const auto& g : site_grads) {
        std::vector<double> buf(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] = k * g[i];
        p.buffers.push_back(std::move(buf));
    }
    return p;
}

namespace {

PerturbedGrads run_pass(Model& model, const Batch& batch,
                        const std::vector<std::vector<double>>* offsets) {
    Tape tape;
    PassConfig cfg;
    cfg.site_offsets = offsets;
    PassRefs refs = model.forward(tape, batch, cfg);
    tape.backward(refs.loss);
    PerturbedGrads out;
    out.loss = tape.value(refs.loss).data[0];
    for (const auto& slot : model.params())
        out.param_grads.push_back(model.grad_of(tape, refs, slot));
    for (NodeId site : refs.site_nodes) out.site_grads.push_back(tape.grad(site));
    return out;
}

}  // namespace

PerturbedGrads perturbed_grads(Model& model, const Batch& batch,
                               const Perturbation& perturbation) {
    return run_pass(model, batch, &perturbation.buffers);
}

PerturbedGrads plain_grads(Model& model, const Batch& batch) {
    return run_pass(model, batch, nullptr);
}

}  // namespace squat
