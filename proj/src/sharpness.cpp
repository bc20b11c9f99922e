#include "squat/sharpness.hpp"

#include <cmath>
#include <stdexcept>

#include "squat/rng.hpp"

namespace squat {

nlohmann::json SharpnessReport::to_json() const {
    return {{"rho", rho},       {"eta", eta},
            {"steps", steps},   {"loss_start", loss_start},
            {"loss_end", loss_end}, {"score", score},
            {"seed", seed},     {"checkpoint_id", checkpoint_id}};
}

void project_to_ball(std::vector<double>& w, const std::vector<double>& w0, double rho) {
    if (w.size() != w0.size())
        throw std::invalid_argument("project_to_ball: size mismatch " + std::to_string(w.size()) +
                                    " vs " + std::to_string(w0.size()));
    double ss = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        double d = w[i] - w0[i];
        ss += d * d;
    }
    double norm = std::sqrt(ss);
    if (norm <= rho || norm == 0.0) return;
    double k = rho / norm;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = w0[i] + k * (w[i] - w0[i]);
}

SharpnessReport sharpness_ascent(const std::vector<double>& w0, const LossGradFn& f, double rho,
                                 double eta, int steps, std::uint64_t seed) {
    if (!(rho > 0.0)) throw std::invalid_argument("sharpness_ascent: rho must be > 0");
    if (!(eta > 0.0)) throw std::invalid_argument("sharpness_ascent: eta must be > 0");
    if (steps < 1) throw std::invalid_argument("sharpness_ascent: steps must be >= 1");
    SharpnessReport rep;
    rep.rho = rho;
    rep.eta = eta;
    rep.steps = steps;
    rep.seed = seed;
    rep.loss_start = f(w0, nullptr);
    std::vector<double> w = w0;
    // Seeded kick off the start point so a zero gradient at W0 cannot pin the
    // ascent there; norm rho/1000 keeps it negligible against the ball radius.
    if (!w.empty()) {
        Rng rng(seed ^ 0x73686172706eULL);
        std::vector<double> dir(w.size());
        double ss = 0.0;
        for (double& d : dir) {
            d = rng.normal();
            ss += d * d;
        }
        double norm = std::sqrt(ss);
        if (norm > 0.0) {
            double k = rho * 1e-3 / norm;
            for (std::size_t i = 0; i < w.size(); ++i) w[i] += k * dir[i];
        }
    }
    std::vector<double> grad(w.size(), 0.0);
    for (int t = 0; t < steps; ++t) {
        double loss = f(w, &grad);
        if (!std::isfinite(loss))
            throw std::runtime_error("sharpness_ascent: non-finite loss during ascent");
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += eta * grad[i];
        project_to_ball(w, w0, rho);
    }
    rep.loss_end = f(w, nullptr);
    rep.score = rep.loss_end - rep.loss_start;
    return rep;
}

SharpnessReport measure_sharpness(Model& model, const Dataset& data, double rho, double eta,
                                  int steps, std::size_t max_rows, std::uint64_t seed) {
    Batch batch = subset_batch(data, data.eval_idx, max_rows);
    auto sites = model.quant_sites();
    // Starting point: the quantized images (raw weights in FP mode).
    std::vector<std::vector<double>> base;
    std::vector<std::size_t> sizes;
    std::size_t total = 0;
    for (QuantLinear* lin : sites) {
        bool quantize = is_quantized(model.mode) && !lin->exempt;
        Tensor img = quantize ? quantize_forward(lin->weight, lin->wq.step_size, lin->wq.range())
                              : lin->weight;
        sizes.push_back(img.size());
        total += img.size();
        base.push_back(std::move(img.data));
    }
    std::vector<double> w0;
    w0.reserve(total);
    for (const auto& b : base) w0.insert(w0.end(), b.begin(), b.end());

    LossGradFn f = [&](const std::vector<double>& w, std::vector<double>* grad_out) -> double {
        std::vector<std::vector<double>> offsets(sites.size());
        std::size_t off = 0;
        for (std::size_t si = 0; si < sites.size(); ++si) {
            offsets[si].resize(sizes[si]);
            for (std::size_t i = 0; i < sizes[si]; ++i)
                offsets[si][i] = w[off + i] - base[si][i];
            off += sizes[si];
        }
        Tape tape;
        PassConfig cfg;
        cfg.site_offsets = &offsets;
        PassRefs refs = model.forward(tape, batch, cfg);
        double loss = tape.value(refs.loss).data[0];
        if (grad_out) {
            tape.backward(refs.loss);
            std::size_t o = 0;
            for (std::size_t si = 0; si < sites.size(); ++si) {
                const auto& g = tape.grad(refs.site_nodes[si]);
                for (std::size_t i = 0; i < sizes[si]; ++i) (*grad_out)[o + i] = g[i];
                o += sizes[si];
            }
        }
        return loss;
    };
    return sharpness_ascent(w0, f, rho, eta, steps, seed);
}

SharpnessReport measure_sharpness(Model& model, const Dataset& data, double rho) {
    return measure_sharpness(model, data, rho, rho / 10.0, 20);
}

}  // namespace squat
