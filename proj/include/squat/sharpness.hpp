#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "squat/data.hpp"
#include "squat/model.hpp"

namespace squat {

struct SharpnessReport {
    double rho = 0.0;
    double eta = 0.0;
    int steps = 0;
    double loss_start = 0.0;
    double loss_end = 0.0;
    double score = 0.0;  // loss_end - loss_start
    std::uint64_t seed = 0;
    std::string checkpoint_id;

    nlohmann::json to_json() const;
};

// Projects W onto the sphere of radius rho around W0 when it lies outside
// the ball; identity inside.
void project_to_ball(std::vector<double>& w, const std::vector<double>& w0, double rho);

// Gradient ascent within a rho-ball on a flat parameter vector. The callback
// returns the loss and, when grad_out is non-null, fills the gradient. The
// ascent starts from a tiny seeded in-ball offset (norm rho/1000) so that a
// vanishing gradient at W0 does not pin the iterate there; loss_start is
// still evaluated at W0 exactly.
using LossGradFn = std::function<double(const std::vector<double>&, std::vector<double>*)>;
SharpnessReport sharpness_ascent(const std::vector<double>& w0, const LossGradFn& f, double rho,
                                 double eta, int steps, std::uint64_t seed = 0);

// Empirical epsilon-sharpness of a model: ascent on the quantized-weight
// image (raw weights in FP mode) with step sizes frozen, loss evaluated on a
// fixed subset of the eval split (at most max_rows rows). The model is left
// untouched.
SharpnessReport measure_sharpness(Model& model, const Dataset& data, double rho, double eta,
                                  int steps, std::size_t max_rows = 1024, std::uint64_t seed = 0);

// Defaults: eta = rho/10, 20 ascent steps.
SharpnessReport measure_sharpness(Model& model, const Dataset& data, double rho);

}  // namespace squat
