#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "squat/data.hpp"
#include "squat/model.hpp"
#include "squat/optimizer.hpp"
#include "squat/sam.hpp"

namespace squat {

// One JSONL line per evaluation event.
struct MetricsRecord {
    std::string run_id;
    std::string mode;
    int bits_w = 0;
    int bits_a = 0;
    double rho = 0.0;
    std::uint64_t seed = 0;
    int epoch = 0;
    std::int64_t step = 0;
    double train_loss = 0.0;
    double eval_loss = 0.0;
    double eval_acc = 0.0;
    double lr_w = 0.0;
    double lr_s = 0.0;
    std::string status = "ok";

    nlohmann::json to_json() const;
};

// Per-batch update rules. Weight-phase updates go through Adam, step-size
// updates through plain SGD descent; the two optimizers share no state.
class Trainer {
public:
    explicit Trainer(Model& model) : model_(model) {}

    double train_step_squat(const Batch& batch, double rho, double lr_w, double lr_s);
    double train_step_joint(const Batch& batch, double rho, double lr_w, double lr_s);
    double train_step_lsq(const Batch& batch, double lr_w, double lr_s);
    double train_step_fp(const Batch& batch, double lr_w);
    // Dispatch on the model's mode.
    double step(const Batch& batch, double rho, double lr_w, double lr_s);

    static constexpr double kStepSizeFloor = 1e-8;

private:
    void update_weights(const PerturbedGrads& g, double lr_w);
    void update_step_sizes(const PerturbedGrads& g, double lr_s);

    Model& model_;
    Adam opt_w_;
    Sgd opt_s_;
};

struct FitOptions {
    std::string run_id = "run";
    int epochs = 30;
    std::size_t batch_size = 32;
    double rho = 0.1;
    double lr_w = 1e-3;
    double lr_s = 1e-3;
    std::uint64_t seed = 1;
};

struct FitResult {
    std::vector<MetricsRecord> log;
    std::string status = "ok";  // "ok" or "diverged"
    double final_eval_acc = 0.0;
    double final_eval_loss = 0.0;
};

std::pair<double, double> evaluate(Model& model, const Dataset& ds,
                                   const std::vector<std::size_t>& indices);

// Epoch loop with cosine-annealed learning rates and one metrics record per
// epoch. A non-finite loss or parameter halts the run with status "diverged"
// and preserves the partial log.
FitResult fit(const FitOptions& opts, Model& model, const Dataset& ds);

}  // namespace squat
