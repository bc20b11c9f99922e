#include "squat/trainer.hpp"

#include <cmath>
#include <stdexcept>

namespace squat {

nlohmann::json MetricsRecord::to_json() const {
    return {{"run_id", run_id},   {"mode", mode},           {"bits_w", bits_w},
            {"bits_a", bits_a},   {"rho", rho},             {"seed", seed},
            {"epoch", epoch},     {"step", step},           {"train_loss", train_loss},
            {"eval_loss", eval_loss}, {"eval_acc", eval_acc}, {"lr_w", lr_w},
            {"lr_s", lr_s},       {"status", status}};
}

void Trainer::update_weights(const PerturbedGrads& g, double lr_w) {
    auto slots = model_.params();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto& slot = slots[i];
        if (slot.kind == ParamKind::StepSize) continue;
        opt_w_.update(slot.tensor, slot.tensor->data.data(), g.param_grads[i].data(),
                      slot.tensor->size(), lr_w);
    }
}

void Trainer::update_step_sizes(const PerturbedGrads& g, double lr_s) {
    auto slots = model_.params();
    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto& slot = slots[i];
        if (slot.kind != ParamKind::StepSize) continue;
        opt_s_.update(slot.scalar, slot.scalar, g.param_grads[i].data(), 1, lr_s);
        if (*slot.scalar < kStepSizeFloor) *slot.scalar = kStepSizeFloor;
    }
}

double Trainer::train_step_squat(const Batch& batch, double rho, double lr_w, double lr_s) {
    PerturbedGrads g1 = plain_grads(model_, batch);
    if (rho > 0.0 && !g1.site_grads.empty()) {
        Perturbation eps = compute_epsilon(g1.site_grads, rho);
        PerturbedGrads gw = perturbed_grads(model_, batch, eps);
        update_weights(gw, lr_w);
    } else {
        update_weights(g1, lr_w);
    }
    // fresh backward at (w_{t+1}, s_t); weights stay frozen in this phase
    PerturbedGrads g2 = plain_grads(model_, batch);
    update_step_sizes(g2, lr_s);
    return g1.loss;
}

double Trainer::train_step_joint(const Batch& batch, double rho, double lr_w, double lr_s) {
    PerturbedGrads g1 = plain_grads(model_, batch);
    if (rho > 0.0 && !g1.site_grads.empty()) {
        Perturbation eps = compute_epsilon(g1.site_grads, rho);
        PerturbedGrads gp = perturbed_grads(model_, batch, eps);
        update_weights(gp, lr_w);
        update_step_sizes(gp, lr_s);
    } else {
        update_weights(g1, lr_w);
        update_step_sizes(g1, lr_s);
    }
    return g1.loss;
}

double Trainer::train_step_lsq(const Batch& batch, double lr_w, double lr_s) {
    PerturbedGrads g1 = plain_grads(model_, batch);
    update_weights(g1, lr_w);
    update_step_sizes(g1, lr_s);
    return g1.loss;
}

double Trainer::train_step_fp(const Batch& batch, double lr_w) {
    PerturbedGrads g1 = plain_grads(model_, batch);
    update_weights(g1, lr_w);
    return g1.loss;
}

double Trainer::step(const Batch& batch, double rho, double lr_w, double lr_s) {
    switch (model_.mode) {
        case TrainMode::FP: return train_step_fp(batch, lr_w);
        case TrainMode::LSQ: return train_step_lsq(batch, lr_w, lr_s);
        case TrainMode::Joint: return train_step_joint(batch, rho, lr_w, lr_s);
        case TrainMode::SQuAT: return train_step_squat(batch, rho, lr_w, lr_s);
    }
    throw std::logic_error("unreachable train mode");
}

std::pair<double, double> evaluate(Model& model, const Dataset& ds,
                                   const std::vector<std::size_t>& indices) {
    if (indices.empty()) return {0.0, 0.0};
    Batch b = subset_batch(ds, indices, indices.size());
    Tape tape;
    PassRefs refs = model.forward(tape, b);
    const Tensor& logits = tape.value(refs.logits);
    std::size_t C = logits.shape.back();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < C; ++j)
            if (logits.data[i * C + j] > logits.data[i * C + best]) best = j;
        if (static_cast<int>(best) == b.y[i]) ++correct;
    }
    double loss = tape.value(refs.loss).data[0];
    return {loss, static_cast<double>(correct) / static_cast<double>(b.size())};
}

namespace {

bool params_finite(Model& model) {
    for (const auto& slot : model.params()) {
        if (slot.tensor) {
            for (double v : slot.tensor->data)
                if (!std::isfinite(v)) return false;
        } else if (!std::isfinite(*slot.scalar)) {
            return false;
        }
    }
    return true;
}

}  // namespace

FitResult fit(const FitOptions& opts, Model& model, const Dataset& ds) {
    FitResult result;
    Trainer trainer(model);
    std::int64_t nbatches =
        static_cast<std::int64_t>((ds.train_idx.size() + opts.batch_size - 1) / opts.batch_size);
    std::int64_t total_steps = static_cast<std::int64_t>(opts.epochs) * nbatches;
    std::int64_t gstep = 0;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t nb = 0;
        double lr_w = opts.lr_w, lr_s = opts.lr_s;
        bool diverged = false;
        for (const Batch& batch : train_batches(ds, opts.batch_size, opts.seed, epoch)) {
            lr_w = cosine_lr(gstep, total_steps, opts.lr_w);
            lr_s = cosine_lr(gstep, total_steps, opts.lr_s);
            double loss = trainer.step(batch, opts.rho, lr_w, lr_s);
            ++gstep;
            epoch_loss += loss;
            ++nb;
            if (!std::isfinite(loss) || !params_finite(model)) {
                diverged = true;
                break;
            }
        }
        MetricsRecord rec;
        rec.run_id = opts.run_id;
        rec.mode = to_string(model.mode);
        rec.bits_w = model.bits_w;
        rec.bits_a = model.bits_a;
        rec.rho = opts.rho;
        rec.seed = opts.seed;
        rec.epoch = epoch;
        rec.step = gstep;
        rec.train_loss = nb ? epoch_loss / static_cast<double>(nb) : 0.0;
        rec.lr_w = lr_w;
        rec.lr_s = lr_s;
        if (diverged) {
            rec.status = "diverged";
            result.log.push_back(rec);
            result.status = "diverged";
            return result;
        }
        auto [eloss, eacc] = evaluate(model, ds, ds.eval_idx);
        rec.eval_loss = eloss;
        rec.eval_acc = eacc;
        result.log.push_back(rec);
        result.final_eval_acc = eacc;
        result.final_eval_loss = eloss;
        if (!std::isfinite(eloss)) {
            result.log.back().status = "diverged";
            result.status = "diverged";
            return result;
        }
    }
    return result;
}

}  // namespace squat
