#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "squat/data.hpp"
#include "squat/model.hpp"
#include "squat/trainer.hpp"

namespace squat {

// Invalid run description; maps to exit code 2 at the CLI.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Declarative run description: modes x seeds over one model and dataset.
struct ExperimentConfig {
    std::string run_id = "run";
    std::vector<TrainMode> modes;
    std::vector<std::uint64_t> seeds;
    nlohmann::json model;    // {"type":"mlp","dims":[...]} | {"type":"tiny_transformer",...}
    nlohmann::json dataset;  // {"type":"two_moons"|"blobs"|"csv",...}
    int bits_w = 8;
    int bits_a = 8;
    double rho = 0.1;
    int epochs = 30;
    std::size_t batch_size = 32;
    double lr_w = 1e-3;
    double lr_s = 1e-3;
    bool grad_scale = true;
    bool exempt_first_last = false;
    std::vector<double> sharpness_rhos;
    std::string out_dir = "out";

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
};

// Sets a dotted-path key (e.g. "dataset.n") in a raw config object; the value
// is parsed as JSON when possible, kept as a string otherwise.
void apply_override(nlohmann::json& raw, const std::string& key, const std::string& value);

Dataset build_dataset(const nlohmann::json& spec);
std::unique_ptr<Model> build_model(const ExperimentConfig& cfg, TrainMode mode,
                                   std::uint64_t seed, const Dataset& ds);

// Executes every (mode x seed) cell: per-cell metrics.jsonl and checkpoint,
// then a summary.json with per-mode mean and std over seeds. Diverged runs
// are recorded, not fatal. Returns the summary.
nlohmann::json run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct CompareRow {
    std::string task;
    std::string mode;
    int bits_w = 0;
    int bits_a = 0;
    std::string metric;
    double value = 0.0;
    double delta_vs_lsq = 0.0;
};

// Per-task, per-mode deltas relative to the LSQ baseline, computed from the
// summary.json files found in the given run directories.
std::vector<CompareRow> compare_runs(const std::vector<std::string>& run_dirs);
std::string compare_csv(const std::vector<CompareRow>& rows);
std::string compare_table(const std::vector<CompareRow>& rows);

}  // namespace squat
