// Experiment runner: train (mode x seed) grids, measure checkpoint sharpness,
// and compare runs against the LSQ baseline.
//
// Exit codes: 0 success (a recorded divergence is still success),
//             2 invalid config, 3 I/O error.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "squat/checkpoint.hpp"
#include "squat/experiment.hpp"
#include "squat/sharpness.hpp"

namespace fs = std::filesystem;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_override,
            const std::vector<std::string>& overrides) {
    nlohmann::json raw;
    {
        std::ifstream in(config_path);
        if (!in) {
            std::cerr << "error: cannot open config " << config_path << "\n";
            return 3;
        }
        try {
            in >> raw;
        } catch (const std::exception& e) {
            std::cerr << "error: invalid JSON in " << config_path << ": " << e.what() << "\n";
            return 2;
        }
    }
    try {
        for (const auto& ov : overrides) {
            auto eq = ov.find('=');
            if (eq == std::string::npos)
                throw squat::ConfigError("override \"" + ov + "\" is not key=value");
            squat::apply_override(raw, ov.substr(0, eq), ov.substr(eq + 1));
        }
        squat::ExperimentConfig cfg = squat::ExperimentConfig::from_json(raw);
        std::string out_dir = out_override.empty() ? cfg.out_dir : out_override;
        nlohmann::json summary = squat::run_experiment(cfg, out_dir);
        std::cout << summary.dump(2) << "\n";
        return 0;
    } catch (const squat::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int cmd_sharpness(const std::string& ckpt_path, const std::string& data_path,
                  std::vector<double> rhos, const std::string& out_path) {
    try {
        if (rhos.empty()) rhos = {0.01, 0.05};
        for (double r : rhos) {
            if (!(r > 0.0)) {
                std::cerr << "config error: rho must be > 0, got " << r << "\n";
                return 2;
            }
        }
        squat::Checkpoint ck = squat::load_checkpoint(ckpt_path);
        squat::Dataset ds = squat::load_csv(data_path);
        nlohmann::json reports = nlohmann::json::array();
        for (double r : rhos) {
            squat::SharpnessReport rep = squat::measure_sharpness(*ck.model, ds, r);
            rep.seed = ck.seed;
            rep.checkpoint_id = ckpt_path;
            reports.push_back(rep.to_json());
        }
        std::string out = out_path.empty() ? ckpt_path + ".sharpness.json" : out_path;
        std::ofstream of(out);
        if (!of) {
            std::cerr << "error: cannot write " << out << "\n";
            return 3;
        }
        of << reports.dump(2) << "\n";
        std::cout << reports.dump(2) << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out_csv) {
    try {
        auto rows = squat::compare_runs(dirs);
        std::string csv = squat::compare_csv(rows);
        std::cout << squat::compare_table(rows);
        std::string out = out_csv.empty() ? "comparison.csv" : out_csv;
        std::ofstream of(out);
        if (!of) {
            std::cerr << "error: cannot write " << out << "\n";
            return 3;
        }
        of << csv;
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sharpness- and quantization-aware training lab"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "execute an experiment config");
    std::string config_path, out_dir;
    std::vector<std::string> overrides;
    run->add_option("--config", config_path, "JSON experiment config")->required();
    run->add_option("--out", out_dir, "output directory (overrides config out_dir)");
    run->add_option("--override", overrides, "key=value config override (dotted paths)");

    auto* sharp = app.add_subcommand("sharpness", "measure checkpoint sharpness");
    std::string ckpt_path, data_path, sharp_out;
    std::vector<double> rhos;
    sharp->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    sharp->add_option("--data", data_path, "dataset CSV")->required();
    sharp->add_option("--rho", rhos, "ball radii (default 0.01 0.05)");
    sharp->add_option("--out", sharp_out, "report output path");

    auto* cmp = app.add_subcommand("compare", "delta table vs the LSQ baseline");
    std::vector<std::string> dirs;
    std::string cmp_out;
    cmp->add_option("dirs", dirs, "run directories containing summary.json")->required();
    cmp->add_option("--out", cmp_out, "CSV output path (default comparison.csv)");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return cmd_run(config_path, out_dir, overrides);
    if (sharp->parsed()) return cmd_sharpness(ckpt_path, data_path, rhos, sharp_out);
    if (cmp->parsed()) return cmd_compare(dirs, cmp_out);
    return 1;
}
