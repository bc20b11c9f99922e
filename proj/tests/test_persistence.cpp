#include <doctest.h>

#include <stdexcept>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "squat/checkpoint.hpp"
#include "squat/data.hpp"
#include "squat/experiment.hpp"
#include "squat/model.hpp"
#include "squat/trainer.hpp"

using namespace squat;
namespace fs = std::filesystem;

namespace {

std::vector<double> flat_params(Model& m) {
    std::vector<double> out;
    for (const auto& slot : m.params()) {
        if (slot.tensor)
            out.insert(out.end(), slot.tensor->data.begin(), slot.tensor->data.end());
        else
            out.push_back(*slot.scalar);
    }
    return out;
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise exact") {
    Dataset ds = gen_two_moons(100, 0.1, 3);
    auto m = build_mlp({2, 8, 2}, 2, 8, TrainMode::SQuAT, 21);
    Trainer t(*m);
    Batch b = subset_batch(ds, ds.train_idx, 16);
    t.train_step_squat(b, 0.1, 1e-3, 1e-3);  // move off the init, arm act quantizers

    std::string path = "test_ckpt.bin";
    save_checkpoint(*m, path, 21, 7);
    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.seed == 21);
    CHECK(ck.step == 7);
    CHECK(ck.model->mode == TrainMode::SQuAT);
    CHECK(flat_params(*ck.model) == flat_params(*m));

    // loaded model produces bit-identical losses
    Tape t1, t2;
    double l1 = t1.value(m->forward(t1, b).loss).data[0];
    double l2 = t2.value(ck.model->forward(t2, b).loss).data[0];
    CHECK(l1 == l2);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects foreign files and future versions") {
    std::string path = "test_bad_ckpt.bin";
    {
        std::ofstream f(path, std::ios::binary);
        f << "definitely not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
    {
        std::ofstream f(path, std::ios::binary);
        f.write("SQCKPT01", 8);
        std::string hs = "{\"version\":99}";
        std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
        f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version 99"),
                         std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint("no_such_file.bin"), std::runtime_error);
}

namespace {

nlohmann::json minimal_config() {
    return nlohmann::json{
        {"run_id", "t"},
        {"modes", {"LSQ", "SQuAT"}},
        {"seeds", {1, 2}},
        {"model", {{"type", "mlp"}, {"dims", {2, 8, 2}}}},
        {"dataset", {{"type", "two_moons"}, {"n", 100}, {"noise", 0.1}, {"seed", 7}}},
        {"bits_w", 2},
    };
}

}  // namespace

TEST_CASE("config parsing and validation") {
    ExperimentConfig c = ExperimentConfig::from_json(minimal_config());
    CHECK(c.modes == std::vector<TrainMode>{TrainMode::LSQ, TrainMode::SQuAT});
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK(c.bits_w == 2);
    CHECK(c.bits_a == 8);
    CHECK(c.rho == 0.1);

    auto j = minimal_config();
    j["learning_rate"] = 0.1;  // unknown key
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

    j = minimal_config();
    j.erase("modes");
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

    j = minimal_config();
    j["modes"] = {"Bogus"};
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

    j = minimal_config();
    j["bits_w"] = 1;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

    j = minimal_config();
    j["modes"] = {"FP"};
    j["bits_w"] = 1;  // bits unused by FP-only runs
    CHECK_NOTHROW(ExperimentConfig::from_json(j));

    j = minimal_config();
    j["rho"] = -0.1;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

    j = minimal_config();
    j["lr_w"] = 0.0;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

    j = minimal_config();
    j["sharpness_rhos"] = {0.01, -0.05};
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("SQUAT_SEED overrides config seeds") {
    setenv("SQUAT_SEED", "99", 1);
    ExperimentConfig c = ExperimentConfig::from_json(minimal_config());
    unsetenv("SQUAT_SEED");
    CHECK(c.seeds == std::vector<std::uint64_t>{99});
}

TEST_CASE("override sets dotted keys with JSON value parsing") {
    auto j = minimal_config();
    apply_override(j, "dataset.n", "500");
    CHECK(j["dataset"]["n"] == 500);
    apply_override(j, "rho", "0.05");
    CHECK(j["rho"] == 0.05);
    apply_override(j, "run_id", "hello");  // not valid JSON -> kept as string
    CHECK(j["run_id"] == "hello");
    apply_override(j, "model.dims", "[2,4,2]");
    CHECK(j["model"]["dims"] == nlohmann::json({2, 4, 2}));
    CHECK_THROWS_AS(apply_override(j, "", "1"), ConfigError);
}

TEST_CASE("compare computes deltas against the LSQ baseline") {
    fs::path dir = "test_cmp_run";
    fs::create_directories(dir);
    nlohmann::json summary;
    summary["run_id"] = "r";
    summary["task"] = "two_moons";
    summary["bits_w"] = 2;
    summary["bits_a"] = 8;
    summary["modes"]["LSQ"] = {
        {"mean_eval_acc", 0.90},
        {"sharpness", {{"0.05", {{"mean", 0.04}}}}},
    };
    summary["modes"]["SQuAT"] = {
        {"mean_eval_acc", 0.92},
        {"sharpness", {{"0.05", {{"mean", 0.03}}}}},
    };
    {
        std::ofstream f(dir / "summary.json");
        f << summary.dump();
    }
    auto rows = compare_runs({dir.string()});
    REQUIRE(rows.size() == 4);
    double squat_acc_delta = 0.0, squat_sharp_delta = 0.0;
    for (const auto& r : rows) {
        CHECK(r.task == "two_moons");
        if (r.mode == "LSQ") CHECK(r.delta_vs_lsq == 0.0);
        if (r.mode == "SQuAT" && r.metric == "eval_acc") squat_acc_delta = r.delta_vs_lsq;
        if (r.mode == "SQuAT" && r.metric != "eval_acc") squat_sharp_delta = r.delta_vs_lsq;
    }
    CHECK(squat_acc_delta == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(squat_sharp_delta == doctest::Approx(-0.01).epsilon(1e-12));

    std::string csv = compare_csv(rows);
    CHECK(csv.rfind("task,mode,bits_w,bits_a,metric,value,delta_vs_lsq\n", 0) == 0);
    std::string table = compare_table(rows);
    CHECK(table.find("SQuAT") != std::string::npos);

    // missing LSQ baseline is an error
    summary["modes"].erase("LSQ");
    {
        std::ofstream f(dir / "summary.json");
        f << summary.dump();
    }
    CHECK_THROWS_AS(compare_runs({dir.string()}), std::runtime_error);
    fs::remove_all(dir);
    CHECK_THROWS_AS(compare_runs({"no_such_dir"}), std::runtime_error);
}

TEST_CASE("run_experiment writes metrics, checkpoints, and a summary") {
    auto j = minimal_config();
    j["epochs"] = 2;
    j["seeds"] = {1};
    j["sharpness_rhos"] = {0.05};
    ExperimentConfig c = ExperimentConfig::from_json(j);
    std::string dir = "test_exp_out";
    nlohmann::json summary = run_experiment(c, dir);
    CHECK(summary["modes"].contains("LSQ"));
    CHECK(summary["modes"].contains("SQuAT"));
    CHECK(fs::exists(fs::path(dir) / "summary.json"));
    CHECK(fs::exists(fs::path(dir) / "LSQ_s1" / "metrics.jsonl"));
    CHECK(fs::exists(fs::path(dir) / "LSQ_s1" / "checkpoint.bin"));
    CHECK(fs::exists(fs::path(dir) / "SQuAT_s1" / "checkpoint.bin"));
    CHECK(summary["modes"]["LSQ"].contains("sharpness"));
    // checkpoints load back
    Checkpoint ck = load_checkpoint((fs::path(dir) / "SQuAT_s1" / "checkpoint.bin").string());
    CHECK(ck.model->mode == TrainMode::SQuAT);
    // and compare consumes the real summary
    auto rows = compare_runs({dir});
    CHECK(!rows.empty());
    fs::remove_all(dir);
}
