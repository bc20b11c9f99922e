#include "squat/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "squat/checkpoint.hpp"
#include "squat/sharpness.hpp"

namespace fs = std::filesystem;

namespace squat {

namespace {

void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& known,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key()))
            throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
    }
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Short form for map keys and metric names (rho values are human-chosen).
std::string fmt_key(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    reject_unknown_keys(j, {"run_id", "modes", "seeds", "model", "dataset", "bits_w", "bits_a",
                            "rho", "epochs", "batch_size", "lr_w", "lr_s", "grad_scale",
                            "exempt_first_last", "sharpness_rhos", "out_dir"},
                        "config");
    ExperimentConfig c;
    try {
        c.run_id = j.value("run_id", std::string("run"));
        if (!j.contains("modes") || !j.at("modes").is_array() || j.at("modes").empty())
            throw ConfigError("config requires a non-empty \"modes\" array");
        for (const auto& m : j.at("modes"))
            c.modes.push_back(train_mode_from_string(m.get<std::string>()));
        if (!j.contains("seeds") || !j.at("seeds").is_array() || j.at("seeds").empty())
            throw ConfigError("config requires a non-empty \"seeds\" array");
        for (const auto& s : j.at("seeds")) c.seeds.push_back(s.get<std::uint64_t>());
        if (!j.contains("model") || !j.contains("dataset"))
            throw ConfigError("config requires \"model\" and \"dataset\" objects");
        c.model = j.at("model");
        c.dataset = j.at("dataset");
        c.bits_w = j.value("bits_w", 8);
        c.bits_a = j.value("bits_a", 8);
        c.rho = j.value("rho", 0.1);
        c.epochs = j.value("epochs", 30);
        c.batch_size = j.value("batch_size", std::size_t{32});
        c.lr_w = j.value("lr_w", 1e-3);
        c.lr_s = j.value("lr_s", 1e-3);
        c.grad_scale = j.value("grad_scale", true);
        c.exempt_first_last = j.value("exempt_first_last", false);
        if (j.contains("sharpness_rhos"))
            c.sharpness_rhos = j.at("sharpness_rhos").get<std::vector<double>>();
        c.out_dir = j.value("out_dir", std::string("out"));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    bool any_quant = std::any_of(c.modes.begin(), c.modes.end(), is_quantized);
    if (any_quant && (c.bits_w < 2 || c.bits_w > 8))
        throw ConfigError("bits_w must be in [2,8], got " + std::to_string(c.bits_w));
    if (any_quant && (c.bits_a < 2 || c.bits_a > 8))
        throw ConfigError("bits_a must be in [2,8], got " + std::to_string(c.bits_a));
    if (c.rho < 0.0) throw ConfigError("rho must be >= 0, got " + fmt(c.rho));
    if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(c.lr_w > 0.0) || !(c.lr_s > 0.0)) throw ConfigError("learning rates must be > 0");
    for (double r : c.sharpness_rhos)
        if (!(r > 0.0)) throw ConfigError("sharpness_rhos entries must be > 0");
    // SQUAT_SEED overrides config seeds (CI smoke runs).
    if (const char* env = std::getenv("SQUAT_SEED")) {
        c.seeds = {static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10))};
    }
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void apply_override(nlohmann::json& raw, const std::string& key, const std::string& value) {
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const std::exception&) {
        parsed = value;
    }
    nlohmann::json* cur = &raw;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("empty override key");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &((*cur)[parts[i]]);
    (*cur)[parts.back()] = parsed;
}

Dataset build_dataset(const nlohmann::json& spec) {
    std::string type = spec.at("type").get<std::string>();
    if (type == "two_moons") {
        reject_unknown_keys(spec, {"type", "n", "noise", "seed"}, "dataset");
        return gen_two_moons(spec.value("n", std::size_t{1000}), spec.value("noise", 0.1),
                             spec.value("seed", std::uint64_t{7}));
    }
    if (type == "blobs") {
        reject_unknown_keys(spec, {"type", "n", "centers", "spread", "seed"}, "dataset");
        return gen_blobs(spec.value("n", std::size_t{1000}), spec.value("centers", 3),
                         spec.value("spread", 0.5), spec.value("seed", std::uint64_t{7}));
    }
    if (type == "csv") {
        reject_unknown_keys(spec, {"type", "path"}, "dataset");
        return load_csv(spec.at("path").get<std::string>());
    }
    throw ConfigError("unknown dataset type \"" + type + "\"");
}

std::unique_ptr<Model> build_model(const ExperimentConfig& cfg, TrainMode mode,
                                   std::uint64_t seed, const Dataset& ds) {
    std::string type = cfg.model.at("type").get<std::string>();
    if (type == "mlp") {
        reject_unknown_keys(cfg.model, {"type", "dims"}, "model");
        return build_mlp(cfg.model.at("dims").get<std::vector<int>>(), cfg.bits_w, cfg.bits_a,
                         mode, seed, cfg.exempt_first_last, cfg.grad_scale);
    }
    if (type == "tiny_transformer") {
        reject_unknown_keys(cfg.model, {"type", "layers", "d_model", "heads", "d_ff", "classes"},
                            "model");
        TinyTransformerConfig tc;
        tc.layers = cfg.model.value("layers", 2);
        tc.d_model = cfg.model.value("d_model", 32);
        tc.heads = cfg.model.value("heads", 2);
        tc.d_ff = cfg.model.value("d_ff", 64);
        tc.features = static_cast<int>(ds.dim());
        tc.classes = std::max(2, ds.num_classes());
        return build_tiny_transformer(tc, cfg.bits_w, cfg.bits_a, mode, seed, cfg.grad_scale);
    }
    throw ConfigError("unknown model type \"" + type + "\"");
}

nlohmann::json run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    Dataset ds = build_dataset(cfg.dataset);
    fs::create_directories(out_dir);
    nlohmann::json summary;
    summary["run_id"] = cfg.run_id;
    summary["task"] = ds.name;
    summary["bits_w"] = cfg.bits_w;
    summary["bits_a"] = cfg.bits_a;
    summary["rho"] = cfg.rho;
    nlohmann::json modes_out = nlohmann::json::object();
    for (TrainMode mode : cfg.modes) {
        std::vector<double> accs, losses;
        std::vector<std::string> statuses;
        nlohmann::json cells = nlohmann::json::array();
        std::map<double, std::vector<double>> sharp_scores;
        for (std::uint64_t seed : cfg.seeds) {
            std::string cell = to_string(mode) + "_s" + std::to_string(seed);
            fs::path cell_dir = fs::path(out_dir) / cell;
            fs::create_directories(cell_dir);
            auto model = build_model(cfg, mode, seed, ds);
            FitOptions fo;
            fo.run_id = cfg.run_id + "/" + cell;
            fo.epochs = cfg.epochs;
            fo.batch_size = cfg.batch_size;
            fo.rho = cfg.rho;
            fo.lr_w = cfg.lr_w;
            fo.lr_s = cfg.lr_s;
            fo.seed = seed;
            FitResult res = fit(fo, *model, ds);
            {
                std::ofstream mf(cell_dir / "metrics.jsonl");
                if (!mf) throw std::runtime_error("cannot write " +
                                                  (cell_dir / "metrics.jsonl").string());
                for (const auto& rec : res.log) mf << rec.to_json().dump() << "\n";
            }
            std::string ckpt = (cell_dir / "checkpoint.bin").string();
            save_checkpoint(*model, ckpt, seed,
                            res.log.empty() ? 0 : res.log.back().step);
            nlohmann::json cj;
            cj["seed"] = seed;
            cj["status"] = res.status;
            cj["eval_acc"] = res.final_eval_acc;
            cj["eval_loss"] = res.final_eval_loss;
            cj["checkpoint"] = ckpt;
            cj["metrics"] = (cell_dir / "metrics.jsonl").string();
            if (res.status == "ok") {
                accs.push_back(res.final_eval_acc);
                losses.push_back(res.final_eval_loss);
                for (double r : cfg.sharpness_rhos) {
                    SharpnessReport rep = measure_sharpness(*model, ds, r);
                    rep.seed = seed;
                    rep.checkpoint_id = ckpt;
                    sharp_scores[r].push_back(rep.score);
                    cj["sharpness"][fmt_key(r)] = rep.to_json();
                }
            }
            statuses.push_back(res.status);
            cells.push_back(std::move(cj));
        }
        nlohmann::json mj;
        mj["mean_eval_acc"] = mean_of(accs);
        mj["std_eval_acc"] = std_of(accs);
        mj["mean_eval_loss"] = mean_of(losses);
        mj["statuses"] = statuses;
        mj["cells"] = std::move(cells);
        for (const auto& [r, scores] : sharp_scores) {
            mj["sharpness"][fmt_key(r)] = {{"mean", mean_of(scores)}, {"std", std_of(scores)},
                                       {"scores", scores}};
        }
        modes_out[to_string(mode)] = std::move(mj);
    }
    summary["modes"] = std::move(modes_out);
    std::ofstream sf(fs::path(out_dir) / "summary.json");
    if (!sf) throw std::runtime_error("cannot write summary.json in " + out_dir);
    sf << summary.dump(2) << "\n";
    return summary;
}

std::vector<CompareRow> compare_runs(const std::vector<std::string>& run_dirs) {
    std::vector<CompareRow> rows;
    for (const auto& dir : run_dirs) {
        fs::path sp = fs::path(dir) / "summary.json";
        std::ifstream in(sp);
        if (!in) throw std::runtime_error("compare: missing " + sp.string());
        nlohmann::json summary;
        in >> summary;
        std::string task = summary.at("task").get<std::string>();
        int bw = summary.value("bits_w", 0), ba = summary.value("bits_a", 0);
        const auto& modes = summary.at("modes");
        if (!modes.contains("LSQ"))
            throw std::runtime_error("compare: no LSQ baseline in " + sp.string());
        const auto& lsq = modes.at("LSQ");
        double lsq_acc = lsq.at("mean_eval_acc").get<double>();
        for (auto it = modes.begin(); it != modes.end(); ++it) {
            CompareRow row;
            row.task = task;
            row.mode = it.key();
            row.bits_w = bw;
            row.bits_a = ba;
            row.metric = "eval_acc";
            row.value = it.value().at("mean_eval_acc").get<double>();
            row.delta_vs_lsq = row.value - lsq_acc;
            rows.push_back(row);
            if (it.value().contains("sharpness")) {
                for (auto sit = it.value().at("sharpness").begin();
                     sit != it.value().at("sharpness").end(); ++sit) {
                    CompareRow srow = row;
                    srow.metric = "sharpness_rho" + sit.key();
                    srow.value = sit.value().at("mean").get<double>();
                    double base = 0.0;
                    if (lsq.contains("sharpness") && lsq.at("sharpness").contains(sit.key()))
                        base = lsq.at("sharpness").at(sit.key()).at("mean").get<double>();
                    srow.delta_vs_lsq = srow.value - base;
                    rows.push_back(srow);
                }
            }
        }
    }
    return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
    std::ostringstream os;
    os << "task,mode,bits_w,bits_a,metric,value,delta_vs_lsq\n";
    for (const auto& r : rows)
        os << r.task << "," << r.mode << "," << r.bits_w << "," << r.bits_a << "," << r.metric
           << "," << fmt(r.value) << "," << fmt(r.delta_vs_lsq) << "\n";
    return os.str();
}

std::string compare_table(const std::vector<CompareRow>& rows) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"task", "mode", "bits", "metric", "value", "delta_vs_lsq"});
    for (const auto& r : rows) {
        char v[32], d[32];
        std::snprintf(v, sizeof(v), "%.5f", r.value);
        std::snprintf(d, sizeof(d), "%+.5f", r.delta_vs_lsq);
        cells.push_back({r.task, r.mode, std::to_string(r.bits_w) + "/" + std::to_string(r.bits_a),
                         r.metric, v, d});
    }
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    std::ostringstream os;
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            os << row[i] << std::string(width[i] - row[i].size() + 2, ' ');
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace squat
