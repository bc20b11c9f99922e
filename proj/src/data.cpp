#include "squat/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "squat/rng.hpp"

namespace squat {

namespace {

constexpr double kPi = 3.14159265358979323846;

// 80/20 split after a seeded shuffle of row indices.
void assign_split(Dataset& ds, std::uint64_t seed) {
    std::size_t n = ds.n();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(Rng::splitmix64(seed) ^ 0x5155a17u);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    std::size_t ntrain = (n * 8) / 10;
    ds.train_idx.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ntrain));
    ds.eval_idx.assign(idx.begin() + static_cast<std::ptrdiff_t>(ntrain), idx.end());
}

}  // namespace

int Dataset::num_classes() const {
    int c = 0;
    for (int l : labels) c = std::max(c, l + 1);
    return c;
}

Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
    Dataset ds;
    ds.name = "two_moons";
    ds.features = Tensor::zeros({n, 2});
    ds.labels.resize(n);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        int cls = static_cast<int>(i % 2);
        double t = rng.uniform() * kPi;
        double x, y;
        if (cls == 0) {
            x = std::cos(t);
            y = std::sin(t);
        } else {
            x = 1.0 - std::cos(t);
            y = 0.5 - std::sin(t);
        }
        if (noise > 0.0) {
            x += noise * rng.normal();
            y += noise * rng.normal();
        }
        ds.features.data[i * 2] = x;
        ds.features.data[i * 2 + 1] = y;
        ds.labels[i] = cls;
    }
    assign_split(ds, seed);
    return ds;
}

Dataset gen_blobs(std::size_t n, int centers, double spread, std::uint64_t seed) {
    if (centers < 1) throw std::invalid_argument("gen_blobs: centers must be >= 1");
    Dataset ds;
    ds.name = "blobs";
    ds.features = Tensor::zeros({n, 2});
    ds.labels.resize(n);
    Rng rng(seed);
    const double radius = 5.0;
    for (std::size_t i = 0; i < n; ++i) {
        int cls = static_cast<int>(i % static_cast<std::size_t>(centers));
        double ang = 2.0 * kPi * cls / centers;
        double cx = radius * std::cos(ang);
        double cy = radius * std::sin(ang);
        ds.features.data[i * 2] = cx + spread * rng.normal();
        ds.features.data[i * 2 + 1] = cy + spread * rng.normal();
        ds.labels[i] = cls;
    }
    assign_split(ds, seed);
    return ds;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);
    std::size_t ncols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (ncols < 2 || line.substr(line.rfind(',') + 1) != "label")
        throw std::runtime_error("load_csv: expected header \"f0,...,label\", got \"" + line + "\"");
    std::size_t d = ncols - 1;
    std::vector<double> feats;
    std::vector<int> labels;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            std::size_t pos = 0;
            double v;
            try {
                v = std::stod(cell, &pos);
            } catch (const std::exception&) {
                throw std::runtime_error("load_csv: " + path + ":" + std::to_string(lineno) +
                                         ": bad value \"" + cell + "\"");
            }
            if (pos != cell.size() || !std::isfinite(v))
                throw std::runtime_error("load_csv: " + path + ":" + std::to_string(lineno) +
                                         ": non-finite or trailing junk in \"" + cell + "\"");
            row.push_back(v);
        }
        if (row.size() != ncols)
            throw std::runtime_error("load_csv: " + path + ":" + std::to_string(lineno) + ": " +
                                     std::to_string(row.size()) + " fields, expected " +
                                     std::to_string(ncols));
        double lv = row.back();
        int label = static_cast<int>(lv);
        if (static_cast<double>(label) != lv || label < 0)
            throw std::runtime_error("load_csv: " + path + ":" + std::to_string(lineno) +
                                     ": label must be a non-negative integer");
        feats.insert(feats.end(), row.begin(), row.end() - 1);
        labels.push_back(label);
    }
    if (labels.empty()) throw std::runtime_error("load_csv: no data rows in " + path);
    Dataset ds;
    ds.name = path;
    std::size_t n = labels.size();
    ds.features = Tensor({n, d}, std::move(feats));
    ds.labels = std::move(labels);
    assign_split(ds, 0xc5fULL + n);
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_csv: cannot open " + path);
    std::size_t d = ds.dim();
    for (std::size_t j = 0; j < d; ++j) out << "f" << j << ",";
    out << "label\n";
    char buf[64];
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.features.data[i * d + j]);
            out << buf << ",";
        }
        out << ds.labels[i] << "\n";
    }
}

std::vector<Batch> batches(const Dataset& ds, const std::vector<std::size_t>& indices,
                           std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be > 0");
    std::vector<std::size_t> order = indices;
    Rng rng(Rng::splitmix64(seed) * 0x100000001b3ULL + epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::size_t d = ds.dim();
    std::vector<Batch> out;
    for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
        std::size_t b = std::min(batch_size, order.size() - pos);
        Batch batch;
        batch.x = Tensor::zeros({b, d});
        batch.y.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            std::size_t row = order[pos + i];
            for (std::size_t j = 0; j < d; ++j)
                batch.x.data[i * d + j] = ds.features.data[row * d + j];
            batch.y[i] = ds.labels[row];
        }
        out.push_back(std::move(batch));
    }
    return out;
}

std::vector<Batch> train_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                 std::uint64_t epoch) {
    return batches(ds, ds.train_idx, batch_size, seed, epoch);
}

Batch subset_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                   std::size_t max_rows) {
    std::size_t b = std::min(max_rows, indices.size());
    std::size_t d = ds.dim();
    Batch batch;
    batch.x = Tensor::zeros({b, d});
    batch.y.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t row = indices[i];
        for (std::size_t j = 0; j < d; ++j)
            batch.x.data[i * d + j] = ds.features.data[row * d + j];
        batch.y[i] = ds.labels[row];
    }
    return batch;
}

}  // namespace squat
