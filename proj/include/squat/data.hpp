#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "squat/tensor.hpp"

namespace squat {

// Immutable after construction; shareable read-only across runs.
struct Dataset {
    Tensor features;  // [n, d]
    std::vector<int> labels;
    std::string name;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> eval_idx;

    std::size_t n() const { return features.shape[0]; }
    std::size_t dim() const { return features.shape[1]; }
    int num_classes() const;
};

struct Batch {
    Tensor x;  // [b, d]
    std::vector<int> y;
    std::size_t size() const { return y.size(); }
};

Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed);
Dataset gen_blobs(std::size_t n, int centers, double spread, std::uint64_t seed);

Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

// Per-epoch shuffle keyed by (seed, epoch); the final short batch is kept.
std::vector<Batch> batches(const Dataset& ds, const std::vector<std::size_t>& indices,
                           std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);
std::vector<Batch> train_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                 std::uint64_t epoch);
Batch subset_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                   std::size_t max_rows);

}  // namespace squat
