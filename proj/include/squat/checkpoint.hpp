#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "squat/model.hpp"

namespace squat {

// Versioned container: JSON header (topology, mode, seed, step, parameter
// table) followed by the raw little-endian IEEE-754 payload. Round-trips are
// bitwise exact for all f64 values.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::unique_ptr<Model> model;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    std::string id;
};

void save_checkpoint(Model& model, const std::string& path, std::uint64_t seed = 0,
                     std::int64_t step = 0);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace squat
