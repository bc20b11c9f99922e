#include "squat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace squat {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts are unsupported");

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'C', 'K', 'P', 'T', '0', '1'};

std::string kind_str(ParamKind k) {
    switch (k) {
        case ParamKind::QuantWeight: return "quant_weight";
        case ParamKind::StepSize: return "step_size";
        case ParamKind::Other: return "other";
    }
    return "?";
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path, std::uint64_t seed,
                     std::int64_t step) {
    nlohmann::json header;
    header["version"] = Checkpoint::kVersion;
    header["topology"] = model.topology();
    header["mode"] = to_string(model.mode);
    header["seed"] = seed;
    header["step"] = step;
    nlohmann::json ptable = nlohmann::json::array();
    std::vector<double> payload;
    for (const auto& slot : model.params()) {
        nlohmann::json entry;
        entry["name"] = slot.name;
        entry["kind"] = kind_str(slot.kind);
        if (slot.tensor) {
            entry["shape"] = slot.tensor->shape;
            payload.insert(payload.end(), slot.tensor->data.begin(), slot.tensor->data.end());
        } else {
            entry["shape"] = nlohmann::json::array();
            payload.push_back(*slot.scalar);
        }
        ptable.push_back(std::move(entry));
    }
    header["params"] = std::move(ptable);

    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);
    nlohmann::json header = nlohmann::json::parse(hs);
    std::uint32_t version = header.at("version").get<std::uint32_t>();
    if (version != Checkpoint::kVersion)
        throw std::runtime_error("load_checkpoint: version " + std::to_string(version) +
                                 " unsupported (expected " +
                                 std::to_string(Checkpoint::kVersion) + ")");
    Checkpoint ck;
    ck.seed = header.at("seed").get<std::uint64_t>();
    ck.step = header.at("step").get<std::int64_t>();
    ck.id = path;
    TrainMode mode = train_mode_from_string(header.at("mode").get<std::string>());
    ck.model = build_from_topology(header.at("topology"), mode, ck.seed);

    auto slots = ck.model->params();
    const auto& ptable = header.at("params");
    if (ptable.size() != slots.size())
        throw std::runtime_error("load_checkpoint: parameter table has " +
                                 std::to_string(ptable.size()) + " entries, model expects " +
                                 std::to_string(slots.size()));
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& entry = ptable[i];
        if (entry.at("name").get<std::string>() != slots[i].name)
            throw std::runtime_error("load_checkpoint: parameter " + std::to_string(i) +
                                     " is \"" + entry.at("name").get<std::string>() +
                                     "\", model expects \"" + slots[i].name + "\"");
        std::size_t n = slots[i].size();
        std::vector<double> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
        if (slots[i].tensor)
            slots[i].tensor->data = std::move(buf);
        else
            *slots[i].scalar = buf[0];
    }
    // Re-arm lazily initialized activation quantizers.
    for (QuantLinear* lin : ck.model->quant_sites())
        if (lin->aq) lin->aq->initialized = lin->aq->step_size > 0.0;
    return ck;
}

}  // namespace squat
