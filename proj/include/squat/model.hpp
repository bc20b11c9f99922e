#pragma once

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "squat/data.hpp"
#include "squat/quantizer.hpp"
#include "squat/tape.hpp"
#include "squat/tensor.hpp"

namespace squat {

enum class TrainMode { FP, LSQ, Joint, SQuAT };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);
inline bool is_quantized(TrainMode m) { return m != TrainMode::FP; }

enum class ParamKind { QuantWeight, StepSize, Other };

// A trainable parameter: either a tensor or a single scalar (step sizes).
struct ParamSlot {
    std::string name;
    ParamKind kind = ParamKind::Other;
    Tensor* tensor = nullptr;
    double* scalar = nullptr;

    std::size_t size() const { return tensor ? tensor->size() : 1; }
};

// Linear layer with a fake-quantized weight and an optional input activation
// quantizer. Bias stays full precision.
struct QuantLinear {
    std::string name;
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
    WeightQuantizer wq;
    std::optional<ActQuantizer> aq;
    bool exempt = false;  // stays full precision even in quantized modes
};

struct PassConfig {
    // Per-quant-site additive offsets applied after fake quantization (SAM
    // epsilon, sharpness ascent). Order matches Model::quant_sites(). In FP
    // mode the offsets apply to the raw weights.
    const std::vector<std::vector<double>>* site_offsets = nullptr;
};

struct PassRefs {
    NodeId logits = -1;
    NodeId loss = -1;
    // Per quant site: the node carrying Q(w,s) (or the raw weight in FP mode);
    // its tape gradient is the loss gradient w.r.t. the quantized image.
    std::vector<NodeId> site_nodes;
    // Leaf node per trainable parameter, keyed by the parameter's storage.
    std::unordered_map<const void*, NodeId> leaf_of;
};

class Model {
public:
    virtual ~Model() = default;

    TrainMode mode = TrainMode::FP;
    int bits_w = 8;
    int bits_a = 8;
    bool use_grad_scale = true;

    virtual PassRefs forward(Tape& tape, const Batch& batch, const PassConfig& cfg = {}) = 0;
    virtual std::vector<ParamSlot> params() = 0;
    virtual std::vector<QuantLinear*> quant_sites() = 0;
    virtual nlohmann::json topology() const = 0;
    virtual std::unique_ptr<Model> clone() const = 0;

    std::size_t param_count();
    // Loss gradient per parameter, read off a tape after backward().
    std::vector<double> grad_of(const Tape& tape, const PassRefs& refs, const ParamSlot& slot) const;

protected:
    // Shared per-site forward: activation quantization, weight fake-quant,
    // matmul, bias. Appends the site node to refs.
    NodeId apply_quant_linear(Tape& tape, QuantLinear& lin, NodeId input, const PassConfig& cfg,
                              PassRefs& refs, std::size_t site_index);
    NodeId param_leaf(Tape& tape, Tensor& t, PassRefs& refs);
};

struct TinyTransformerConfig {
    int layers = 2;
    int d_model = 32;
    int heads = 2;
    int d_ff = 64;
    int features = 2;  // input feature count == token count
    int classes = 2;
};

std::unique_ptr<Model> build_mlp(const std::vector<int>& dims, int bits_w, int bits_a,
                                 TrainMode mode, std::uint64_t seed, bool exempt_first_last = false,
                                 bool use_grad_scale = true);
std::unique_ptr<Model> build_tiny_transformer(const TinyTransformerConfig& cfg, int bits_w,
                                              int bits_a, TrainMode mode, std::uint64_t seed,
                                              bool use_grad_scale = true);
// Rebuilds a model from a topology descriptor (checkpoint loading).
std::unique_ptr<Model> build_from_topology(const nlohmann::json& topo, TrainMode mode,
                                           std::uint64_t seed);

}  // namespace squat
