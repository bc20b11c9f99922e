#include "squat/model.hpp"

#include <cmath>
#include <stdexcept>

#include "squat/rng.hpp"

namespace squat {

std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::FP: return "FP";
        case TrainMode::LSQ: return "LSQ";
        case TrainMode::Joint: return "Joint";
        case TrainMode::SQuAT: return "SQuAT";
    }
    return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "FP") return TrainMode::FP;
    if (s == "LSQ") return TrainMode::LSQ;
    if (s == "Joint") return TrainMode::Joint;
    if (s == "SQuAT") return TrainMode::SQuAT;
    throw std::invalid_argument("unknown train mode \"" + s + "\"");
}

std::size_t Model::param_count() {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.size();
    return n;
}

std::vector<double> Model::grad_of(const Tape& tape, const PassRefs& refs,
                                   const ParamSlot& slot) const {
    const void* key = slot.tensor ? static_cast<const void*>(slot.tensor)
                                  : static_cast<const void*>(slot.scalar);
    auto it = refs.leaf_of.find(key);
    if (it == refs.leaf_of.end()) return std::vector<double>(slot.size(), 0.0);
    return tape.grad(it->second);
}

NodeId Model::param_leaf(Tape& tape, Tensor& t, PassRefs& refs) {
    t.requires_grad = true;
    NodeId id = tape.leaf(t);
    refs.leaf_of[&t] = id;
    return id;
}

NodeId Model::apply_quant_linear(Tape& tape, QuantLinear& lin, NodeId input, const PassConfig& cfg,
                                 PassRefs& refs, std::size_t site_index) {
    bool quantize = is_quantized(mode) && !lin.exempt;
    NodeId x = input;
    if (quantize && lin.aq) {
        ActQuantizer& aq = *lin.aq;
        if (!aq.initialized) {
            aq.step_size = init_step_size(tape.value(input), aq.range().q_p);
            aq.initialized = true;
        }
        Tensor s = Tensor::scalar(aq.step_size);
        s.requires_grad = true;
        NodeId sleaf = tape.leaf(s);
        refs.leaf_of[&aq.step_size] = sleaf;
        double gs = use_grad_scale ? grad_scale(tape.value(input).size(), aq.range().q_p) : 1.0;
        x = fake_quantize(tape, x, sleaf, aq.range(), gs);
    }

    NodeId wnode;
    if (quantize) {
        NodeId wleaf = param_leaf(tape, lin.weight, refs);
        Tensor s = Tensor::scalar(lin.wq.step_size);
        s.requires_grad = true;
        NodeId sleaf = tape.leaf(s);
        refs.leaf_of[&lin.wq.step_size] = sleaf;
        double gs = use_grad_scale ? grad_scale(lin.weight.size(), lin.wq.range().q_p) : 1.0;
        wnode = fake_quantize(tape, wleaf, sleaf, lin.wq.range(), gs);
    } else {
        wnode = param_leaf(tape, lin.weight, refs);
    }
    refs.site_nodes.push_back(wnode);
    if (cfg.site_offsets) {
        if (site_index >= cfg.site_offsets->size())
            throw std::invalid_argument("site offset missing for quant site " +
                                        std::to_string(site_index));
        const auto& off = (*cfg.site_offsets)[site_index];
        if (off.size() != lin.weight.size())
            throw std::invalid_argument("site offset size " + std::to_string(off.size()) +
                                        " vs weight " + shape_str(lin.weight.shape));
        wnode = tape.add_offset(wnode, off);
    }
    NodeId y = tape.matmul(x, wnode);
    NodeId bleaf = param_leaf(tape, lin.bias, refs);
    return tape.add(y, bleaf);
}

namespace {

Tensor kaiming_uniform(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    t.requires_grad = true;
    return t;
}

QuantLinear make_quant_linear(const std::string& name, std::size_t in, std::size_t out, int bits_w,
                              int bits_a, bool signed_act, Rng& rng) {
    QuantLinear lin;
    lin.name = name;
    lin.weight = kaiming_uniform({in, out}, in, rng);
    lin.bias = Tensor::zeros({out});
    lin.bias.requires_grad = true;
    lin.wq.bits = bits_w;
    lin.wq.is_signed = true;
    lin.wq.step_size = init_step_size(lin.weight, lin.wq.range().q_p);
    lin.wq.initialized = true;
    ActQuantizer aq;
    aq.bits = bits_a;
    aq.is_signed = signed_act;
    lin.aq = aq;
    return lin;
}

void collect_linear_params(QuantLinear& lin, bool quantized, std::vector<ParamSlot>& out) {
    out.push_back({lin.name + ".weight", ParamKind::QuantWeight, &lin.weight, nullptr});
    out.push_back({lin.name + ".bias", ParamKind::Other, &lin.bias, nullptr});
    if (quantized && !lin.exempt) {
        out.push_back({lin.name + ".wq.step", ParamKind::StepSize, nullptr, &lin.wq.step_size});
        if (lin.aq)
            out.push_back({lin.name + ".aq.step", ParamKind::StepSize, nullptr,
                           &lin.aq->step_size});
    }
}

class MlpModel final : public Model {
public:
    MlpModel(std::vector<int> dims, int bw, int ba, TrainMode m, std::uint64_t seed,
             bool exempt_first_last, bool gscale)
        : dims_(std::move(dims)), seed_(seed), exempt_first_last_(exempt_first_last) {
        if (dims_.size() < 2) throw std::invalid_argument("build_mlp: need at least 2 dims");
        mode = m;
        bits_w = bw;
        bits_a = ba;
        use_grad_scale = gscale;
        if (is_quantized(m)) {
            qrange(bw, true);  // validate bit-widths up front
            qrange(ba, true);
        }
        Rng rng(Rng::splitmix64(seed) ^ 0x6d6c70ULL);
        for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
            bool first = i == 0;
            bool last = i + 2 == dims_.size();
            QuantLinear lin = make_quant_linear("layer" + std::to_string(i),
                                                static_cast<std::size_t>(dims_[i]),
                                                static_cast<std::size_t>(dims_[i + 1]), bw, ba,
                                                /*signed_act=*/first, rng);
            lin.exempt = exempt_first_last && (first || last);
            layers_.push_back(std::move(lin));
        }
    }

    PassRefs forward(Tape& tape, const Batch& batch, const PassConfig& cfg) override {
        PassRefs refs;
        NodeId h = tape.constant(batch.x);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = apply_quant_linear(tape, layers_[i], h, cfg, refs, i);
            if (i + 1 < layers_.size()) h = tape.relu(h);
        }
        refs.logits = h;
        refs.loss = tape.cross_entropy_with_logits(h, batch.y);
        return refs;
    }

    std::vector<ParamSlot> params() override {
        std::vector<ParamSlot> out;
        for (auto& lin : layers_) collect_linear_params(lin, is_quantized(mode), out);
        return out;
    }

    std::vector<QuantLinear*> quant_sites() override {
        std::vector<QuantLinear*> out;
        for (auto& lin : layers_) out.push_back(&lin);
        return out;
    }

    nlohmann::json topology() const override {
        return {{"type", "mlp"},          {"dims", dims_},
                {"bits_w", bits_w},       {"bits_a", bits_a},
                {"exempt_first_last", exempt_first_last_}, {"grad_scale", use_grad_scale}};
    }

    std::unique_ptr<Model> clone() const override { return std::make_unique<MlpModel>(*this); }

private:
    std::vector<int> dims_;
    std::uint64_t seed_;
    bool exempt_first_last_;
    std::vector<QuantLinear> layers_;
};

struct EncoderLayer {
    QuantLinear wq, wk, wv, wo, ff1, ff2;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

class TinyTransformerModel final : public Model {
public:
    TinyTransformerModel(TinyTransformerConfig cfg, int bw, int ba, TrainMode m, std::uint64_t seed,
                         bool gscale)
        : cfg_(cfg), seed_(seed) {
        if (cfg.d_model % cfg.heads != 0)
            throw std::invalid_argument("tiny_transformer: d_model " + std::to_string(cfg.d_model) +
                                        " not divisible by heads " + std::to_string(cfg.heads));
        mode = m;
        bits_w = bw;
        bits_a = ba;
        use_grad_scale = gscale;
        if (is_quantized(m)) {
            qrange(bw, true);
            qrange(ba, true);
        }
        Rng rng(Rng::splitmix64(seed) ^ 0x747261ULL);
        std::size_t F = static_cast<std::size_t>(cfg.features);
        std::size_t D = static_cast<std::size_t>(cfg.d_model);
        std::size_t Dff = static_cast<std::size_t>(cfg.d_ff);
        emb_w_ = kaiming_uniform({F, D}, 1, rng);
        emb_b_ = Tensor::zeros({F, D});
        emb_b_.requires_grad = true;
        for (int l = 0; l < cfg.layers; ++l) {
            std::string p = "enc" + std::to_string(l) + ".";
            EncoderLayer el;
            el.wq = make_quant_linear(p + "q", D, D, bw, ba, true, rng);
            el.wk = make_quant_linear(p + "k", D, D, bw, ba, true, rng);
            el.wv = make_quant_linear(p + "v", D, D, bw, ba, true, rng);
            el.wo = make_quant_linear(p + "o", D, D, bw, ba, true, rng);
            el.ff1 = make_quant_linear(p + "ff1", D, Dff, bw, ba, true, rng);
            el.ff2 = make_quant_linear(p + "ff2", Dff, D, bw, ba, true, rng);
            el.ln1_g = Tensor({D}, std::vector<double>(D, 1.0));
            el.ln1_b = Tensor::zeros({D});
            el.ln2_g = Tensor({D}, std::vector<double>(D, 1.0));
            el.ln2_b = Tensor::zeros({D});
            el.ln1_g.requires_grad = el.ln1_b.requires_grad = true;
            el.ln2_g.requires_grad = el.ln2_b.requires_grad = true;
            layers_.push_back(std::move(el));
        }
        lnf_g_ = Tensor({D}, std::vector<double>(D, 1.0));
        lnf_b_ = Tensor::zeros({D});
        lnf_g_.requires_grad = lnf_b_.requires_grad = true;
        head_w_ = kaiming_uniform({D, static_cast<std::size_t>(cfg.classes)}, D, rng);
        head_b_ = Tensor::zeros({static_cast<std::size_t>(cfg.classes)});
        head_b_.requires_grad = true;
    }

    PassRefs forward(Tape& tape, const Batch& batch, const PassConfig& cfg) override {
        PassRefs refs;
        std::size_t D = static_cast<std::size_t>(cfg_.d_model);
        std::size_t H = static_cast<std::size_t>(cfg_.heads);
        std::size_t hd = D / H;
        NodeId x = tape.constant(batch.x);
        NodeId h = tape.outer_embed(x, param_leaf(tape, emb_w_, refs),
                                    param_leaf(tape, emb_b_, refs));
        std::size_t site = 0;
        for (auto& el : layers_) {
            NodeId a = tape.layer_norm(h, param_leaf(tape, el.ln1_g, refs),
                                       param_leaf(tape, el.ln1_b, refs));
            NodeId q = apply_quant_linear(tape, el.wq, a, cfg, refs, site++);
            NodeId k = apply_quant_linear(tape, el.wk, a, cfg, refs, site++);
            NodeId v = apply_quant_linear(tape, el.wv, a, cfg, refs, site++);
            std::vector<NodeId> ctx_heads;
            for (std::size_t hh = 0; hh < H; ++hh) {
                NodeId qh = tape.slice_last(q, hh * hd, hd);
                NodeId kh = tape.slice_last(k, hh * hd, hd);
                NodeId vh = tape.slice_last(v, hh * hd, hd);
                NodeId scores = tape.scale(tape.bmm(qh, tape.transpose_last2(kh)),
                                           1.0 / std::sqrt(static_cast<double>(hd)));
                NodeId att = tape.softmax(scores);
                ctx_heads.push_back(tape.bmm(att, vh));
            }
            NodeId ctx = tape.concat_last(ctx_heads);
            NodeId o = apply_quant_linear(tape, el.wo, ctx, cfg, refs, site++);
            h = tape.add(h, o);
            NodeId a2 = tape.layer_norm(h, param_leaf(tape, el.ln2_g, refs),
                                        param_leaf(tape, el.ln2_b, refs));
            NodeId f = apply_quant_linear(tape, el.ff1, a2, cfg, refs, site++);
            f = tape.gelu(f);
            f = apply_quant_linear(tape, el.ff2, f, cfg, refs, site++);
            h = tape.add(h, f);
        }
        NodeId hn = tape.layer_norm(h, param_leaf(tape, lnf_g_, refs),
                                    param_leaf(tape, lnf_b_, refs));
        NodeId pooled = tape.mean_axis1(hn);
        NodeId logits = tape.add(tape.matmul(pooled, param_leaf(tape, head_w_, refs)),
                                 param_leaf(tape, head_b_, refs));
        refs.logits = logits;
        refs.loss = tape.cross_entropy_with_logits(logits, batch.y);
        return refs;
    }

    std::vector<ParamSlot> params() override {
        std::vector<ParamSlot> out;
        out.push_back({"emb.weight", ParamKind::Other, &emb_w_, nullptr});
        out.push_back({"emb.bias", ParamKind::Other, &emb_b_, nullptr});
        bool q = is_quantized(mode);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto& el = layers_[l];
            std::string p = "enc" + std::to_string(l) + ".";
            collect_linear_params(el.wq, q, out);
            collect_linear_params(el.wk, q, out);
            collect_linear_params(el.wv, q, out);
            collect_linear_params(el.wo, q, out);
            collect_linear_params(el.ff1, q, out);
            collect_linear_params(el.ff2, q, out);
            out.push_back({p + "ln1.gamma", ParamKind::Other, &el.ln1_g, nullptr});
            out.push_back({p + "ln1.beta", ParamKind::Other, &el.ln1_b, nullptr});
            out.push_back({p + "ln2.gamma", ParamKind::Other, &el.ln2_g, nullptr});
            out.push_back({p + "ln2.beta", ParamKind::Other, &el.ln2_b, nullptr});
        }
        out.push_back({"lnf.gamma", ParamKind::Other, &lnf_g_, nullptr});
        out.push_back({"lnf.beta", ParamKind::Other, &lnf_b_, nullptr});
        out.push_back({"head.weight", ParamKind::Other, &head_w_, nullptr});
        out.push_back({"head.bias", ParamKind::Other, &head_b_, nullptr});
        return out;
    }

    std::vector<QuantLinear*> quant_sites() override {
        std::vector<QuantLinear*> out;
        for (auto& el : layers_) {
            out.push_back(&el.wq);
            out.push_back(&el.wk);
            out.push_back(&el.wv);
            out.push_back(&el.wo);
            out.push_back(&el.ff1);
            out.push_back(&el.ff2);
        }
        return out;
    }

    nlohmann::json topology() const override {
        return {{"type", "tiny_transformer"},
                {"layers", cfg_.layers},
                {"d_model", cfg_.d_model},
                {"heads", cfg_.heads},
                {"d_ff", cfg_.d_ff},
                {"features", cfg_.features},
                {"classes", cfg_.classes},
                {"bits_w", bits_w},
                {"bits_a", bits_a},
                {"grad_scale", use_grad_scale}};
    }

    std::unique_ptr<Model> clone() const override {
        return std::make_unique<TinyTransformerModel>(*this);
    }

private:
    TinyTransformerConfig cfg_;
    std::uint64_t seed_;
    Tensor emb_w_, emb_b_;
    std::vector<EncoderLayer> layers_;
    Tensor lnf_g_, lnf_b_, head_w_, head_b_;
};

}  // namespace

std::unique_ptr<Model> build_mlp(const std::vector<int>& dims, int bits_w, int bits_a,
                                 TrainMode mode, std::uint64_t seed, bool exempt_first_last,
                                 bool use_grad_scale) {
    return std::make_unique<MlpModel>(dims, bits_w, bits_a, mode, seed, exempt_first_last,
                                      use_grad_scale);
}

std::unique_ptr<Model> build_tiny_transformer(const TinyTransformerConfig& cfg, int bits_w,
                                              int bits_a, TrainMode mode, std::uint64_t seed,
                                              bool use_grad_scale) {
    return std::make_unique<TinyTransformerModel>(cfg, bits_w, bits_a, mode, seed, use_grad_scale);
}

std::unique_ptr<Model> build_from_topology(const nlohmann::json& topo, TrainMode mode,
                                           std::uint64_t seed) {
    std::string type = topo.at("type").get<std::string>();
    if (type == "mlp") {
        return build_mlp(topo.at("dims").get<std::vector<int>>(), topo.at("bits_w").get<int>(),
                         topo.at("bits_a").get<int>(), mode, seed,
                         topo.value("exempt_first_last", false), topo.value("grad_scale", true));
    }
    if (type == "tiny_transformer") {
        TinyTransformerConfig cfg;
        cfg.layers = topo.at("layers").get<int>();
        cfg.d_model = topo.at("d_model").get<int>();
        cfg.heads = topo.at("heads").get<int>();
        cfg.d_ff = topo.at("d_ff").get<int>();
        cfg.features = topo.at("features").get<int>();
        cfg.classes = topo.at("classes").get<int>();
        return build_tiny_transformer(cfg, topo.at("bits_w").get<int>(),
                                      topo.at("bits_a").get<int>(), mode, seed,
                                      topo.value("grad_scale", true));
    }
    throw std::invalid_argument("unknown model type \"" + type + "\"");
}

}  // namespace squat
