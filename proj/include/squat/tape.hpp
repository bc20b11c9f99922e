#pragma once

#include <functional>
#include <vector>

#include "squat/tensor.hpp"

namespace squat {

using NodeId = int;

// Reverse-mode autodiff over a recording tape. Single-threaded per tape;
// distinct tapes share no state. Ops append nodes in topological order, so
// backward() is a single reverse sweep.
class Tape {
public:
    using CustomForward = std::function<Tensor(const std::vector<Tensor>&)>;
    // Maps (upstream grad, input values) to one gradient per input.
    using CustomBackward =
        std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&)>;

    NodeId leaf(const Tensor& t);
    NodeId constant(Tensor t);

    NodeId add(NodeId a, NodeId b);  // same shape, or b broadcast over leading axes
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);  // elementwise, same shape
    NodeId scale(NodeId a, double c);
    NodeId add_offset(NodeId a, std::vector<double> offset);  // constant shift, identity backward

    NodeId matmul(NodeId a, NodeId b);  // [M,K]x[K,N] or [B,M,K]x[K,N]
    NodeId bmm(NodeId a, NodeId b);     // [N,M,K]x[N,K,P]
    NodeId transpose_last2(NodeId a);
    NodeId reshape(NodeId a, std::vector<std::size_t> shape);
    NodeId slice_last(NodeId a, std::size_t start, std::size_t len);
    NodeId concat_last(const std::vector<NodeId>& parts);

    NodeId relu(NodeId a);
    NodeId gelu(NodeId a);  // tanh approximation
    NodeId softmax(NodeId a);  // last axis
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5);
    NodeId mean_all(NodeId a);
    NodeId mean_axis1(NodeId a);  // [B,T,D] -> [B,D]
    NodeId l2_norm(NodeId a);
    NodeId cross_entropy_with_logits(NodeId logits, const std::vector<int>& labels);
    // out[b,j,:] = x[b,j] * w[j,:] + bias[j,:]; turns a feature vector into a
    // token sequence for the transformer front end.
    NodeId outer_embed(NodeId x, NodeId w, NodeId bias);

    // Straight-through registration: forward value from forward_fn, backward
    // uses backward_fn verbatim. A dry run at registration checks that
    // backward_fn produces one gradient per input with matching shapes.
    NodeId custom(const CustomForward& forward_fn, const CustomBackward& backward_fn,
                  const std::vector<NodeId>& inputs);

    void backward(NodeId loss);
    void reset();

    const Tensor& value(NodeId id) const;
    const std::vector<double>& grad(NodeId id) const;
    bool requires_grad(NodeId id) const;
    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool requires_grad = false;
        std::vector<NodeId> parents;
        std::function<void(Tape&, NodeId)> backward;
    };

    NodeId push(Tensor value, std::vector<NodeId> parents,
                std::function<void(Tape&, NodeId)> backward);
    void check(NodeId id) const;
    std::vector<double>& grad_buf(NodeId id);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

double gelu_tanh(double x);
double gelu_tanh_deriv(double x);

}  // namespace squat
