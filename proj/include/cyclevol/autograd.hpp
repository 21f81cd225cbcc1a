#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cyclevol/tensor.hpp"

// Minimal reverse-mode differentiation over Tensor-valued nodes. Graphs are
// built implicitly by the operations below and released with the last Var
// that references them. A node only records parents when at least one input
// requires a gradient, so inference through constant parameters allocates no
// backward state.
namespace cyclevol::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward;

    // Zero-initialized on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var leaf(Tensor value, bool requires_grad);

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const std::vector<int>& shape() const { return node_->value.shape(); }
    const NodePtr& node() const noexcept { return node_; }

    // Clears the accumulated gradient of this node only.
    void zero_grad();

private:
    NodePtr node_;
};

// Builds a result node. `fn` is kept only when some parent requires a gradient;
// it reads `self.grad` and accumulates into the parents' grad_buffer().
Var make_result(Tensor value, std::vector<Var> parents, BackwardFn fn);

// Accumulates d(root)/d(node) into every reachable node that requires a grad.
// `root` must be a single-element tensor.
void backward(const Var& root, double seed = 1.0);

Var detach(const Var& x);

// x: (Cin,H,W), weight: (Cout,Cin,k,k), bias: (Cout) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var relu(const Var& x);
Var concat_channels(std::span<const Var> parts);
Var upsample_nearest2x(const Var& x);

// logits: (2,H,W) -> foreground probability (1,H,W).
Var softmax_foreground(const Var& logits);

// sum_i weights[i] * terms[i] for single-element terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

}  // namespace cyclevol::ag
