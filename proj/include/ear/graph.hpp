#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ear/tensor.hpp"

namespace ear {

using NodeId = std::uint32_t;

enum class OpKind : std::uint8_t {
    kInput,
    kMatMul,
    kAdd,
    kMul,
    kRelu,
    kLayerNorm,
    kSoftmax,
    kEmbedding,
    kCrossEntropy,
    kSumSquares,
    kSlice,
    kConcat,
    kScale,
};

const char* op_name(OpKind k);

struct Node {
    OpKind op{OpKind::kInput};
    std::vector<NodeId> parents;
    Tensor value;
    Tensor grad;  // allocated lazily during backward(); same shape as value
    bool bound{false};

    // per-op attributes
    bool trans_a{false};
    bool trans_b{false};
    double attr{0.0};  // scale factor, or layer-norm epsilon
    int axis{0};
    std::size_t begin{0};
    std::size_t end{0};
    std::vector<int> ids;  // embedding indices / cross-entropy targets
    std::string name;      // input binding name (may be empty)
};

// Reverse-mode autodiff over a DAG of dense double tensors. Nodes are stored
// in insertion order, which is also the (fixed) topological evaluation order:
// parents must be created before children, so forward walks the vector left
// to right and backward walks it right to left. Fan-out gradients accumulate
// by addition, each op adding into its parents in parent order. Both passes
// are bitwise deterministic for identical inputs.
class Graph {
public:
    // leaf construction
    NodeId input(Tensor value, std::string name = "");
    NodeId placeholder(std::vector<std::size_t> shape, std::string name);

    // ops; shapes are validated at construction time
    NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId relu(NodeId a);
    // normalizes the last dimension of x, then multiplies elementwise by gain
    NodeId layer_norm(NodeId x, NodeId gain, double eps = 1e-5);
    NodeId softmax(NodeId a);
    NodeId embedding(NodeId table, std::vector<int> ids);
    // probs: rows of probabilities; returns mean over rows of -log probs[r][target[r]]
    NodeId cross_entropy(NodeId probs, std::vector<int> targets);
    NodeId sum_squares(NodeId a);
    NodeId slice(NodeId a, int axis, std::size_t begin, std::size_t end);
    NodeId concat(const std::vector<NodeId>& parts, int axis);
    NodeId scale(NodeId a, double factor);

    // Binds named inputs, then evaluates every node in insertion order.
    // Returns the value at root.
    const Tensor& forward(NodeId root, const std::map<std::string, Tensor>& inputs = {});

    // Gradient of a scalar-valued root w.r.t. every node that feeds it.
    // Requires forward() to have run on the current bindings.
    void backward(NodeId root);

    // Max over coordinates of wrt (an input node) of the relative error
    // between the analytic gradient of root and a central finite difference
    // with step eps. Leaves the graph re-evaluated at the unperturbed point.
    double grad_check(NodeId root, NodeId wrt, double eps);

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    // Zero tensor of the node's value shape if backward never touched it.
    Tensor grad(NodeId id) const;
    const Node& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }
    bool evaluated() const { return evaluated_; }

    void bind(const std::string& name, Tensor value);

private:
    NodeId push(Node n);
    void eval_node(NodeId id);
    void backprop_node(NodeId id);
    Tensor& grad_buffer(NodeId id);
    std::vector<std::uint8_t> mark_ancestors(NodeId root) const;

    std::vector<Node> nodes_;
    std::unordered_map<std::string, NodeId> named_inputs_;
    bool evaluated_{false};
};

}  // namespace ear
