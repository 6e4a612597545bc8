#include "ear/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ear {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::kInput: return "input";
        case OpKind::kMatMul: return "matmul";
        case OpKind::kAdd: return "add";
        case OpKind::kMul: return "mul";
        case OpKind::kRelu: return "relu";
        case OpKind::kLayerNorm: return "layer-norm";
        case OpKind::kSoftmax: return "softmax";
        case OpKind::kEmbedding: return "embedding-lookup";
        case OpKind::kCrossEntropy: return "cross-entropy";
        case OpKind::kSumSquares: return "sum-squares";
        case OpKind::kSlice: return "slice";
        case OpKind::kConcat: return "concat";
        case OpKind::kScale: return "scale";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_error(OpKind op, const std::string& detail) {
    throw std::invalid_argument(std::string(op_name(op)) + ": " + detail);
}

void require_2d(OpKind op, const Tensor& t, const char* which) {
    if (t.rank() != 2) shape_error(op, std::string(which) + " must be 2-D, got " + t.shape_str());
}

// C (m x n) = op(A) * op(B), fixed loop order per transpose case
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* A,
          const double* B, double* C, bool accumulate) {
    if (!accumulate) std::fill(C, C + m * n, 0.0);
    if (!ta && !tb) {
        // A is m x k, B is k x n
        for (std::size_t i = 0; i < m; ++i) {
            const double* a = A + i * k;
            double* c = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a[p];
                if (av == 0.0) continue;
                const double* b = B + p * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
            }
        }
    } else if (!ta && tb) {
        // A is m x k, B is n x k
        for (std::size_t i = 0; i < m; ++i) {
            const double* a = A + i * k;
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* b = B + j * k;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p];
                c[j] += acc;
            }
        }
    } else if (ta && !tb) {
        // A is k x m, B is k x n
        for (std::size_t p = 0; p < k; ++p) {
            const double* a = A + p * m;
            const double* b = B + p * n;
            for (std::size_t i = 0; i < m; ++i) {
                const double av = a[i];
                if (av == 0.0) continue;
                double* c = C + i * n;
                for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
            }
        }
    } else {
        // A is k x m, B is n x k
        for (std::size_t i = 0; i < m; ++i) {
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* b = B + j * k;
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += A[p * m + i] * b[p];
                c[j] += acc;
            }
        }
    }
}

}  // namespace

NodeId Graph::push(Node n) {
    evaluated_ = false;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(Tensor value, std::string name) {
    Node n;
    n.op = OpKind::kInput;
    n.value = std::move(value);
    n.bound = true;
    n.name = std::move(name);
    NodeId id = push(std::move(n));
    if (!nodes_[id].name.empty()) named_inputs_[nodes_[id].name] = id;
    return id;
}

NodeId Graph::placeholder(std::vector<std::size_t> shape, std::string name) {
    Node n;
    n.op = OpKind::kInput;
    n.value = Tensor(std::move(shape));
    n.bound = false;
    n.name = std::move(name);
    NodeId id = push(std::move(n));
    named_inputs_[nodes_[id].name] = id;
    return id;
}

void Graph::bind(const std::string& name, Tensor value) {
    auto it = named_inputs_.find(name);
    if (it == named_inputs_.end())
        throw std::invalid_argument("graph: no input named '" + name + "'");
    Node& n = nodes_[it->second];
    if (!n.value.same_shape(value))
        throw std::invalid_argument("graph: input '" + name + "' expects shape " +
                                    n.value.shape_str() + ", got " + value.shape_str());
    n.value = std::move(value);
    n.bound = true;
    evaluated_ = false;
}

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
    const Tensor& ta = nodes_.at(a).value;
    const Tensor& tb = nodes_.at(b).value;
    require_2d(OpKind::kMatMul, ta, "left operand");
    require_2d(OpKind::kMatMul, tb, "right operand");
    std::size_t m = trans_a ? ta.shape()[1] : ta.shape()[0];
    std::size_t ka = trans_a ? ta.shape()[0] : ta.shape()[1];
    std::size_t kb = trans_b ? tb.shape()[1] : tb.shape()[0];
    std::size_t n = trans_b ? tb.shape()[0] : tb.shape()[1];
    if (ka != kb)
        shape_error(OpKind::kMatMul, "cannot multiply " + ta.shape_str() + " by " +
                                         tb.shape_str() +
                                         (trans_a || trans_b ? " (with transpose)" : ""));
    Node node;
    node.op = OpKind::kMatMul;
    node.parents = {a, b};
    node.trans_a = trans_a;
    node.trans_b = trans_b;
    node.value = Tensor({m, n});
    return push(std::move(node));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = nodes_.at(a).value;
    const Tensor& tb = nodes_.at(b).value;
    if (!ta.same_shape(tb))
        shape_error(OpKind::kAdd, "shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Node node;
    node.op = OpKind::kAdd;
    node.parents = {a, b};
    node.value = Tensor(ta.shape());
    return push(std::move(node));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& ta = nodes_.at(a).value;
    const Tensor& tb = nodes_.at(b).value;
    if (!ta.same_shape(tb))
        shape_error(OpKind::kMul, "shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Node node;
    node.op = OpKind::kMul;
    node.parents = {a, b};
    node.value = Tensor(ta.shape());
    return push(std::move(node));
}

NodeId Graph::relu(NodeId a) {
    Node node;
    node.op = OpKind::kRelu;
    node.parents = {a};
    node.value = Tensor(nodes_.at(a).value.shape());
    return push(std::move(node));
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, double eps) {
    const Tensor& tx = nodes_.at(x).value;
    const Tensor& tg = nodes_.at(gain).value;
    if (tx.rank() != 1 && tx.rank() != 2)
        shape_error(OpKind::kLayerNorm, "operand must be 1-D or 2-D, got " + tx.shape_str());
    std::size_t d = tx.rank() == 2 ? tx.shape()[1] : tx.shape()[0];
    if (tg.rank() != 1 || tg.shape()[0] != d)
        shape_error(OpKind::kLayerNorm, "gain shape " + tg.shape_str() +
                                            " does not match normalized width of " +
                                            tx.shape_str());
    if (eps <= 0.0) shape_error(OpKind::kLayerNorm, "epsilon must be positive");
    Node node;
    node.op = OpKind::kLayerNorm;
    node.parents = {x, gain};
    node.attr = eps;
    node.value = Tensor(tx.shape());
    return push(std::move(node));
}

NodeId Graph::softmax(NodeId a) {
    const Tensor& ta = nodes_.at(a).value;
    if (ta.rank() != 1 && ta.rank() != 2)
        shape_error(OpKind::kSoftmax, "operand must be 1-D or 2-D, got " + ta.shape_str());
    Node node;
    node.op = OpKind::kSoftmax;
    node.parents = {a};
    node.value = Tensor(ta.shape());
    return push(std::move(node));
}

NodeId Graph::embedding(NodeId table, std::vector<int> ids) {
    const Tensor& tt = nodes_.at(table).value;
    require_2d(OpKind::kEmbedding, tt, "table");
    if (ids.empty()) shape_error(OpKind::kEmbedding, "empty id list");
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= tt.shape()[0])
            shape_error(OpKind::kEmbedding, "id " + std::to_string(id) + " out of range for table " +
                                                tt.shape_str());
    Node node;
    node.op = OpKind::kEmbedding;
    node.parents = {table};
    node.value = Tensor({ids.size(), tt.shape()[1]});
    node.ids = std::move(ids);
    return push(std::move(node));
}

NodeId Graph::cross_entropy(NodeId probs, std::vector<int> targets) {
    const Tensor& tp = nodes_.at(probs).value;
    require_2d(OpKind::kCrossEntropy, tp, "probabilities");
    if (targets.size() != tp.shape()[0])
        shape_error(OpKind::kCrossEntropy,
                    "target count " + std::to_string(targets.size()) + " does not match rows of " +
                        tp.shape_str());
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= tp.shape()[1])
            shape_error(OpKind::kCrossEntropy,
                        "target " + std::to_string(t) + " out of range for " + tp.shape_str());
    Node node;
    node.op = OpKind::kCrossEntropy;
    node.parents = {probs};
    node.value = Tensor::scalar(0.0);
    node.ids = std::move(targets);
    return push(std::move(node));
}

NodeId Graph::sum_squares(NodeId a) {
    Node node;
    node.op = OpKind::kSumSquares;
    node.parents = {a};
    node.value = Tensor::scalar(0.0);
    return push(std::move(node));
}

NodeId Graph::slice(NodeId a, int axis, std::size_t begin, std::size_t end) {
    const Tensor& ta = nodes_.at(a).value;
    if (ta.rank() != 1 && ta.rank() != 2)
        shape_error(OpKind::kSlice, "operand must be 1-D or 2-D, got " + ta.shape_str());
    if (ta.rank() == 1 && axis != 0)
        shape_error(OpKind::kSlice, "axis 1 invalid for 1-D operand " + ta.shape_str());
    if (axis != 0 && axis != 1) shape_error(OpKind::kSlice, "axis must be 0 or 1");
    std::size_t dim = ta.shape()[static_cast<std::size_t>(axis)];
    if (begin >= end || end > dim)
        shape_error(OpKind::kSlice, "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                        ") out of bounds for " + ta.shape_str());
    Node node;
    node.op = OpKind::kSlice;
    node.parents = {a};
    node.axis = axis;
    node.begin = begin;
    node.end = end;
    std::vector<std::size_t> shape = ta.shape();
    shape[static_cast<std::size_t>(axis)] = end - begin;
    node.value = Tensor(shape);
    return push(std::move(node));
}

NodeId Graph::concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) shape_error(OpKind::kConcat, "no operands");
    if (axis != 0 && axis != 1) shape_error(OpKind::kConcat, "axis must be 0 or 1");
    const Tensor& first = nodes_.at(parts[0]).value;
    if (first.rank() != 1 && first.rank() != 2)
        shape_error(OpKind::kConcat, "operands must be 1-D or 2-D, got " + first.shape_str());
    if (first.rank() == 1 && axis != 0)
        shape_error(OpKind::kConcat, "axis 1 invalid for 1-D operands");
    std::size_t along = 0;
    for (NodeId p : parts) {
        const Tensor& t = nodes_.at(p).value;
        if (t.rank() != first.rank())
            shape_error(OpKind::kConcat,
                        "rank mismatch " + first.shape_str() + " vs " + t.shape_str());
        std::size_t other_axis = axis == 0 ? 1 : 0;
        if (t.rank() == 2 && t.shape()[other_axis] != first.shape()[other_axis])
            shape_error(OpKind::kConcat,
                        "shape mismatch " + first.shape_str() + " vs " + t.shape_str());
        along += t.shape()[static_cast<std::size_t>(axis)];
    }
    Node node;
    node.op = OpKind::kConcat;
    node.parents = parts;
    node.axis = axis;
    std::vector<std::size_t> shape = first.shape();
    shape[static_cast<std::size_t>(axis)] = along;
    node.value = Tensor(shape);
    return push(std::move(node));
}

NodeId Graph::scale(NodeId a, double factor) {
    Node node;
    node.op = OpKind::kScale;
    node.parents = {a};
    node.attr = factor;
    node.value = Tensor(nodes_.at(a).value.shape());
    return push(std::move(node));
}

void Graph::eval_node(NodeId id) {
    Node& n = nodes_[id];
    switch (n.op) {
        case OpKind::kInput:
            if (!n.bound)
                throw std::runtime_error("forward: input '" + n.name + "' is unbound");
            break;
        case OpKind::kMatMul: {
            const Tensor& a = nodes_[n.parents[0]].value;
            const Tensor& b = nodes_[n.parents[1]].value;
            std::size_t m = n.value.shape()[0];
            std::size_t c = n.value.shape()[1];
            std::size_t k = n.trans_a ? a.shape()[0] : a.shape()[1];
            gemm(n.trans_a, n.trans_b, m, c, k, a.data(), b.data(), n.value.data(), false);
            break;
        }
        case OpKind::kAdd: {
            const Tensor& a = nodes_[n.parents[0]].value;
            const Tensor& b = nodes_[n.parents[1]].value;
            for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = a[i] + b[i];
            break;
        }
        case OpKind::kMul: {
            const Tensor& a = nodes_[n.parents[0]].value;
            const Tensor& b = nodes_[n.parents[1]].value;
            for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = a[i] * b[i];
            break;
        }
        case OpKind::kRelu: {
            const Tensor& a = nodes_[n.parents[0]].value;
            for (std::size_t i = 0; i < n.value.size(); ++i)
                n.value[i] = a[i] > 0.0 ? a[i] : 0.0;
            break;
        }
        case OpKind::kLayerNorm: {
            const Tensor& x = nodes_[n.parents[0]].value;
            const Tensor& g = nodes_[n.parents[1]].value;
            std::size_t d = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
            std::size_t rows = x.size() / d;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = x.data() + r * d;
                double* yr = n.value.data() + r * d;
                double mean = 0.0;
                for (std::size_t j = 0; j < d; ++j) mean += xr[j];
                mean /= static_cast<double>(d);
                double var = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double diff = xr[j] - mean;
                    var += diff * diff;
                }
                var /= static_cast<double>(d);
                double inv = 1.0 / std::sqrt(var + n.attr);
                for (std::size_t j = 0; j < d; ++j) yr[j] = g[j] * (xr[j] - mean) * inv;
            }
            break;
        }
        case OpKind::kSoftmax: {
            const Tensor& x = nodes_[n.parents[0]].value;
            std::size_t d = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
            std::size_t rows = x.size() / d;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = x.data() + r * d;
                double* yr = n.value.data() + r * d;
                double mx = xr[0];
                for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
                double sum = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    yr[j] = std::exp(xr[j] - mx);
                    sum += yr[j];
                }
                for (std::size_t j = 0; j < d; ++j) yr[j] /= sum;
            }
            break;
        }
        case OpKind::kEmbedding: {
            const Tensor& t = nodes_[n.parents[0]].value;
            std::size_t d = t.shape()[1];
            for (std::size_t i = 0; i < n.ids.size(); ++i)
                std::copy(t.data() + static_cast<std::size_t>(n.ids[i]) * d,
                          t.data() + (static_cast<std::size_t>(n.ids[i]) + 1) * d,
                          n.value.data() + i * d);
            break;
        }
        case OpKind::kCrossEntropy: {
            const Tensor& p = nodes_[n.parents[0]].value;
            std::size_t cols = p.shape()[1];
            double loss = 0.0;
            for (std::size_t r = 0; r < n.ids.size(); ++r) {
                // domain guard: keeps the output finite for degenerate rows
                double pr = std::max(p[r * cols + static_cast<std::size_t>(n.ids[r])], 1e-300);
                loss -= std::log(pr);
            }
            n.value[0] = loss / static_cast<double>(n.ids.size());
            break;
        }
        case OpKind::kSumSquares: {
            const Tensor& a = nodes_[n.parents[0]].value;
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
            n.value[0] = s;
            break;
        }
        case OpKind::kSlice: {
            const Tensor& a = nodes_[n.parents[0]].value;
            if (n.axis == 0) {
                std::size_t w = a.rank() == 2 ? a.shape()[1] : 1;
                std::copy(a.data() + n.begin * w, a.data() + n.end * w, n.value.data());
            } else {
                std::size_t w = a.shape()[1];
                std::size_t out_w = n.end - n.begin;
                for (std::size_t r = 0; r < a.shape()[0]; ++r)
                    std::copy(a.data() + r * w + n.begin, a.data() + r * w + n.end,
                              n.value.data() + r * out_w);
            }
            break;
        }
        case OpKind::kConcat: {
            if (n.axis == 0) {
                std::size_t off = 0;
                for (NodeId p : n.parents) {
                    const Tensor& t = nodes_[p].value;
                    std::copy(t.data(), t.data() + t.size(), n.value.data() + off);
                    off += t.size();
                }
            } else {
                std::size_t rows = n.value.shape()[0];
                std::size_t out_w = n.value.shape()[1];
                std::size_t col = 0;
                for (NodeId p : n.parents) {
                    const Tensor& t = nodes_[p].value;
                    std::size_t w = t.shape()[1];
                    for (std::size_t r = 0; r < rows; ++r)
                        std::copy(t.data() + r * w, t.data() + (r + 1) * w,
                                  n.value.data() + r * out_w + col);
                    col += w;
                }
            }
            break;
        }
        case OpKind::kScale: {
            const Tensor& a = nodes_[n.parents[0]].value;
            for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = a[i] * n.attr;
            break;
        }
    }
}

const Tensor& Graph::forward(NodeId root, const std::map<std::string, Tensor>& inputs) {
    if (root >= nodes_.size()) throw std::invalid_argument("forward: unknown root node");
    for (const auto& [name, value] : inputs) bind(name, value);
    for (NodeId id = 0; id < nodes_.size(); ++id) eval_node(id);
    evaluated_ = true;
    return nodes_[root].value;
}

Tensor& Graph::grad_buffer(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

std::vector<std::uint8_t> Graph::mark_ancestors(NodeId root) const {
    std::vector<std::uint8_t> mark(nodes_.size(), 0);
    mark[root] = 1;
    for (NodeId id = root + 1; id-- > 0;) {
        if (!mark[id]) continue;
        for (NodeId p : nodes_[id].parents) mark[p] = 1;
        if (id == 0) break;
    }
    return mark;
}

void Graph::backward(NodeId root) {
    if (root >= nodes_.size()) throw std::invalid_argument("backward: unknown root node");
    if (!evaluated_) throw std::runtime_error("backward: graph has not been evaluated");
    const Tensor& rv = nodes_[root].value;
    if (rv.size() != 1)
        throw std::invalid_argument("backward: root must be scalar-valued, got " +
                                    rv.shape_str());
    for (Node& n : nodes_) n.grad = Tensor();
    std::vector<std::uint8_t> live = mark_ancestors(root);
    grad_buffer(root).fill(1.0);
    for (NodeId id = root + 1; id-- > 0;) {
        if (live[id] && !nodes_[id].grad.empty()) backprop_node(id);
        if (id == 0) break;
    }
}

void Graph::backprop_node(NodeId id) {
    Node& n = nodes_[id];
    const Tensor& g = n.grad;
    switch (n.op) {
        case OpKind::kInput:
            break;
        case OpKind::kMatMul: {
            const Tensor& a = nodes_[n.parents[0]].value;
            const Tensor& b = nodes_[n.parents[1]].value;
            Tensor& da = grad_buffer(n.parents[0]);
            Tensor& db = grad_buffer(n.parents[1]);
            std::size_t m = n.value.shape()[0];
            std::size_t c = n.value.shape()[1];
            std::size_t k = n.trans_a ? a.shape()[0] : a.shape()[1];
            // dC has shape m x c; propagate through the four transpose cases
            if (!n.trans_a)
                gemm(false, !n.trans_b, m, k, c, g.data(), b.data(), da.data(), true);
            else
                gemm(n.trans_b, true, k, m, c, b.data(), g.data(), da.data(), true);
            if (!n.trans_b)
                gemm(!n.trans_a, false, k, c, m, a.data(), g.data(), db.data(), true);
            else
                gemm(true, n.trans_a, c, k, m, g.data(), a.data(), db.data(), true);
            break;
        }
        case OpKind::kAdd: {
            Tensor& da = grad_buffer(n.parents[0]);
            Tensor& db = grad_buffer(n.parents[1]);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
            break;
        }
        case OpKind::kMul: {
            const Tensor& a = nodes_[n.parents[0]].value;
            const Tensor& b = nodes_[n.parents[1]].value;
            Tensor& da = grad_buffer(n.parents[0]);
            Tensor& db = grad_buffer(n.parents[1]);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b[i];
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a[i];
            break;
        }
        case OpKind::kRelu: {
            const Tensor& a = nodes_[n.parents[0]].value;
            Tensor& da = grad_buffer(n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (a[i] > 0.0) da[i] += g[i];
            break;
        }
        case OpKind::kLayerNorm: {
            const Tensor& x = nodes_[n.parents[0]].value;
            const Tensor& gain = nodes_[n.parents[1]].value;
            Tensor& dx = grad_buffer(n.parents[0]);
            Tensor& dgain = grad_buffer(n.parents[1]);
            std::size_t d = x.rank() == 2 ? x.shape()[1] : x.shape()[0];
            std::size_t rows = x.size() / d;
            std::vector<double> xhat(d), dxh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = x.data() + r * d;
                const double* gr = g.data() + r * d;
                double mean = 0.0;
                for (std::size_t j = 0; j < d; ++j) mean += xr[j];
                mean /= static_cast<double>(d);
                double var = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double diff = xr[j] - mean;
                    var += diff * diff;
                }
                var /= static_cast<double>(d);
                double inv = 1.0 / std::sqrt(var + n.attr);
                double mean_dxh = 0.0, mean_dxh_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    xhat[j] = (xr[j] - mean) * inv;
                    dxh[j] = gr[j] * gain[j];
                    dgain[j] += gr[j] * xhat[j];
                    mean_dxh += dxh[j];
                    mean_dxh_xhat += dxh[j] * xhat[j];
                }
                mean_dxh /= static_cast<double>(d);
                mean_dxh_xhat /= static_cast<double>(d);
                double* dxr = dx.data() + r * d;
                for (std::size_t j = 0; j < d; ++j)
                    dxr[j] += inv * (dxh[j] - mean_dxh - xhat[j] * mean_dxh_xhat);
            }
            break;
        }
        case OpKind::kSoftmax: {
            const Tensor& y = n.value;
            Tensor& dx = grad_buffer(n.parents[0]);
            std::size_t d = y.rank() == 2 ? y.shape()[1] : y.shape()[0];
            std::size_t rows = y.size() / d;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * d;
                const double* gr = g.data() + r * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
                double* dxr = dx.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) dxr[j] += yr[j] * (gr[j] - dot);
            }
            break;
        }
        case OpKind::kEmbedding: {
            Tensor& dt = grad_buffer(n.parents[0]);
            std::size_t d = dt.shape()[1];
            for (std::size_t i = 0; i < n.ids.size(); ++i) {
                double* row = dt.data() + static_cast<std::size_t>(n.ids[i]) * d;
                const double* gr = g.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += gr[j];
            }
            break;
        }
        case OpKind::kCrossEntropy: {
            const Tensor& p = nodes_[n.parents[0]].value;
            Tensor& dp = grad_buffer(n.parents[0]);
            std::size_t cols = p.shape()[1];
            double scale = g[0] / static_cast<double>(n.ids.size());
            for (std::size_t r = 0; r < n.ids.size(); ++r) {
                std::size_t idx = r * cols + static_cast<std::size_t>(n.ids[r]);
                dp[idx] -= scale / std::max(p[idx], 1e-300);
            }
            break;
        }
        case OpKind::kSumSquares: {
            const Tensor& a = nodes_[n.parents[0]].value;
            Tensor& da = grad_buffer(n.parents[0]);
            double two_g = 2.0 * g[0];
            for (std::size_t i = 0; i < a.size(); ++i) da[i] += two_g * a[i];
            break;
        }
        case OpKind::kSlice: {
            Tensor& da = grad_buffer(n.parents[0]);
            if (n.axis == 0) {
                std::size_t w = da.rank() == 2 ? da.shape()[1] : 1;
                for (std::size_t i = 0; i < g.size(); ++i) da[n.begin * w + i] += g[i];
            } else {
                std::size_t w = da.shape()[1];
                std::size_t out_w = n.end - n.begin;
                for (std::size_t r = 0; r < da.shape()[0]; ++r)
                    for (std::size_t j = 0; j < out_w; ++j)
                        da[r * w + n.begin + j] += g[r * out_w + j];
            }
            break;
        }
        case OpKind::kConcat: {
            if (n.axis == 0) {
                std::size_t off = 0;
                for (NodeId p : n.parents) {
                    Tensor& dp = grad_buffer(p);
                    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g[off + i];
                    off += dp.size();
                }
            } else {
                std::size_t rows = n.value.shape()[0];
                std::size_t out_w = n.value.shape()[1];
                std::size_t col = 0;
                for (NodeId p : n.parents) {
                    Tensor& dp = grad_buffer(p);
                    std::size_t w = dp.shape()[1];
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < w; ++j)
                            dp[r * w + j] += g[r * out_w + col + j];
                    col += w;
                }
            }
            break;
        }
        case OpKind::kScale: {
            Tensor& da = grad_buffer(n.parents[0]);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * n.attr;
            break;
        }
    }
}

Tensor Graph::grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) return Tensor::zeros(n.value.shape());
    return n.grad;
}

double Graph::grad_check(NodeId root, NodeId wrt, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
    if (nodes_.at(wrt).op != OpKind::kInput)
        throw std::invalid_argument("grad_check: wrt node must be an input");
    forward(root);
    backward(root);
    Tensor analytic = grad(wrt);
    Tensor& x = nodes_[wrt].value;
    double max_err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double saved = x[i];
        x[i] = saved + eps;
        double fp = forward(root)[0];
        x[i] = saved - eps;
        double fm = forward(root)[0];
        x[i] = saved;
        double numeric = (fp - fm) / (2.0 * eps);
        double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
    }
    forward(root);
    return max_err;
}

}  // namespace ear
