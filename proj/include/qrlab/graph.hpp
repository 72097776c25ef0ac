#pragma once

#include "qrlab/quantizer.hpp"
#include "qrlab/tensor.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qrlab {

using NodeId = int32_t;

enum class OpKind : uint8_t {
    Leaf,         // variable or constant
    Add, Sub, Neg, Mul, Smul, Scale,
    Matmul, Transpose, Reshape,
    Relu, Step, Abs, Sign, Sqrt, Recip,
    Sum, Mean, RowSum, RowBcast, ColSum, ColBcast, BcastScalar,
    Affine, Softmax, SoftmaxXent,
    Conv2d, Conv2dInputGrad, Conv2dKernelGrad, AvgPool2, AvgPool2Grad,
    QuantizeSte,
};

const char* op_name(OpKind k);

struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<NodeId> parents;
    std::vector<int64_t> shape;   // fixed at construction
    Tensor value;                 // populated by forward evaluation
    bool has_value = false;

    // Leaf bookkeeping
    bool is_variable = false;
    std::string name;

    // Op attributes
    double scalar_attr = 0.0;             // Scale factor
    std::optional<QuantScheme> scheme;    // QuantizeSte
    int pad = 0;                          // conv padding
};

// Gradients keyed by node id (variables or tracked intermediate nodes).
using GradientBundle = std::map<NodeId, Tensor>;

// Tape-style computation graph. Nodes are appended in topological order and
// never removed; gradient extension (grad_nodes) appends ordinary nodes, so
// the gradient of a gradient needs no extra machinery.
//
// Single-writer: construction and evaluation must not race. A fully built
// graph may be copied and the copies evaluated on separate threads.
class CompGraph {
public:
    NodeId variable(std::string name, std::vector<int64_t> shape);
    NodeId constant(Tensor v);
    NodeId constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId neg(NodeId a);
    NodeId mul(NodeId a, NodeId b);             // elementwise, same shape
    NodeId smul(NodeId tensor, NodeId scalar);  // tensor * scalar node
    NodeId scale(NodeId a, double c);           // tensor * compile-time constant
    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId reshape(NodeId a, std::vector<int64_t> new_shape);
    NodeId relu(NodeId a);
    NodeId step(NodeId a);  // x > 0 ? 1 : 0, zero gradient
    NodeId abs(NodeId a);
    NodeId sign(NodeId a);  // sign(0) = 0, zero gradient
    NodeId sqrt(NodeId a);
    NodeId recip(NodeId a);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId row_sum(NodeId a);                   // (N,C) -> (N)
    NodeId row_bcast(NodeId v, int64_t cols);   // (N)   -> (N,C)
    NodeId col_sum(NodeId a);                   // (N,C) -> (C)
    NodeId col_bcast(NodeId v, int64_t rows);   // (C)   -> (N,C)
    NodeId bcast_scalar(NodeId s, std::vector<int64_t> shape);
    NodeId affine(NodeId x, NodeId w, NodeId b);        // x@w + b per row
    NodeId softmax(NodeId logits);                      // rowwise on (N,C)
    NodeId softmax_xent(NodeId logits, NodeId onehot);  // mean CE, scalar
    NodeId conv2d(NodeId x, NodeId k, int pad);
    NodeId conv2d_input_grad(NodeId g, NodeId k, int pad, std::vector<int64_t> x_shape);
    NodeId conv2d_kernel_grad(NodeId x, NodeId g, int pad, std::vector<int64_t> k_shape);
    NodeId avg_pool2(NodeId a);
    NodeId avg_pool2_grad(NodeId g);
    NodeId quantize_ste(NodeId a, QuantScheme s);

    void bind(NodeId var, Tensor v);
    void bind(const std::map<std::string, Tensor>& by_name);

    // Recomputes node values 0..out in order and returns the output value.
    // Throws if a variable on the path is unbound or a value goes non-finite.
    const Tensor& forward(NodeId out);

    // Reverse-mode gradients of a scalar output w.r.t. the given nodes
    // (variables or intermediates). forward(out) must have been run with the
    // current bindings. seed scales all gradients linearly.
    GradientBundle backward(NodeId out, std::span<const NodeId> wrt, double seed = 1.0);

    // Symbolic reverse pass: appends nodes computing d(out)/d(wrt[i]) and
    // returns their ids. The appended nodes are differentiable themselves.
    std::vector<NodeId> grad_nodes(NodeId out, std::span<const NodeId> wrt);
    NodeId grad_as_node(NodeId out, NodeId wrt) {
        const NodeId w[1] = {wrt};
        return grad_nodes(out, w)[0];
    }

    const Tensor& value(NodeId id) const;
    const std::vector<int64_t>& shape_of(NodeId id) const { return node(id).shape; }
    size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_.at(static_cast<size_t>(id)); }

private:
    NodeId push(Node n);
    Node& mut(NodeId id) { return nodes_.at(static_cast<size_t>(id)); }
    void eval_node(NodeId id);

    std::vector<Node> nodes_;
};

}  // namespace qrlab
