#pragma once

#include "qrlab/graph.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace qrlab {

enum class RegFamily { None, L1Grad, L2Grad, DqOrtho, DqTrace };

RegFamily reg_family_from_string(const std::string& s);
const char* reg_family_name(RegFamily f);

struct RegConfig {
    RegFamily family = RegFamily::None;
    double lambda_w = 0.0;
    double lambda_y = 0.0;

    void validate() const;
};

// lambda_w * sum_l ||d loss / d W_l||_1 + lambda_y * sum_l ||d loss / d y_l||_1,
// appended to the graph as differentiable nodes (double backpropagation).
NodeId l1_grad_penalty(CompGraph& g, NodeId loss, std::span<const NodeId> weights,
                       std::span<const NodeId> activations, const RegConfig& cfg);

// Same with the l2 norm in guarded square-root form sqrt(sum g^2 + eps^2).
NodeId l2_grad_penalty(CompGraph& g, NodeId loss, std::span<const NodeId> weights,
                       std::span<const NodeId> activations, const RegConfig& cfg);

// lambda * sum_l ||W_l^T W_l - I||_F^2 over 2D-reshaped weight matrices
// (conv kernels flattened to (out, in*kh*kw); 1D tensors such as biases are
// skipped). Orthogonality penalty on each layer's singular values.
NodeId dq_ortho_penalty(CompGraph& g, std::span<const NodeId> weights, double lambda);

// Softer trace variant: lambda * sum_l Tr(W_l^T W_l - I) = lambda * sum_l (||W_l||_F^2 - k).
NodeId dq_trace_penalty(CompGraph& g, std::span<const NodeId> weights, double lambda);

// Dispatch on cfg.family; RegFamily::None yields a constant zero node.
NodeId build_penalty(CompGraph& g, NodeId loss, std::span<const NodeId> weights,
                     std::span<const NodeId> activations, const RegConfig& cfg);

// ||W^T W - I||_F^2 computed two ways: directly, and via the singular values
// of W (sum of (sigma_i^2 - 1)^2, Jacobi eigenvalues of W^T W). Returned as
// (direct, via-singular-values) for comparison in tests.
std::pair<double, double> singular_value_identity_check(const Tensor& w);

}  // namespace qrlab
