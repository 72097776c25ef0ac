#include "qrlab/regularizers.hpp"

#include "qrlab/eig.hpp"

#include <cmath>
#include <stdexcept>

namespace qrlab {

RegFamily reg_family_from_string(const std::string& s) {
    if (s == "none") return RegFamily::None;
    if (s == "l1-grad") return RegFamily::L1Grad;
    if (s == "l2-grad") return RegFamily::L2Grad;
    if (s == "dq-ortho") return RegFamily::DqOrtho;
    if (s == "dq-trace") return RegFamily::DqTrace;
    throw std::invalid_argument("unknown regularizer family: " + s);
}

const char* reg_family_name(RegFamily f) {
    switch (f) {
        case RegFamily::None: return "none";
        case RegFamily::L1Grad: return "l1-grad";
        case RegFamily::L2Grad: return "l2-grad";
        case RegFamily::DqOrtho: return "dq-ortho";
        case RegFamily::DqTrace: return "dq-trace";
    }
    return "?";
}

void RegConfig::validate() const {
    if (!(lambda_w >= 0.0) || !std::isfinite(lambda_w) || !(lambda_y >= 0.0) ||
        !std::isfinite(lambda_y))
        throw std::invalid_argument("RegConfig: lambdas must be finite and >= 0");
}

namespace {

// penalty = lambda_w * sum_W norm(grad_W) + lambda_y * sum_y norm(grad_y)
NodeId grad_norm_penalty(CompGraph& g, NodeId loss, std::span<const NodeId> weights,
                         std::span<const NodeId> activations, const RegConfig& cfg, bool l2) {
    cfg.validate();
    std::vector<NodeId> wrt(weights.begin(), weights.end());
    wrt.insert(wrt.end(), activations.begin(), activations.end());
    std::vector<NodeId> grads = g.grad_nodes(loss, wrt);

    auto norm_of = [&](NodeId grad) {
        if (!l2) return g.sum(g.abs(grad));
        // guarded root keeps the penalty differentiable at zero gradient
        constexpr double eps = 1e-12;
        return g.sqrt(g.add(g.sum(g.mul(grad, grad)), g.constant_scalar(eps * eps)));
    };

    NodeId total = g.constant_scalar(0.0);
    for (size_t i = 0; i < weights.size(); ++i)
        total = g.add(total, g.scale(norm_of(grads[i]), cfg.lambda_w));
    for (size_t i = 0; i < activations.size(); ++i)
        total = g.add(total, g.scale(norm_of(grads[weights.size() + i]), cfg.lambda_y));
    return total;
}

// reshape a weight node to 2D per the DQ convention; -1 for tensors the
// penalty skips (biases)
NodeId as_matrix(CompGraph& g, NodeId w) {
    const auto& s = g.shape_of(w);
    if (s.size() == 2) return w;
    if (s.size() == 4) return g.reshape(w, {s[0], s[1] * s[2] * s[3]});
    return -1;
}

Tensor identity_matrix(int64_t k) {
    Tensor t = Tensor::zeros({k, k});
    for (int64_t i = 0; i < k; ++i) t.at(i, i) = 1.0;
    return t;
}

}  // namespace

NodeId l1_grad_penalty(CompGraph& g, NodeId loss, std::span<const NodeId> weights,
                       std::span<const NodeId> activations, const RegConfig& cfg) {
    if (cfg.family != RegFamily::L1Grad)
        throw std::invalid_argument("l1_grad_penalty: family must be l1-grad");
    return grad_norm_penalty(g, loss, weights, activations, cfg, /*l2=*/false);
}

NodeId l2_grad_penalty(CompGraph& g, NodeId loss, std::span<const NodeId> weights,
                       std::span<const NodeId> activations, const RegConfig& cfg) {
    if (cfg.family != RegFamily::L2Grad)
        throw std::invalid_argument("l2_grad_penalty: family must be l2-grad");
    return grad_norm_penalty(g, loss, weights, activations, cfg, /*l2=*/true);
}

NodeId dq_ortho_penalty(CompGraph& g, std::span<const NodeId> weights, double lambda) {
    NodeId total = g.constant_scalar(0.0);
    for (NodeId w : weights) {
        NodeId m = as_matrix(g, w);
        if (m < 0) continue;
        int64_t k = g.shape_of(m)[1];
        NodeId d = g.sub(g.matmul(g.transpose(m), m), g.constant(identity_matrix(k)));
        total = g.add(total, g.sum(g.mul(d, d)));
    }
    return g.scale(total, lambda);
}

NodeId dq_trace_penalty(CompGraph& g, std::span<const NodeId> weights, double lambda) {
    NodeId total = g.constant_scalar(0.0);
    for (NodeId w : weights) {
        NodeId m = as_matrix(g, w);
        if (m < 0) continue;
        int64_t k = g.shape_of(m)[1];
        // Tr(W^T W - I) = ||W||_F^2 - k
        NodeId fro = g.sum(g.mul(m, m));
        total = g.add(total, g.sub(fro, g.constant_scalar(static_cast<double>(k))));
    }
    return g.scale(total, lambda);
}

NodeId build_penalty(CompGraph& g, NodeId loss, std::span<const NodeId> weights,
                     std::span<const NodeId> activations, const RegConfig& cfg) {
    cfg.validate();
    switch (cfg.family) {
        case RegFamily::None: return g.constant_scalar(0.0);
        case RegFamily::L1Grad: return l1_grad_penalty(g, loss, weights, activations, cfg);
        case RegFamily::L2Grad: return l2_grad_penalty(g, loss, weights, activations, cfg);
        case RegFamily::DqOrtho: return dq_ortho_penalty(g, weights, cfg.lambda_w);
        case RegFamily::DqTrace: return dq_trace_penalty(g, weights, cfg.lambda_w);
    }
    throw std::logic_error("build_penalty: unreachable");
}

std::pair<double, double> singular_value_identity_check(const Tensor& w) {
    if (w.ndim() != 2) throw std::invalid_argument("singular_value_identity_check: matrix must be 2D");
    int64_t r = w.shape[0], c = w.shape[1];
    if (r > 64 || c > 64)
        throw std::invalid_argument("singular_value_identity_check: matrix too large (n <= 64)");

    // direct route: ||W^T W - I||_F^2
    Tensor gram = Tensor::zeros({c, c});
    for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < c; ++j) {
            double s = 0;
            for (int64_t k = 0; k < r; ++k) s += w.at(k, i) * w.at(k, j);
            gram.at(i, j) = s;
        }
    double lhs = 0;
    for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < c; ++j) {
            double d = gram.at(i, j) - (i == j ? 1.0 : 0.0);
            lhs += d * d;
        }

    // spectral route: sigma_i^2 are the eigenvalues of W^T W
    double rhs = 0;
    for (double ev : symmetric_eigenvalues(gram)) rhs += (ev - 1.0) * (ev - 1.0);
    return {lhs, rhs};
}

}  // namespace qrlab
