#include "qrlab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qrlab {

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Neg: return "neg";
        case OpKind::Mul: return "mul";
        case OpKind::Smul: return "smul";
        case OpKind::Scale: return "scale";
        case OpKind::Matmul: return "matmul";
        case OpKind::Transpose: return "transpose";
        case OpKind::Reshape: return "reshape";
        case OpKind::Relu: return "relu";
        case OpKind::Step: return "step";
        case OpKind::Abs: return "abs";
        case OpKind::Sign: return "sign";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Recip: return "recip";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::RowSum: return "row_sum";
        case OpKind::RowBcast: return "row_bcast";
        case OpKind::ColSum: return "col_sum";
        case OpKind::ColBcast: return "col_bcast";
        case OpKind::BcastScalar: return "bcast_scalar";
        case OpKind::Affine: return "affine";
        case OpKind::Softmax: return "softmax";
        case OpKind::SoftmaxXent: return "softmax_xent";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Conv2dInputGrad: return "conv2d_input_grad";
        case OpKind::Conv2dKernelGrad: return "conv2d_kernel_grad";
        case OpKind::AvgPool2: return "avg_pool2";
        case OpKind::AvgPool2Grad: return "avg_pool2_grad";
        case OpKind::QuantizeSte: return "quantize_ste";
    }
    return "?";
}

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("CompGraph: " + msg); }

void require(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

// ---- tensor kernels shared by forward eval and numeric backward ----

Tensor ew2(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
}

Tensor ew1(const Tensor& a, double (*f)(double)) {
    Tensor out = a;
    for (double& v : out.data) v = f(v);
    return out;
}

Tensor t_add(const Tensor& a, const Tensor& b) { return ew2(a, b, [](double x, double y) { return x + y; }); }
Tensor t_sub(const Tensor& a, const Tensor& b) { return ew2(a, b, [](double x, double y) { return x - y; }); }
Tensor t_mul(const Tensor& a, const Tensor& b) { return ew2(a, b, [](double x, double y) { return x * y; }); }
Tensor t_neg(const Tensor& a) { return ew1(a, [](double x) { return -x; }); }
Tensor t_step(const Tensor& a) { return ew1(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; }); }
Tensor t_sign(const Tensor& a) { return ew1(a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }); }

Tensor t_scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data) v *= c;
    return out;
}

void accumulate(Tensor& into, const Tensor& g) {
    for (size_t i = 0; i < into.data.size(); ++i) into.data[i] += g.data[i];
}

Tensor t_matmul(const Tensor& a, const Tensor& b) {
    int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            double av = a.at(i, p);
            if (av == 0.0) continue;
            for (int64_t j = 0; j < n; ++j) out.at(i, j) += av * b.at(p, j);
        }
    return out;
}

Tensor t_transpose(const Tensor& a) {
    int64_t r = a.shape[0], c = a.shape[1];
    Tensor out = Tensor::zeros({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor t_softmax_rows(const Tensor& logits) {
    int64_t n = logits.shape[0], c = logits.shape[1];
    Tensor out = Tensor::zeros({n, c});
    for (int64_t i = 0; i < n; ++i) {
        double mx = logits.at(i, 0);
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - mx);
        for (int64_t j = 0; j < c; ++j) out.at(i, j) = std::exp(logits.at(i, j) - mx) / z;
    }
    return out;
}

// conv kernels: x (N,Ci,H,W), k (Co,Ci,kh,kw), stride 1, zero padding `pad`
struct ConvDims {
    int64_t n, ci, h, w, co, kh, kw, oh, ow;
};

ConvDims conv_dims(const std::vector<int64_t>& xs, const std::vector<int64_t>& ks, int pad) {
    ConvDims d{};
    d.n = xs[0]; d.ci = xs[1]; d.h = xs[2]; d.w = xs[3];
    d.co = ks[0]; d.kh = ks[2]; d.kw = ks[3];
    require(ks[1] == d.ci, "conv2d: channel mismatch");
    d.oh = d.h - d.kh + 1 + 2 * pad;
    d.ow = d.w - d.kw + 1 + 2 * pad;
    require(d.oh > 0 && d.ow > 0, "conv2d: kernel larger than padded input");
    return d;
}

double& idx4(Tensor& t, int64_t a, int64_t b, int64_t c, int64_t d) {
    const auto& s = t.shape;
    return t.data[static_cast<size_t>(((a * s[1] + b) * s[2] + c) * s[3] + d)];
}
double idx4(const Tensor& t, int64_t a, int64_t b, int64_t c, int64_t d) {
    const auto& s = t.shape;
    return t.data[static_cast<size_t>(((a * s[1] + b) * s[2] + c) * s[3] + d)];
}

Tensor t_conv2d(const Tensor& x, const Tensor& k, int pad) {
    ConvDims d = conv_dims(x.shape, k.shape, pad);
    Tensor out = Tensor::zeros({d.n, d.co, d.oh, d.ow});
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t co = 0; co < d.co; ++co)
            for (int64_t i = 0; i < d.oh; ++i)
                for (int64_t j = 0; j < d.ow; ++j) {
                    double acc = 0;
                    for (int64_t ci = 0; ci < d.ci; ++ci)
                        for (int64_t a = 0; a < d.kh; ++a) {
                            int64_t u = i + a - pad;
                            if (u < 0 || u >= d.h) continue;
                            for (int64_t b = 0; b < d.kw; ++b) {
                                int64_t v = j + b - pad;
                                if (v < 0 || v >= d.w) continue;
                                acc += idx4(x, n, ci, u, v) * idx4(k, co, ci, a, b);
                            }
                        }
                    idx4(out, n, co, i, j) = acc;
                }
    return out;
}

Tensor t_conv2d_input_grad(const Tensor& g, const Tensor& k, int pad,
                           const std::vector<int64_t>& x_shape) {
    ConvDims d = conv_dims(x_shape, k.shape, pad);
    Tensor dx = Tensor::zeros(x_shape);
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t co = 0; co < d.co; ++co)
            for (int64_t i = 0; i < d.oh; ++i)
                for (int64_t j = 0; j < d.ow; ++j) {
                    double gv = idx4(g, n, co, i, j);
                    if (gv == 0.0) continue;
                    for (int64_t ci = 0; ci < d.ci; ++ci)
                        for (int64_t a = 0; a < d.kh; ++a) {
                            int64_t u = i + a - pad;
                            if (u < 0 || u >= d.h) continue;
                            for (int64_t b = 0; b < d.kw; ++b) {
                                int64_t v = j + b - pad;
                                if (v < 0 || v >= d.w) continue;
                                idx4(dx, n, ci, u, v) += gv * idx4(k, co, ci, a, b);
                            }
                        }
                }
    return dx;
}

Tensor t_conv2d_kernel_grad(const Tensor& x, const Tensor& g, int pad,
                            const std::vector<int64_t>& k_shape) {
    ConvDims d = conv_dims(x.shape, k_shape, pad);
    Tensor dk = Tensor::zeros(k_shape);
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t co = 0; co < d.co; ++co)
            for (int64_t i = 0; i < d.oh; ++i)
                for (int64_t j = 0; j < d.ow; ++j) {
                    double gv = idx4(g, n, co, i, j);
                    if (gv == 0.0) continue;
                    for (int64_t ci = 0; ci < d.ci; ++ci)
                        for (int64_t a = 0; a < d.kh; ++a) {
                            int64_t u = i + a - pad;
                            if (u < 0 || u >= d.h) continue;
                            for (int64_t b = 0; b < d.kw; ++b) {
                                int64_t v = j + b - pad;
                                if (v < 0 || v >= d.w) continue;
                                idx4(dk, co, ci, a, b) += gv * idx4(x, n, ci, u, v);
                            }
                        }
                }
    return dk;
}

Tensor t_avg_pool2(const Tensor& x) {
    int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    Tensor out = Tensor::zeros({n, c, h / 2, w / 2});
    for (int64_t a = 0; a < n; ++a)
        for (int64_t b = 0; b < c; ++b)
            for (int64_t i = 0; i + 1 < h; i += 2)
                for (int64_t j = 0; j + 1 < w; j += 2)
                    idx4(out, a, b, i / 2, j / 2) =
                        0.25 * (idx4(x, a, b, i, j) + idx4(x, a, b, i, j + 1) +
                                idx4(x, a, b, i + 1, j) + idx4(x, a, b, i + 1, j + 1));
    return out;
}

Tensor t_avg_pool2_grad(const Tensor& g) {
    int64_t n = g.shape[0], c = g.shape[1], oh = g.shape[2], ow = g.shape[3];
    Tensor dx = Tensor::zeros({n, c, oh * 2, ow * 2});
    for (int64_t a = 0; a < n; ++a)
        for (int64_t b = 0; b < c; ++b)
            for (int64_t i = 0; i < oh; ++i)
                for (int64_t j = 0; j < ow; ++j) {
                    double v = 0.25 * idx4(g, a, b, i, j);
                    idx4(dx, a, b, 2 * i, 2 * j) = v;
                    idx4(dx, a, b, 2 * i, 2 * j + 1) = v;
                    idx4(dx, a, b, 2 * i + 1, 2 * j) = v;
                    idx4(dx, a, b, 2 * i + 1, 2 * j + 1) = v;
                }
    return dx;
}

}  // namespace

// ---- builders ----

NodeId CompGraph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId CompGraph::variable(std::string name, std::vector<int64_t> shape) {
    Tensor::numel_of(shape);
    Node n;
    n.op = OpKind::Leaf;
    n.is_variable = true;
    n.name = std::move(name);
    n.shape = std::move(shape);
    return push(std::move(n));
}

NodeId CompGraph::constant(Tensor v) {
    Node n;
    n.op = OpKind::Leaf;
    n.shape = v.shape;
    n.value = std::move(v);
    n.has_value = true;
    return push(std::move(n));
}

NodeId CompGraph::add(NodeId a, NodeId b) {
    require(node(a).shape == node(b).shape, "add: shape mismatch " + shape_str(node(a).shape) +
                                                " vs " + shape_str(node(b).shape));
    Node n;
    n.op = OpKind::Add;
    n.parents = {a, b};
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::sub(NodeId a, NodeId b) {
    require(node(a).shape == node(b).shape, "sub: shape mismatch");
    Node n;
    n.op = OpKind::Sub;
    n.parents = {a, b};
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::neg(NodeId a) {
    Node n;
    n.op = OpKind::Neg;
    n.parents = {a};
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::mul(NodeId a, NodeId b) {
    require(node(a).shape == node(b).shape, "mul: shape mismatch");
    Node n;
    n.op = OpKind::Mul;
    n.parents = {a, b};
    n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId CompGraph::smul(NodeId tensor, NodeId scalar) {
    require(Tensor::numel_of(node(scalar).shape) == 1, "smul: second operand must be scalar");
    Node n;
    n.op = OpKind::Smul;
    n.parents = {tensor, scalar};
    n.shape = node(tensor).shape;
    return push(std::move(n));
}

NodeId CompGraph::scale(NodeId a, double c) {
    Node n;
    n.op = OpKind::Scale;
    n.parents = {a};
    n.shape = node(a).shape;
    n.scalar_attr = c;
    return push(std::move(n));
}

NodeId CompGraph::matmul(NodeId a, NodeId b) {
    require(node(a).shape.size() == 2 && node(b).shape.size() == 2, "matmul: operands must be 2D");
    require(node(a).shape[1] == node(b).shape[0], "matmul: inner dimension mismatch");
    Node n;
    n.op = OpKind::Matmul;
    n.parents = {a, b};
    n.shape = {node(a).shape[0], node(b).shape[1]};
    return push(std::move(n));
}

NodeId CompGraph::transpose(NodeId a) {
    require(node(a).shape.size() == 2, "transpose: operand must be 2D");
    Node n;
    n.op = OpKind::Transpose;
    n.parents = {a};
    n.shape = {node(a).shape[1], node(a).shape[0]};
    return push(std::move(n));
}

NodeId CompGraph::reshape(NodeId a, std::vector<int64_t> new_shape) {
    require(Tensor::numel_of(new_shape) == Tensor::numel_of(node(a).shape),
            "reshape: element count mismatch");
    Node n;
    n.op = OpKind::Reshape;
    n.parents = {a};
    n.shape = std::move(new_shape);
    return push(std::move(n));
}

#define QRLAB_UNARY(method, kind)                  \
    NodeId CompGraph::method(NodeId a) {           \
        Node n;                                    \
        n.op = OpKind::kind;                       \
        n.parents = {a};                           \
        n.shape = node(a).shape;                   \
        return push(std::move(n));                 \
    }

QRLAB_UNARY(relu, Relu)
QRLAB_UNARY(step, Step)
QRLAB_UNARY(abs, Abs)
QRLAB_UNARY(sign, Sign)
QRLAB_UNARY(sqrt, Sqrt)
QRLAB_UNARY(recip, Recip)
#undef QRLAB_UNARY

NodeId CompGraph::sum(NodeId a) {
    Node n;
    n.op = OpKind::Sum;
    n.parents = {a};
    n.shape = {1};
    return push(std::move(n));
}

NodeId CompGraph::mean(NodeId a) {
    Node n;
    n.op = OpKind::Mean;
    n.parents = {a};
    n.shape = {1};
    return push(std::move(n));
}

NodeId CompGraph::row_sum(NodeId a) {
    require(node(a).shape.size() == 2, "row_sum: operand must be 2D");
    Node n;
    n.op = OpKind::RowSum;
    n.parents = {a};
    n.shape = {node(a).shape[0]};
    return push(std::move(n));
}

NodeId CompGraph::row_bcast(NodeId v, int64_t cols) {
    require(node(v).shape.size() == 1, "row_bcast: operand must be 1D");
    Node n;
    n.op = OpKind::RowBcast;
    n.parents = {v};
    n.shape = {node(v).shape[0], cols};
    return push(std::move(n));
}

NodeId CompGraph::col_sum(NodeId a) {
    require(node(a).shape.size() == 2, "col_sum: operand must be 2D");
    Node n;
    n.op = OpKind::ColSum;
    n.parents = {a};
    n.shape = {node(a).shape[1]};
    return push(std::move(n));
}

NodeId CompGraph::col_bcast(NodeId v, int64_t rows) {
    require(node(v).shape.size() == 1, "col_bcast: operand must be 1D");
    Node n;
    n.op = OpKind::ColBcast;
    n.parents = {v};
    n.shape = {rows, node(v).shape[0]};
    return push(std::move(n));
}

NodeId CompGraph::bcast_scalar(NodeId s, std::vector<int64_t> shape) {
    require(Tensor::numel_of(node(s).shape) == 1, "bcast_scalar: operand must be scalar");
    Node n;
    n.op = OpKind::BcastScalar;
    n.parents = {s};
    n.shape = std::move(shape);
    return push(std::move(n));
}

NodeId CompGraph::affine(NodeId x, NodeId w, NodeId b) {
    require(node(x).shape.size() == 2 && node(w).shape.size() == 2, "affine: x, w must be 2D");
    require(node(x).shape[1] == node(w).shape[0], "affine: inner dimension mismatch");
    require(node(b).shape == std::vector<int64_t>{node(w).shape[1]}, "affine: bias shape mismatch");
    Node n;
    n.op = OpKind::Affine;
    n.parents = {x, w, b};
    n.shape = {node(x).shape[0], node(w).shape[1]};
    return push(std::move(n));
}

NodeId CompGraph::softmax(NodeId logits) {
    require(node(logits).shape.size() == 2, "softmax: operand must be 2D");
    Node n;
    n.op = OpKind::Softmax;
    n.parents = {logits};
    n.shape = node(logits).shape;
    return push(std::move(n));
}

NodeId CompGraph::softmax_xent(NodeId logits, NodeId onehot) {
    require(node(logits).shape.size() == 2, "softmax_xent: logits must be 2D");
    require(node(logits).shape == node(onehot).shape, "softmax_xent: label shape mismatch");
    Node n;
    n.op = OpKind::SoftmaxXent;
    n.parents = {logits, onehot};
    n.shape = {1};
    return push(std::move(n));
}

NodeId CompGraph::conv2d(NodeId x, NodeId k, int pad) {
    require(node(x).shape.size() == 4 && node(k).shape.size() == 4, "conv2d: operands must be 4D");
    ConvDims d = conv_dims(node(x).shape, node(k).shape, pad);
    Node n;
    n.op = OpKind::Conv2d;
    n.parents = {x, k};
    n.shape = {d.n, d.co, d.oh, d.ow};
    n.pad = pad;
    return push(std::move(n));
}

NodeId CompGraph::conv2d_input_grad(NodeId g, NodeId k, int pad, std::vector<int64_t> x_shape) {
    conv_dims(x_shape, node(k).shape, pad);
    Node n;
    n.op = OpKind::Conv2dInputGrad;
    n.parents = {g, k};
    n.shape = std::move(x_shape);
    n.pad = pad;
    return push(std::move(n));
}

NodeId CompGraph::conv2d_kernel_grad(NodeId x, NodeId g, int pad, std::vector<int64_t> k_shape) {
    conv_dims(node(x).shape, k_shape, pad);
    Node n;
    n.op = OpKind::Conv2dKernelGrad;
    n.parents = {x, g};
    n.shape = std::move(k_shape);
    n.pad = pad;
    return push(std::move(n));
}

NodeId CompGraph::avg_pool2(NodeId a) {
    const auto& s = node(a).shape;
    require(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0, "avg_pool2: needs 4D even spatial dims");
    Node n;
    n.op = OpKind::AvgPool2;
    n.parents = {a};
    n.shape = {s[0], s[1], s[2] / 2, s[3] / 2};
    return push(std::move(n));
}

NodeId CompGraph::avg_pool2_grad(NodeId g) {
    const auto& s = node(g).shape;
    require(s.size() == 4, "avg_pool2_grad: operand must be 4D");
    Node n;
    n.op = OpKind::AvgPool2Grad;
    n.parents = {g};
    n.shape = {s[0], s[1], s[2] * 2, s[3] * 2};
    return push(std::move(n));
}

NodeId CompGraph::quantize_ste(NodeId a, QuantScheme s) {
    s.validate();
    Node n;
    n.op = OpKind::QuantizeSte;
    n.parents = {a};
    n.shape = node(a).shape;
    n.scheme = s;
    return push(std::move(n));
}

// ---- binding & forward ----

void CompGraph::bind(NodeId var, Tensor v) {
    Node& n = mut(var);
    require(n.op == OpKind::Leaf && n.is_variable, "bind: node is not a variable");
    require(n.shape == v.shape, "bind: shape mismatch for variable '" + n.name + "'");
    for (double x : v.data)
        if (!std::isfinite(x)) fail("bind: non-finite value for variable '" + n.name + "'");
    n.value = std::move(v);
    n.has_value = true;
}

void CompGraph::bind(const std::map<std::string, Tensor>& by_name) {
    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.op == OpKind::Leaf && n.is_variable) {
            auto it = by_name.find(n.name);
            if (it != by_name.end()) bind(static_cast<NodeId>(i), it->second);
        }
    }
}

void CompGraph::eval_node(NodeId id) {
    Node& n = mut(id);
    auto P = [&](int i) -> const Tensor& { return node(n.parents[static_cast<size_t>(i)]).value; };
    switch (n.op) {
        case OpKind::Leaf:
            if (!n.has_value) fail("unbound variable '" + n.name + "'");
            return;  // no finiteness re-check for leaves bound once
        case OpKind::Add: n.value = t_add(P(0), P(1)); break;
        case OpKind::Sub: n.value = t_sub(P(0), P(1)); break;
        case OpKind::Neg: n.value = t_neg(P(0)); break;
        case OpKind::Mul: n.value = t_mul(P(0), P(1)); break;
        case OpKind::Smul: n.value = t_scale(P(0), P(1).data[0]); break;
        case OpKind::Scale: n.value = t_scale(P(0), n.scalar_attr); break;
        case OpKind::Matmul: n.value = t_matmul(P(0), P(1)); break;
        case OpKind::Transpose: n.value = t_transpose(P(0)); break;
        case OpKind::Reshape: n.value = Tensor(n.shape, P(0).data); break;
        case OpKind::Relu: n.value = ew1(P(0), [](double x) { return x > 0.0 ? x : 0.0; }); break;
        case OpKind::Step: n.value = t_step(P(0)); break;
        case OpKind::Abs: n.value = ew1(P(0), [](double x) { return std::abs(x); }); break;
        case OpKind::Sign: n.value = t_sign(P(0)); break;
        case OpKind::Sqrt: n.value = ew1(P(0), [](double x) { return std::sqrt(x); }); break;
        case OpKind::Recip: n.value = ew1(P(0), [](double x) { return 1.0 / x; }); break;
        case OpKind::Sum: {
            double s = 0;
            for (double v : P(0).data) s += v;
            n.value = Tensor::scalar(s);
            break;
        }
        case OpKind::Mean: {
            double s = 0;
            for (double v : P(0).data) s += v;
            n.value = Tensor::scalar(s / static_cast<double>(P(0).numel()));
            break;
        }
        case OpKind::RowSum: {
            const Tensor& a = P(0);
            Tensor out = Tensor::zeros({a.shape[0]});
            for (int64_t i = 0; i < a.shape[0]; ++i)
                for (int64_t j = 0; j < a.shape[1]; ++j) out.data[static_cast<size_t>(i)] += a.at(i, j);
            n.value = std::move(out);
            break;
        }
        case OpKind::RowBcast: {
            const Tensor& v = P(0);
            Tensor out = Tensor::zeros(n.shape);
            for (int64_t i = 0; i < n.shape[0]; ++i)
                for (int64_t j = 0; j < n.shape[1]; ++j) out.at(i, j) = v.data[static_cast<size_t>(i)];
            n.value = std::move(out);
            break;
        }
        case OpKind::ColSum: {
            const Tensor& a = P(0);
            Tensor out = Tensor::zeros({a.shape[1]});
            for (int64_t i = 0; i < a.shape[0]; ++i)
                for (int64_t j = 0; j < a.shape[1]; ++j) out.data[static_cast<size_t>(j)] += a.at(i, j);
            n.value = std::move(out);
            break;
        }
        case OpKind::ColBcast: {
            const Tensor& v = P(0);
            Tensor out = Tensor::zeros(n.shape);
            for (int64_t i = 0; i < n.shape[0]; ++i)
                for (int64_t j = 0; j < n.shape[1]; ++j) out.at(i, j) = v.data[static_cast<size_t>(j)];
            n.value = std::move(out);
            break;
        }
        case OpKind::BcastScalar: n.value = Tensor::full(n.shape, P(0).data[0]); break;
        case OpKind::Affine: {
            Tensor out = t_matmul(P(0), P(1));
            const Tensor& b = P(2);
            for (int64_t i = 0; i < out.shape[0]; ++i)
                for (int64_t j = 0; j < out.shape[1]; ++j) out.at(i, j) += b.data[static_cast<size_t>(j)];
            n.value = std::move(out);
            break;
        }
        case OpKind::Softmax: n.value = t_softmax_rows(P(0)); break;
        case OpKind::SoftmaxXent: {
            const Tensor& logits = P(0);
            const Tensor& onehot = P(1);
            int64_t rows = logits.shape[0], cols = logits.shape[1];
            double total = 0;
            for (int64_t i = 0; i < rows; ++i) {
                double mx = logits.at(i, 0);
                for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, logits.at(i, j));
                double z = 0, dot = 0;
                for (int64_t j = 0; j < cols; ++j) {
                    z += std::exp(logits.at(i, j) - mx);
                    dot += onehot.at(i, j) * (logits.at(i, j) - mx);
                }
                total += std::log(z) - dot;
            }
            n.value = Tensor::scalar(total / static_cast<double>(rows));
            break;
        }
        case OpKind::Conv2d: n.value = t_conv2d(P(0), P(1), n.pad); break;
        case OpKind::Conv2dInputGrad: n.value = t_conv2d_input_grad(P(0), P(1), n.pad, n.shape); break;
        case OpKind::Conv2dKernelGrad: n.value = t_conv2d_kernel_grad(P(0), P(1), n.pad, n.shape); break;
        case OpKind::AvgPool2: n.value = t_avg_pool2(P(0)); break;
        case OpKind::AvgPool2Grad: n.value = t_avg_pool2_grad(P(0)); break;
        case OpKind::QuantizeSte: n.value = quantize(P(0), *n.scheme); break;
    }
    n.has_value = true;
    for (double v : n.value.data)
        if (!std::isfinite(v)) fail(std::string("non-finite value produced by op '") + op_name(n.op) + "'");
}

const Tensor& CompGraph::forward(NodeId out) {
    require(out >= 0 && static_cast<size_t>(out) < nodes_.size(), "forward: bad node id");
    for (NodeId id = 0; id <= out; ++id) eval_node(id);
    return node(out).value;
}

const Tensor& CompGraph::value(NodeId id) const {
    const Node& n = node(id);
    require(n.has_value, "value: node not evaluated");
    return n.value;
}

// ---- numeric backward ----

GradientBundle CompGraph::backward(NodeId out, std::span<const NodeId> wrt, double seed) {
    require(Tensor::numel_of(node(out).shape) == 1, "backward: output must be scalar");
    require(node(out).has_value, "backward: run forward first");

    // ancestors of out
    std::vector<char> reach(nodes_.size(), 0);
    std::vector<NodeId> stack{out};
    reach[static_cast<size_t>(out)] = 1;
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        for (NodeId p : node(id).parents)
            if (!reach[static_cast<size_t>(p)]) {
                reach[static_cast<size_t>(p)] = 1;
                stack.push_back(p);
            }
    }

    std::vector<Tensor> adj(nodes_.size());
    std::vector<char> has_adj(nodes_.size(), 0);
    adj[static_cast<size_t>(out)] = Tensor(node(out).shape, {seed});
    has_adj[static_cast<size_t>(out)] = 1;

    auto acc = [&](NodeId p, Tensor g) {
        size_t i = static_cast<size_t>(p);
        if (!has_adj[i]) {
            adj[i] = std::move(g);
            has_adj[i] = 1;
        } else {
            accumulate(adj[i], g);
        }
    };

    for (NodeId id = out; id >= 0; --id) {
        size_t i = static_cast<size_t>(id);
        if (!reach[i] || !has_adj[i]) continue;
        const Node& n = node(id);
        const Tensor& g = adj[i];
        auto P = [&](int k) -> const Tensor& { return node(n.parents[static_cast<size_t>(k)]).value; };
        auto p = [&](int k) { return n.parents[static_cast<size_t>(k)]; };
        switch (n.op) {
            case OpKind::Leaf: break;
            case OpKind::Add:
                acc(p(0), g);
                acc(p(1), g);
                break;
            case OpKind::Sub:
                acc(p(0), g);
                acc(p(1), t_neg(g));
                break;
            case OpKind::Neg: acc(p(0), t_neg(g)); break;
            case OpKind::Mul:
                acc(p(0), t_mul(g, P(1)));
                acc(p(1), t_mul(g, P(0)));
                break;
            case OpKind::Smul: {
                acc(p(0), t_scale(g, P(1).data[0]));
                double s = 0;
                for (size_t k = 0; k < g.data.size(); ++k) s += g.data[k] * P(0).data[k];
                acc(p(1), Tensor(node(p(1)).shape, {s}));
                break;
            }
            case OpKind::Scale: acc(p(0), t_scale(g, n.scalar_attr)); break;
            case OpKind::Matmul:
                acc(p(0), t_matmul(g, t_transpose(P(1))));
                acc(p(1), t_matmul(t_transpose(P(0)), g));
                break;
            case OpKind::Transpose: acc(p(0), t_transpose(g)); break;
            case OpKind::Reshape: acc(p(0), Tensor(node(p(0)).shape, g.data)); break;
            case OpKind::Relu: acc(p(0), t_mul(g, t_step(P(0)))); break;
            case OpKind::Step:
            case OpKind::Sign:
                break;  // zero derivative almost everywhere, zero at ties by convention
            case OpKind::Abs: acc(p(0), t_mul(g, t_sign(P(0)))); break;
            case OpKind::Sqrt: {
                Tensor d = g;
                for (size_t k = 0; k < d.data.size(); ++k) d.data[k] *= 0.5 / n.value.data[k];
                acc(p(0), std::move(d));
                break;
            }
            case OpKind::Recip: {
                Tensor d = g;
                for (size_t k = 0; k < d.data.size(); ++k)
                    d.data[k] *= -n.value.data[k] * n.value.data[k];
                acc(p(0), std::move(d));
                break;
            }
            case OpKind::Sum: acc(p(0), Tensor::full(node(p(0)).shape, g.data[0])); break;
            case OpKind::Mean:
                acc(p(0), Tensor::full(node(p(0)).shape,
                                       g.data[0] / static_cast<double>(Tensor::numel_of(node(p(0)).shape))));
                break;
            case OpKind::RowSum: {
                const auto& ps = node(p(0)).shape;
                Tensor d = Tensor::zeros(ps);
                for (int64_t r = 0; r < ps[0]; ++r)
                    for (int64_t c = 0; c < ps[1]; ++c) d.at(r, c) = g.data[static_cast<size_t>(r)];
                acc(p(0), std::move(d));
                break;
            }
            case OpKind::RowBcast: {
                Tensor d = Tensor::zeros(node(p(0)).shape);
                for (int64_t r = 0; r < n.shape[0]; ++r)
                    for (int64_t c = 0; c < n.shape[1]; ++c) d.data[static_cast<size_t>(r)] += g.at(r, c);
                acc(p(0), std::move(d));
                break;
            }
            case OpKind::ColSum: {
                const auto& ps = node(p(0)).shape;
                Tensor d = Tensor::zeros(ps);
                for (int64_t r = 0; r < ps[0]; ++r)
                    for (int64_t c = 0; c < ps[1]; ++c) d.at(r, c) = g.data[static_cast<size_t>(c)];
                acc(p(0), std::move(d));
                break;
            }
            case OpKind::ColBcast: {
                Tensor d = Tensor::zeros(node(p(0)).shape);
                for (int64_t r = 0; r < n.shape[0]; ++r)
                    for (int64_t c = 0; c < n.shape[1]; ++c) d.data[static_cast<size_t>(c)] += g.at(r, c);
                acc(p(0), std::move(d));
                break;
            }
            case OpKind::BcastScalar: {
                double s = 0;
                for (double v : g.data) s += v;
                acc(p(0), Tensor(node(p(0)).shape, {s}));
                break;
            }
            case OpKind::Affine: {
                acc(p(0), t_matmul(g, t_transpose(P(1))));
                acc(p(1), t_matmul(t_transpose(P(0)), g));
                Tensor db = Tensor::zeros(node(p(2)).shape);
                for (int64_t r = 0; r < g.shape[0]; ++r)
                    for (int64_t c = 0; c < g.shape[1]; ++c) db.data[static_cast<size_t>(c)] += g.at(r, c);
                acc(p(2), std::move(db));
                break;
            }
            case OpKind::Softmax: {
                const Tensor& s = n.value;
                Tensor d = Tensor::zeros(s.shape);
                for (int64_t r = 0; r < s.shape[0]; ++r) {
                    double dot = 0;
                    for (int64_t c = 0; c < s.shape[1]; ++c) dot += g.at(r, c) * s.at(r, c);
                    for (int64_t c = 0; c < s.shape[1]; ++c)
                        d.at(r, c) = s.at(r, c) * (g.at(r, c) - dot);
                }
                acc(p(0), std::move(d));
                break;
            }
            case OpKind::SoftmaxXent: {
                Tensor s = t_softmax_rows(P(0));
                double gv = g.data[0] / static_cast<double>(s.shape[0]);
                Tensor d = t_scale(t_sub(s, P(1)), gv);
                acc(p(0), std::move(d));
                break;  // labels are constants; no gradient flows to them
            }
            case OpKind::Conv2d:
                acc(p(0), t_conv2d_input_grad(g, P(1), n.pad, node(p(0)).shape));
                acc(p(1), t_conv2d_kernel_grad(P(0), g, n.pad, node(p(1)).shape));
                break;
            case OpKind::Conv2dInputGrad:
                acc(p(0), t_conv2d(g, P(1), n.pad));
                acc(p(1), t_conv2d_kernel_grad(g, P(0), n.pad, node(p(1)).shape));
                break;
            case OpKind::Conv2dKernelGrad:
                acc(p(0), t_conv2d_input_grad(P(1), g, n.pad, node(p(0)).shape));
                acc(p(1), t_conv2d(P(0), g, n.pad));
                break;
            case OpKind::AvgPool2: acc(p(0), t_avg_pool2_grad(g)); break;
            case OpKind::AvgPool2Grad: acc(p(0), t_avg_pool2(g)); break;
            case OpKind::QuantizeSte: acc(p(0), g); break;  // straight-through
        }
    }

    GradientBundle out_grads;
    for (NodeId w : wrt) {
        size_t i = static_cast<size_t>(w);
        require(i < nodes_.size(), "backward: bad wrt node id");
        if (has_adj[i])
            out_grads.emplace(w, adj[i]);
        else
            out_grads.emplace(w, Tensor::zeros(node(w).shape));
    }
    return out_grads;
}

// ---- symbolic gradient extension ----

std::vector<NodeId> CompGraph::grad_nodes(NodeId out, std::span<const NodeId> wrt) {
    require(Tensor::numel_of(node(out).shape) == 1, "grad_nodes: output must be scalar");
    const size_t n_orig = nodes_.size();

    // nodes on some wrt -> out path: descendants of a wrt that are also
    // ancestors of out
    std::vector<char> desc(n_orig, 0);
    for (NodeId w : wrt) {
        require(static_cast<size_t>(w) < n_orig, "grad_nodes: bad wrt node id");
        desc[static_cast<size_t>(w)] = 1;
    }
    for (size_t id = 0; id < n_orig; ++id)
        for (NodeId p : nodes_[id].parents)
            if (desc[static_cast<size_t>(p)]) desc[id] = 1;

    std::vector<char> anc(n_orig, 0);
    std::vector<NodeId> stack{out};
    anc[static_cast<size_t>(out)] = 1;
    while (!stack.empty()) {
        NodeId id = stack.back();
        stack.pop_back();
        for (NodeId p : node(id).parents)
            if (!anc[static_cast<size_t>(p)]) {
                anc[static_cast<size_t>(p)] = 1;
                stack.push_back(p);
            }
    }

    std::vector<NodeId> adj(n_orig, -1);
    auto acc = [&](NodeId p, NodeId contribution) {
        size_t i = static_cast<size_t>(p);
        adj[i] = (adj[i] < 0) ? contribution : add(adj[i], contribution);
    };

    if (desc[static_cast<size_t>(out)] && anc[static_cast<size_t>(out)])
        adj[static_cast<size_t>(out)] = constant_scalar(1.0);

    for (NodeId id = out; id >= 0; --id) {
        size_t i = static_cast<size_t>(id);
        if (!desc[i] || !anc[i] || adj[i] < 0) continue;
        const NodeId g = adj[i];
        // copy parents/attrs: builder calls below may reallocate nodes_
        const OpKind op = node(id).op;
        const std::vector<NodeId> par = node(id).parents;
        const double sc = node(id).scalar_attr;
        const int pad = node(id).pad;
        auto live = [&](int k) { return desc[static_cast<size_t>(par[static_cast<size_t>(k)])]; };
        auto p = [&](int k) { return par[static_cast<size_t>(k)]; };
        auto pshape = [&](int k) { return node(p(k)).shape; };
        switch (op) {
            case OpKind::Leaf: break;
            case OpKind::Add:
                if (live(0)) acc(p(0), g);
                if (live(1)) acc(p(1), g);
                break;
            case OpKind::Sub:
                if (live(0)) acc(p(0), g);
                if (live(1)) acc(p(1), neg(g));
                break;
            case OpKind::Neg:
                if (live(0)) acc(p(0), neg(g));
                break;
            case OpKind::Mul:
                if (live(0)) acc(p(0), mul(g, p(1)));
                if (live(1)) acc(p(1), mul(g, p(0)));
                break;
            case OpKind::Smul:
                if (live(0)) acc(p(0), smul(g, p(1)));
                if (live(1)) acc(p(1), sum(mul(g, p(0))));
                break;
            case OpKind::Scale:
                if (live(0)) acc(p(0), scale(g, sc));
                break;
            case OpKind::Matmul:
                if (live(0)) acc(p(0), matmul(g, transpose(p(1))));
                if (live(1)) acc(p(1), matmul(transpose(p(0)), g));
                break;
            case OpKind::Transpose:
                if (live(0)) acc(p(0), transpose(g));
                break;
            case OpKind::Reshape:
                if (live(0)) acc(p(0), reshape(g, pshape(0)));
                break;
            case OpKind::Relu:
                if (live(0)) acc(p(0), mul(g, step(p(0))));
                break;
            case OpKind::Step:
            case OpKind::Sign:
                break;  // zero derivative almost everywhere
            case OpKind::Abs:
                if (live(0)) acc(p(0), mul(g, sign(p(0))));
                break;
            case OpKind::Sqrt:
                if (live(0)) acc(p(0), scale(mul(g, recip(id)), 0.5));
                break;
            case OpKind::Recip:
                if (live(0)) acc(p(0), neg(mul(g, mul(id, id))));
                break;
            case OpKind::Sum:
                if (live(0)) acc(p(0), bcast_scalar(g, pshape(0)));
                break;
            case OpKind::Mean:
                if (live(0))
                    acc(p(0), scale(bcast_scalar(g, pshape(0)),
                                    1.0 / static_cast<double>(Tensor::numel_of(pshape(0)))));
                break;
            case OpKind::RowSum:
                if (live(0)) acc(p(0), row_bcast(g, pshape(0)[1]));
                break;
            case OpKind::RowBcast:
                if (live(0)) acc(p(0), row_sum(g));
                break;
            case OpKind::ColSum:
                if (live(0)) acc(p(0), col_bcast(g, pshape(0)[0]));
                break;
            case OpKind::ColBcast:
                if (live(0)) acc(p(0), col_sum(g));
                break;
            case OpKind::BcastScalar:
                if (live(0)) acc(p(0), sum(g));
                break;
            case OpKind::Affine:
                if (live(0)) acc(p(0), matmul(g, transpose(p(1))));
                if (live(1)) acc(p(1), matmul(transpose(p(0)), g));
                if (live(2)) acc(p(2), col_sum(g));
                break;
            case OpKind::Softmax:
                if (live(0)) {
                    NodeId inner = row_bcast(row_sum(mul(g, id)), node(id).shape[1]);
                    acc(p(0), mul(id, sub(g, inner)));
                }
                break;
            case OpKind::SoftmaxXent:
                if (live(0)) {
                    double inv_rows = 1.0 / static_cast<double>(pshape(0)[0]);
                    NodeId diff = sub(softmax(p(0)), p(1));
                    acc(p(0), smul(diff, scale(g, inv_rows)));
                }
                break;  // labels: gradient path intentionally absent
            case OpKind::Conv2d:
                if (live(0)) acc(p(0), conv2d_input_grad(g, p(1), pad, pshape(0)));
                if (live(1)) acc(p(1), conv2d_kernel_grad(p(0), g, pad, pshape(1)));
                break;
            case OpKind::Conv2dInputGrad:
                if (live(0)) acc(p(0), conv2d(g, p(1), pad));
                if (live(1)) acc(p(1), conv2d_kernel_grad(g, p(0), pad, pshape(1)));
                break;
            case OpKind::Conv2dKernelGrad:
                if (live(0)) acc(p(0), conv2d_input_grad(p(1), g, pad, pshape(0)));
                if (live(1)) acc(p(1), conv2d(p(0), g, pad));
                break;
            case OpKind::AvgPool2:
                if (live(0)) acc(p(0), avg_pool2_grad(g));
                break;
            case OpKind::AvgPool2Grad:
                if (live(0)) acc(p(0), avg_pool2(g));
                break;
            case OpKind::QuantizeSte:
                if (live(0)) acc(p(0), g);  // straight-through
                break;
        }
    }

    std::vector<NodeId> result;
    result.reserve(wrt.size());
    for (NodeId w : wrt) {
        NodeId a = adj[static_cast<size_t>(w)];
        result.push_back(a >= 0 ? a : constant(Tensor::zeros(node(w).shape)));
    }
    return result;
}

}  // namespace qrlab
