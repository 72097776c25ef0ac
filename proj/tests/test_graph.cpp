#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qrlab/graph.hpp"
#include "qrlab/rng.hpp"

#include <cmath>
#include <functional>

using namespace qrlab;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Keeps samples away from relu/abs kinks so central differences are valid.
Tensor random_away_from_zero(std::vector<int64_t> shape, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) {
        double u = rng.uniform(0.1, 1.0);
        v = rng.uniform() < 0.5 ? -u : u;
    }
    return t;
}

double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// Central finite differences of g.forward(out) w.r.t. every bound variable,
// checked against one reverse pass.
void check_gradients(CompGraph& g, NodeId out, const std::vector<NodeId>& vars,
                     std::map<NodeId, Tensor> bindings, double tol = 1e-4, double h = 1e-6) {
    for (auto& [id, v] : bindings) g.bind(id, v);
    g.forward(out);
    GradientBundle grads = g.backward(out, vars);
    for (NodeId var : vars) {
        Tensor base = bindings.at(var);
        const Tensor& analytic = grads.at(var);
        REQUIRE(analytic.shape == base.shape);
        for (int64_t i = 0; i < base.numel(); ++i) {
            Tensor plus = base, minus = base;
            plus.data[static_cast<size_t>(i)] += h;
            minus.data[static_cast<size_t>(i)] -= h;
            g.bind(var, plus);
            double fp = g.forward(out).data[0];
            g.bind(var, minus);
            double fm = g.forward(out).data[0];
            g.bind(var, base);
            double numeric = (fp - fm) / (2 * h);
            INFO("var ", var, " element ", i);
            CHECK(rel_err(analytic.data[static_cast<size_t>(i)], numeric) < tol);
        }
    }
    g.forward(out);
}

}  // namespace

TEST_CASE("finite differences across the op set") {
    Rng rng(101);

    SUBCASE("add / sub / neg / mul chain") {
        CompGraph g;
        NodeId a = g.variable("a", {3, 2});
        NodeId b = g.variable("b", {3, 2});
        NodeId out = g.sum(g.mul(g.add(a, b), g.neg(g.sub(a, b))));
        check_gradients(g, out, {a, b},
                        {{a, random_tensor({3, 2}, rng)}, {b, random_tensor({3, 2}, rng)}});
    }

    SUBCASE("matmul and transpose") {
        CompGraph g;
        NodeId a = g.variable("a", {2, 3});
        NodeId b = g.variable("b", {3, 4});
        NodeId out = g.sum(g.matmul(a, b));
        check_gradients(g, out, {a, b},
                        {{a, random_tensor({2, 3}, rng)}, {b, random_tensor({3, 4}, rng)}});
        CompGraph g2;
        NodeId c = g2.variable("c", {2, 3});
        NodeId out2 = g2.sum(g2.mul(g2.transpose(c), g2.transpose(c)));
        check_gradients(g2, out2, {c}, {{c, random_tensor({2, 3}, rng)}});
    }

    SUBCASE("relu, abs, sqrt, recip away from kinks and poles") {
        CompGraph g;
        NodeId x = g.variable("x", {4, 4});
        NodeId out = g.sum(g.add(g.relu(x), g.abs(x)));
        check_gradients(g, out, {x}, {{x, random_away_from_zero({4, 4}, rng)}});

        CompGraph g2;
        NodeId y = g2.variable("y", {5});
        NodeId out2 = g2.sum(g2.add(g2.sqrt(y), g2.recip(y)));
        check_gradients(g2, out2, {y}, {{y, random_tensor({5}, rng, 0.5, 2.0)}});
    }

    SUBCASE("sum, mean, reshape, scale, smul") {
        CompGraph g;
        NodeId x = g.variable("x", {2, 6});
        NodeId s = g.variable("s", {1});
        NodeId out = g.add(g.scale(g.mean(x), 3.0), g.smul(g.sum(g.reshape(x, {3, 4})), s));
        check_gradients(g, out, {x, s},
                        {{x, random_tensor({2, 6}, rng)}, {s, random_tensor({1}, rng)}});
    }

    SUBCASE("row/col reductions and broadcasts") {
        CompGraph g;
        NodeId x = g.variable("x", {3, 4});
        NodeId v = g.variable("v", {3});
        NodeId w = g.variable("w", {4});
        NodeId t = g.mul(g.row_bcast(v, 4), g.col_bcast(w, 3));
        NodeId out = g.add(g.sum(g.mul(x, t)),
                           g.sum(g.add(g.row_sum(x), g.bcast_scalar(g.sum(g.col_sum(x)), {3}))));
        check_gradients(g, out, {x, v, w},
                        {{x, random_tensor({3, 4}, rng)},
                         {v, random_tensor({3}, rng)},
                         {w, random_tensor({4}, rng)}});
    }

    SUBCASE("affine") {
        CompGraph g;
        NodeId x = g.variable("x", {4, 3});
        NodeId w = g.variable("w", {3, 2});
        NodeId b = g.variable("b", {2});
        NodeId out = g.sum(g.affine(x, w, b));
        check_gradients(g, out, {x, w, b},
                        {{x, random_tensor({4, 3}, rng)},
                         {w, random_tensor({3, 2}, rng)},
                         {b, random_tensor({2}, rng)}});
    }

    SUBCASE("softmax and softmax cross-entropy") {
        CompGraph g;
        NodeId z = g.variable("z", {3, 4});
        NodeId out = g.sum(g.mul(g.softmax(z), g.softmax(z)));
        check_gradients(g, out, {z}, {{z, random_tensor({3, 4}, rng)}});

        CompGraph g2;
        NodeId logits = g2.variable("logits", {5, 3});
        Tensor onehot = Tensor::zeros({5, 3});
        for (int64_t i = 0; i < 5; ++i) onehot.at(i, i % 3) = 1.0;
        NodeId y = g2.constant(onehot);
        NodeId out2 = g2.softmax_xent(logits, y);
        check_gradients(g2, out2, {logits}, {{logits, random_tensor({5, 3}, rng)}});
    }

    SUBCASE("conv2d and average pooling") {
        CompGraph g;
        NodeId x = g.variable("x", {2, 2, 4, 4});
        NodeId k = g.variable("k", {3, 2, 3, 3});
        NodeId out = g.sum(g.avg_pool2(g.conv2d(x, k, 1)));
        check_gradients(g, out, {x, k},
                        {{x, random_tensor({2, 2, 4, 4}, rng)}, {k, random_tensor({3, 2, 3, 3}, rng)}});
    }
}

TEST_CASE("100 random composite cases match finite differences") {
    // layered random MLP-shaped scalar functions with mixed ops
    for (uint64_t c = 0; c < 100; ++c) {
        Rng rng(derive_seed(c, "fd-case"));
        CompGraph g;
        int64_t n = 2 + static_cast<int64_t>(rng.below(3));
        int64_t d = 2 + static_cast<int64_t>(rng.below(3));
        int64_t h = 2 + static_cast<int64_t>(rng.below(3));
        NodeId x = g.variable("x", {n, d});
        NodeId w = g.variable("w", {d, h});
        NodeId b = g.variable("b", {h});
        NodeId z = g.affine(x, w, b);
        NodeId act = (c % 3 == 0) ? g.relu(z) : (c % 3 == 1) ? g.abs(z) : g.softmax(z);
        NodeId out = (c % 2 == 0) ? g.mean(g.mul(act, act)) : g.sum(act);
        check_gradients(g, out, {x, w, b},
                        {{x, random_away_from_zero({n, d}, rng)},
                         {w, random_away_from_zero({d, h}, rng)},
                         {b, random_away_from_zero({h}, rng)}});
    }
}

TEST_CASE("straight-through estimator passes gradients unchanged") {
    CompGraph g;
    NodeId x = g.variable("x", {6});
    QuantScheme s;
    s.bits = 4;
    s.scale = 0.25;
    NodeId q = g.quantize_ste(x, s);
    NodeId out = g.sum(g.mul(q, q));
    Rng rng(9);
    Tensor xv = random_tensor({6}, rng);
    g.bind(x, xv);
    g.forward(out);
    GradientBundle grads = g.backward(out, std::vector<NodeId>{x});
    const Tensor& qv = g.value(q);
    // d(sum q^2)/dx through identity-backward = 2*q
    for (int64_t i = 0; i < 6; ++i)
        CHECK(grads.at(x).data[static_cast<size_t>(i)] ==
              doctest::Approx(2 * qv.data[static_cast<size_t>(i)]));
    // forward really quantizes
    for (double v : qv.data) CHECK(std::abs(v / s.scale - std::round(v / s.scale)) < 1e-12);
}

TEST_CASE("subgradient conventions at zero") {
    CompGraph g;
    NodeId x = g.variable("x", {3});
    NodeId rel = g.sum(g.relu(x));
    NodeId ab = g.sum(g.abs(x));
    NodeId sg = g.sum(g.sign(x));
    NodeId st = g.sum(g.step(x));
    g.bind(x, Tensor({3}, {0.0, -1.0, 2.0}));
    g.forward(rel);
    CHECK(g.backward(rel, std::vector<NodeId>{x}).at(x).data[0] == 0.0);  // relu'(0) = 0
    g.forward(ab);
    CHECK(g.backward(ab, std::vector<NodeId>{x}).at(x).data[0] == 0.0);  // sign(0) = 0
    g.forward(sg);
    GradientBundle gsg = g.backward(sg, std::vector<NodeId>{x});
    for (double v : gsg.at(x).data) CHECK(v == 0.0);
    g.forward(st);
    GradientBundle gst = g.backward(st, std::vector<NodeId>{x});
    for (double v : gst.at(x).data) CHECK(v == 0.0);
}

TEST_CASE("backward seed scales gradients linearly") {
    CompGraph g;
    NodeId x = g.variable("x", {4});
    NodeId out = g.sum(g.mul(x, x));
    Rng rng(13);
    g.bind(x, random_tensor({4}, rng));
    g.forward(out);
    GradientBundle g1 = g.backward(out, std::vector<NodeId>{x}, 1.0);
    GradientBundle g2 = g.backward(out, std::vector<NodeId>{x}, -2.5);
    for (int64_t i = 0; i < 4; ++i)
        CHECK(g2.at(x).data[static_cast<size_t>(i)] ==
              doctest::Approx(-2.5 * g1.at(x).data[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("symbolic gradient nodes agree with the numeric backward pass") {
    Rng rng(17);
    CompGraph g;
    NodeId x = g.variable("x", {3, 2});
    NodeId w = g.variable("w", {2, 3});
    NodeId out = g.mean(g.relu(g.matmul(x, w)));
    std::vector<NodeId> wrt{x, w};
    std::vector<NodeId> gnodes = g.grad_nodes(out, wrt);
    g.bind(x, random_away_from_zero({3, 2}, rng));
    g.bind(w, random_away_from_zero({2, 3}, rng));
    g.forward(out);
    GradientBundle numeric = g.backward(out, wrt);
    for (size_t i = 0; i < wrt.size(); ++i) {
        const Tensor& sym = g.forward(gnodes[i]);
        const Tensor& num = numeric.at(wrt[i]);
        REQUIRE(sym.shape == num.shape);
        for (int64_t k = 0; k < sym.numel(); ++k)
            CHECK(std::abs(sym.data[static_cast<size_t>(k)] - num.data[static_cast<size_t>(k)]) <
                  1e-10);
    }
}

TEST_CASE("gradient nodes are differentiable again (second order)") {
    // f = sum(x*x*x); df/dx = 3x^2; d(sum df/dx)/dx = 6x
    CompGraph g;
    NodeId x = g.variable("x", {4});
    NodeId f = g.sum(g.mul(g.mul(x, x), x));
    NodeId df = g.grad_as_node(f, x);
    NodeId g1sum = g.sum(df);
    NodeId d2 = g.grad_as_node(g1sum, x);
    Tensor xv({4}, {0.5, -1.0, 2.0, 0.25});
    g.bind(x, xv);
    const Tensor& first = g.forward(df);
    for (int64_t i = 0; i < 4; ++i)
        CHECK(first.data[static_cast<size_t>(i)] ==
              doctest::Approx(3 * xv.data[static_cast<size_t>(i)] * xv.data[static_cast<size_t>(i)]));
    const Tensor& second = g.forward(d2);
    for (int64_t i = 0; i < 4; ++i)
        CHECK(second.data[static_cast<size_t>(i)] ==
              doctest::Approx(6 * xv.data[static_cast<size_t>(i)]));
}

TEST_CASE("gradient w.r.t. an unreachable variable is zero") {
    CompGraph g;
    NodeId x = g.variable("x", {2});
    NodeId y = g.variable("y", {2});
    NodeId out = g.sum(g.mul(x, x));
    g.bind(x, Tensor({2}, {1.0, 2.0}));
    g.bind(y, Tensor({2}, {3.0, 4.0}));
    g.forward(out);
    GradientBundle grads = g.backward(out, std::vector<NodeId>{y});
    for (double v : grads.at(y).data) CHECK(v == 0.0);
    NodeId gy = g.grad_as_node(out, y);
    for (double v : g.forward(gy).data) CHECK(v == 0.0);
}

TEST_CASE("error paths") {
    CompGraph g;
    NodeId x = g.variable("x", {2, 2});
    NodeId out = g.sum(x);
    CHECK_THROWS(g.forward(out));  // unbound
    CHECK_THROWS(g.bind(x, Tensor::zeros({3})));  // shape mismatch
    Tensor bad = Tensor::zeros({2, 2});
    bad.data[1] = std::nan("");
    CHECK_THROWS(g.bind(x, bad));  // non-finite binding
    CompGraph g2;
    NodeId a = g2.variable("a", {2, 3});
    NodeId b = g2.variable("b", {2, 3});
    CHECK_THROWS(g2.matmul(a, b));  // inner dims disagree
}

TEST_CASE("forward is deterministic and rebindable") {
    CompGraph g;
    NodeId x = g.variable("x", {3});
    NodeId out = g.sum(g.mul(x, x));
    g.bind(x, Tensor({3}, {1, 2, 3}));
    double v1 = g.forward(out).data[0];
    CHECK(v1 == doctest::Approx(14.0));
    g.bind(x, Tensor({3}, {0, 0, 1}));
    CHECK(g.forward(out).data[0] == doctest::Approx(1.0));
    g.bind(x, Tensor({3}, {1, 2, 3}));
    CHECK(g.forward(out).data[0] == v1);
}
