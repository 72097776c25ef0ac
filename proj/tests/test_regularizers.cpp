#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qrlab/data.hpp"
#include "qrlab/eig.hpp"
#include "qrlab/model.hpp"
#include "qrlab/regularizers.hpp"
#include "qrlab/rng.hpp"

#include <cmath>

using namespace qrlab;

namespace {

struct PenaltyFixture {
    ModelSpec spec;
    Model m;
    BatchGraph bg;
    Dataset d;
    std::vector<int64_t> ids;

    explicit PenaltyFixture(uint64_t seed, int64_t batch = 16) {
        spec.hidden = {8};
        m = build_model(spec, seed);
        bg = build_batch_graph(spec, batch);
        d = gen_two_moons(batch, 0.1, seed);
        for (int64_t i = 0; i < batch; ++i) ids.push_back(i);
        bg.bind_params(m);
        bg.bind_batch(d.batch_features(ids), d.batch_onehot(ids));
    }
};

}  // namespace

TEST_CASE("family names round-trip") {
    for (auto f : {RegFamily::None, RegFamily::L1Grad, RegFamily::L2Grad, RegFamily::DqOrtho,
                   RegFamily::DqTrace})
        CHECK(reg_family_from_string(reg_family_name(f)) == f);
    CHECK_THROWS(reg_family_from_string("bogus"));
}

TEST_CASE("l1 penalty value equals lambda-weighted norms of the plain backward pass") {
    PenaltyFixture fx(21);
    RegConfig cfg;
    cfg.family = RegFamily::L1Grad;
    cfg.lambda_w = 0.3;
    cfg.lambda_y = 0.7;
    CompGraph& g = fx.bg.graph;
    NodeId pen = l1_grad_penalty(g, fx.bg.loss, fx.bg.weight_vars, fx.bg.activations, cfg);
    double got = g.forward(pen).data[0];

    g.forward(fx.bg.loss);
    std::vector<NodeId> wrt(fx.bg.weight_vars);
    wrt.insert(wrt.end(), fx.bg.activations.begin(), fx.bg.activations.end());
    GradientBundle gb = g.backward(fx.bg.loss, wrt);
    double want = 0;
    for (NodeId w : fx.bg.weight_vars) want += cfg.lambda_w * l1_norm(gb.at(w));
    for (NodeId a : fx.bg.activations) want += cfg.lambda_y * l1_norm(gb.at(a));
    CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("l2 penalty value matches the plain backward pass") {
    PenaltyFixture fx(22);
    RegConfig cfg;
    cfg.family = RegFamily::L2Grad;
    cfg.lambda_w = 0.5;
    cfg.lambda_y = 0.25;
    CompGraph& g = fx.bg.graph;
    NodeId pen = l2_grad_penalty(g, fx.bg.loss, fx.bg.weight_vars, fx.bg.activations, cfg);
    double got = g.forward(pen).data[0];

    g.forward(fx.bg.loss);
    std::vector<NodeId> wrt(fx.bg.weight_vars);
    wrt.insert(wrt.end(), fx.bg.activations.begin(), fx.bg.activations.end());
    GradientBundle gb = g.backward(fx.bg.loss, wrt);
    double want = 0;
    for (NodeId w : fx.bg.weight_vars)
        want += cfg.lambda_w * std::sqrt(l2_norm(gb.at(w)) * l2_norm(gb.at(w)) + 1e-24);
    for (NodeId a : fx.bg.activations)
        want += cfg.lambda_y * std::sqrt(l2_norm(gb.at(a)) * l2_norm(gb.at(a)) + 1e-24);
    CHECK(std::abs(got - want) < 1e-10);
}

TEST_CASE("penalty scales linearly in lambda") {
    PenaltyFixture fx(23);
    CompGraph& g = fx.bg.graph;
    RegConfig c1;
    c1.family = RegFamily::L1Grad;
    c1.lambda_w = c1.lambda_y = 0.1;
    RegConfig c2 = c1;
    c2.lambda_w = c2.lambda_y = 0.4;
    NodeId p1 = build_penalty(g, fx.bg.loss, fx.bg.weight_vars, fx.bg.activations, c1);
    NodeId p2 = build_penalty(g, fx.bg.loss, fx.bg.weight_vars, fx.bg.activations, c2);
    double v1 = g.forward(p1).data[0];
    double v2 = g.forward(p2).data[0];
    CHECK(v2 == doctest::Approx(4.0 * v1).epsilon(1e-10));
    CHECK(v1 > 0);
}

TEST_CASE("penalty gradients match finite differences of the penalty") {
    PenaltyFixture fx(24, 8);
    RegConfig cfg;
    cfg.family = RegFamily::L1Grad;
    cfg.lambda_w = cfg.lambda_y = 0.05;
    CompGraph& g = fx.bg.graph;
    NodeId pen = build_penalty(g, fx.bg.loss, fx.bg.weight_vars, fx.bg.activations, cfg);
    g.forward(pen);
    GradientBundle grads = g.backward(pen, fx.bg.weight_vars);

    const double h = 1e-6;
    for (size_t pi = 0; pi < fx.m.param_names.size(); ++pi) {
        const std::string& name = fx.m.param_names[pi];
        NodeId var = fx.bg.weight_vars[pi];
        Tensor base = fx.m.params.at(name);
        for (int64_t i = 0; i < std::min<int64_t>(base.numel(), 6); ++i) {
            Tensor plus = base, minus = base;
            plus.data[static_cast<size_t>(i)] += h;
            minus.data[static_cast<size_t>(i)] -= h;
            g.bind(var, plus);
            double fp = g.forward(pen).data[0];
            g.bind(var, minus);
            double fm = g.forward(pen).data[0];
            g.bind(var, base);
            double numeric = (fp - fm) / (2 * h);
            double analytic = grads.at(var).data[static_cast<size_t>(i)];
            INFO(name, " element ", i);
            CHECK(std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)) < 1e-3);
        }
    }
}

TEST_CASE("orthogonality penalty vanishes on orthogonal weights") {
    CompGraph g;
    // 2x2 rotation is orthogonal
    double th = 0.61;
    NodeId w = g.constant(Tensor({2, 2}, {std::cos(th), -std::sin(th), std::sin(th), std::cos(th)}));
    std::vector<NodeId> ws{w};
    NodeId pen = dq_ortho_penalty(g, ws, 1.0);
    CHECK(g.forward(pen).data[0] == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    // scaling the matrix breaks orthogonality
    CompGraph g2;
    NodeId w2 = g2.constant(Tensor({2, 2}, {2 * std::cos(th), -2 * std::sin(th), 2 * std::sin(th),
                                            2 * std::cos(th)}));
    std::vector<NodeId> ws2{w2};
    CHECK(g2.forward(dq_ortho_penalty(g2, ws2, 1.0)).data[0] == doctest::Approx(2 * 9.0));
}

TEST_CASE("trace penalty equals lambda * (frobenius^2 - k) summed over layers") {
    CompGraph g;
    Tensor w({2, 3}, {1, 2, 0, -1, 1, 3});
    NodeId wn = g.constant(w);
    std::vector<NodeId> ws{wn};
    NodeId pen = dq_trace_penalty(g, ws, 0.5);
    double fro2 = 0;
    for (double v : w.data) fro2 += v * v;
    CHECK(g.forward(pen).data[0] == doctest::Approx(0.5 * (fro2 - 3.0)));
}

TEST_CASE("dq penalties skip bias vectors and flatten conv kernels") {
    CompGraph g;
    NodeId b = g.constant(Tensor({5}, {1, 2, 3, 4, 5}));
    std::vector<NodeId> only_bias{b};
    NodeId pen = dq_trace_penalty(g, only_bias, 1.0);
    CHECK(g.forward(pen).data[0] == 0.0);

    CompGraph g2;
    NodeId k = g2.constant(Tensor::full({2, 1, 3, 3}, 0.1));
    std::vector<NodeId> ks{k};
    // flattened to 2x9: ||W||_F^2 = 18*0.01, k = 9
    CHECK(g2.forward(dq_trace_penalty(g2, ks, 1.0)).data[0] == doctest::Approx(0.18 - 9.0));
}

TEST_CASE("none family yields a zero penalty with no gradient effect") {
    PenaltyFixture fx(25);
    RegConfig cfg;
    NodeId pen = build_penalty(fx.bg.graph, fx.bg.loss, fx.bg.weight_vars, fx.bg.activations, cfg);
    CHECK(fx.bg.graph.forward(pen).data[0] == 0.0);
}

TEST_CASE("singular value identity on 100 random matrices up to 32x32") {
    for (uint64_t c = 0; c < 100; ++c) {
        Rng rng(derive_seed(c, "svd-identity"));
        int64_t rows = 1 + static_cast<int64_t>(rng.below(32));
        int64_t cols = 1 + static_cast<int64_t>(rng.below(32));
        Tensor w = Tensor::zeros({rows, cols});
        for (double& v : w.data) v = rng.normal();
        auto [direct, via_sv] = singular_value_identity_check(w);
        CHECK(std::abs(direct - via_sv) < 1e-8 * std::max(1.0, std::abs(direct)));
    }
}

TEST_CASE("jacobi eigenvalues match known spectra") {
    Tensor m({2, 2}, {2, 1, 1, 2});
    auto ev = symmetric_eigenvalues(m);
    REQUIRE(ev.size() == 2);
    CHECK(ev[0] == doctest::Approx(1.0));
    CHECK(ev[1] == doctest::Approx(3.0));
    CHECK_THROWS(symmetric_eigenvalues(Tensor({2, 2}, {1, 2, 3, 4})));  // asymmetric
}
