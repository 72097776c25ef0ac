#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qrlab/analysis.hpp"
#include "qrlab/model.hpp"
#include "qrlab/rng.hpp"
#include "qrlab/trainer.hpp"

#include <cmath>

using namespace qrlab;

TEST_CASE("worst-case perturbation attains delta * l1 norm exactly") {
    for (uint64_t c = 0; c < 50; ++c) {
        Rng rng(derive_seed(c, "wc-pert"));
        Tensor grad = Tensor::zeros({20});
        for (double& v : grad.data) v = rng.normal();
        grad.data[3] = 0.0;  // exercise the sign(0) = 0 convention
        double delta = rng.uniform(0.01, 2.0);
        Tensor p = worst_case_perturbation(grad, delta);
        CHECK(linf_norm(p) <= delta + 1e-15);
        CHECK(p.data[3] == 0.0);
        double inner = 0;
        for (int64_t i = 0; i < 20; ++i)
            inner += p.data[static_cast<size_t>(i)] * grad.data[static_cast<size_t>(i)];
        CHECK(std::abs(inner - delta * l1_norm(grad)) < 1e-12 * std::max(1.0, delta * l1_norm(grad)));
    }
}

TEST_CASE("no box point beats the worst-case value (majorization)") {
    Rng rng(derive_seed(7, "majorize"));
    Tensor grad = Tensor::zeros({12});
    for (double& v : grad.data) v = rng.normal();
    double delta = 0.7;
    double best = delta * l1_norm(grad);
    for (int t = 0; t < 10000; ++t) {
        double inner = 0;
        for (double g : grad.data) inner += rng.uniform(-delta, delta) * g;
        CHECK(inner <= best + 1e-12);
    }
}

TEST_CASE("hoeffding interval reproduces the reference numbers") {
    ConcentrationReport r = hoeffding_interval(1200, 1.0, 0.01);
    CHECK(r.expected == doctest::Approx(100.0));
    CHECK(r.half_width == doctest::Approx(std::sqrt(1200.0 / 32.0 * std::log(200.0))));
    CHECK(r.half_width == doctest::Approx(14.0956).epsilon(1e-4));
    // n=1: center is the expectation of U(-d/2,d/2)^2
    CHECK(hoeffding_interval(1, 0.5, 0.1).expected == doctest::Approx(0.25 / 12.0));
    // half-width shrinks as epsilon grows
    CHECK(hoeffding_interval(100, 1, 0.5).half_width < hoeffding_interval(100, 1, 0.01).half_width);
    CHECK_THROWS(hoeffding_interval(0, 1, 0.1));
    CHECK_THROWS(hoeffding_interval(10, 1, 1.5));
}

TEST_CASE("monte carlo coverage meets the bound") {
    ConcentrationReport r = monte_carlo_norm_check(500, 1.0, 0.05, 20000, 42);
    CHECK(r.empirical_coverage >= 0.95);
    CHECK(monte_carlo_norm_check(100, 1.0, 0.05, 20000, 1).empirical_coverage ==
          monte_carlo_norm_check(100, 1.0, 0.05, 20000, 1).empirical_coverage);
    CHECK_THROWS(monte_carlo_norm_check(10, 1.0, 0.05, 10, 1));  // too few trials
}

TEST_CASE("ks distance behaves") {
    Rng rng(5);
    std::vector<double> uni;
    for (int i = 0; i < 50000; ++i) uni.push_back(rng.uniform(-0.5, 0.5));
    CHECK(ks_distance_uniform_half(uni) < 0.02);
    std::vector<double> atom(1000, 0.0);
    CHECK(ks_distance_uniform_half(atom) > 0.4);
}

TEST_CASE("vertex oracle dominates box sampling and sits at a vertex") {
    for (uint64_t c = 0; c < 5; ++c) {
        Rng rng(derive_seed(c, "oracle"));
        int64_t n = 3 + static_cast<int64_t>(rng.below(4));
        // PSD via A^T A
        Tensor a = Tensor::zeros({n, n});
        for (double& v : a.data) v = rng.normal();
        Tensor h = Tensor::zeros({n, n});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double s = 0;
                for (int64_t k = 0; k < n; ++k) s += a.at(k, i) * a.at(k, j);
                h.at(i, j) = s;
            }
        double delta = rng.uniform(0.1, 1.5);
        double oracle = second_order_vertex_oracle(h, delta);

        double sampled = 0;
        for (int t = 0; t < 20000; ++t) {
            std::vector<double> d(static_cast<size_t>(n));
            for (double& v : d) v = rng.uniform(-delta, delta);
            double q = 0;
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < n; ++j)
                    q += d[static_cast<size_t>(i)] * h.at(i, j) * d[static_cast<size_t>(j)];
            sampled = std::max(sampled, q);
        }
        CHECK(oracle >= sampled - 1e-10);
        // a sign vertex attains the oracle value exactly: delta^2-homogeneous
        CHECK(second_order_vertex_oracle(h, 2 * delta) == doctest::Approx(4 * oracle));
    }
    // indefinite matrices are rejected
    Tensor indef({2, 2}, {1, 0, 0, -1});
    CHECK_THROWS(second_order_vertex_oracle(indef, 1.0));
}

TEST_CASE("lp balls of radius delta sit inside the linf ball") {
    Rng rng(31);
    for (double p : {1.0, 2.0, 4.0}) {
        std::vector<Tensor> samples;
        for (int t = 0; t < 200; ++t) {
            Tensor x = Tensor::zeros({8});
            for (double& v : x.data) v = rng.normal();
            double norm = 0;
            for (double v : x.data) norm += std::pow(std::abs(v), p);
            norm = std::pow(norm, 1.0 / p);
            for (double& v : x.data) v *= 0.9 / norm;  // radius 0.9 <= delta
            samples.push_back(std::move(x));
        }
        CHECK(lp_ball_inclusion_check(samples, p, 0.9));
    }
    // points outside the lp ball are ignored (vacuously consistent)
    std::vector<Tensor> outside{Tensor({2}, {1.5, 1.5})};
    CHECK(lp_ball_inclusion_check(outside, 2.0, 1.0));
    CHECK_THROWS(lp_ball_inclusion_check(outside, 0.5, 1.0));
}

TEST_CASE("first-order report: zero perturbation gives zero everything") {
    ModelSpec spec;
    spec.hidden = {8};
    Model m = build_model(spec, 3);
    Dataset d = gen_two_moons(32, 0.1, 3);
    std::vector<int64_t> ids;
    for (int64_t i = 0; i < 32; ++i) ids.push_back(i);
    std::map<std::string, Tensor> zero;
    for (const auto& [name, t] : m.params) zero.emplace(name, Tensor::zeros(t.shape));
    FirstOrderReport r = first_order_report(m, d.batch_features(ids), d.batch_onehot(ids), zero);
    CHECK(r.predicted == 0.0);
    CHECK(r.actual == 0.0);
    CHECK(r.residual == 0.0);
    CHECK(r.delta_inf_norm == 0.0);
}

TEST_CASE("first-order prediction converges as the perturbation shrinks") {
    ModelSpec spec;
    spec.hidden = {8};
    Model m = build_model(spec, 4);
    Dataset d = gen_two_moons(64, 0.1, 4);
    std::vector<int64_t> ids;
    for (int64_t i = 0; i < 64; ++i) ids.push_back(i);
    Rng rng(11);
    std::map<std::string, Tensor> dir;
    for (const auto& [name, t] : m.params) {
        Tensor p = Tensor::zeros(t.shape);
        for (double& v : p.data) v = rng.uniform(-1, 1);
        dir.emplace(name, std::move(p));
    }
    double prev_ratio = 1e9;
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        std::map<std::string, Tensor> pert;
        for (const auto& [name, t] : dir) {
            Tensor p = t;
            for (double& v : p.data) v *= eps;
            pert.emplace(name, std::move(p));
        }
        FirstOrderReport r = first_order_report(m, d.batch_features(ids), d.batch_onehot(ids), pert);
        double ratio = std::abs(r.residual) / std::max(1e-300, std::abs(r.predicted));
        CHECK(ratio < prev_ratio + 1e-12);  // relative remainder shrinks with eps
        prev_ratio = ratio;
        double max_dir = 0;
        for (const auto& [n2, t2] : dir) max_dir = std::max(max_dir, linf_norm(t2));
        CHECK(r.delta_inf_norm == doctest::Approx(eps * max_dir));
    }
}

TEST_CASE("kl divergence is nonnegative and shrinks at higher widths") {
    ModelSpec spec;
    spec.hidden = {16};
    Model m = build_model(spec, 9);
    Dataset d = gen_two_moons(128, 0.1, 9);
    Tensor calib = calibration_batch(d);
    double kl4 = kl_fp_vs_quantized(m, QuantConfig{4, 4}, d.features, calib);
    double kl12 = kl_fp_vs_quantized(m, QuantConfig{12, 12}, d.features, calib);
    CHECK(kl4 >= 0.0);
    CHECK(kl12 >= 0.0);
    CHECK(kl12 <= kl4 + 1e-9);
}

TEST_CASE("gradient norm stats: norm inequality per batch") {
    ModelSpec spec;
    spec.hidden = {8};
    Model m = build_model(spec, 6);
    Dataset d = gen_two_moons(96, 0.1, 6);
    auto stats = grad_norm_stats(m, d, 32);
    REQUIRE(stats.size() == 3);
    for (const auto& [l1, l2] : stats) {
        CHECK(l2 <= l1 + 1e-12);
        CHECK(l1 > 0);
    }
}

TEST_CASE("noise histogram is a normalized density on [-0.5, 0.5]") {
    ModelSpec spec;
    spec.hidden = {32, 32};
    Model m = build_model(spec, 15);
    NoiseHistogram h = noise_histogram(m, 6);
    REQUIRE(h.bin_edges.size() == h.density.size() + 1);
    CHECK(h.bin_edges.front() == doctest::Approx(-0.5));
    CHECK(h.bin_edges.back() == doctest::Approx(0.5));
    double mass = 0;
    for (double v : h.density) mass += v;
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(h.total_count > 0);
}

TEST_CASE("decision cross-section produces an orthonormal grid") {
    ModelSpec spec;
    spec.hidden = {8};
    Model m = build_model(spec, 21);
    Dataset d = gen_two_moons(64, 0.1, 21);
    CrossSection cs = decision_cross_section(m, d, 5, 1.0, 11, 77);
    CHECK(cs.class_grid.size() == 121);
    CHECK(cs.max_softmax.size() == 121);
    double n1 = 0, n2 = 0, dot = 0;
    for (size_t i = 0; i < cs.dir1.size(); ++i) {
        n1 += cs.dir1[i] * cs.dir1[i];
        n2 += cs.dir2[i] * cs.dir2[i];
        dot += cs.dir1[i] * cs.dir2[i];
    }
    CHECK(n1 == doctest::Approx(1.0));
    CHECK(n2 == doctest::Approx(1.0));
    CHECK(dot == doctest::Approx(0.0).epsilon(1e-10).scale(1.0));
    for (double s : cs.max_softmax) {
        CHECK(s >= 0.5 - 1e-12);  // binary max-softmax is at least 1/2
        CHECK(s <= 1.0 + 1e-12);
    }
    // deterministic per seed
    CrossSection cs2 = decision_cross_section(m, d, 5, 1.0, 11, 77);
    CHECK(cs.dir1 == cs2.dir1);
    CHECK(cs.class_grid == cs2.class_grid);
}
