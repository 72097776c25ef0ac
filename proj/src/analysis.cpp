#include "qrlab/analysis.hpp"

#include "qrlab/eig.hpp"
#include "qrlab/rng.hpp"
#include "qrlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qrlab {

Tensor worst_case_perturbation(const Tensor& grad, double delta) {
    if (delta < 0) throw std::invalid_argument("worst_case_perturbation: delta must be >= 0");
    Tensor out = grad;
    for (double& v : out.data) v = v > 0 ? delta : (v < 0 ? -delta : 0.0);
    return out;
}

FirstOrderReport first_order_report(const Model& m, const Tensor& batch_x,
                                    const Tensor& batch_onehot,
                                    const std::map<std::string, Tensor>& perturbation) {
    BatchGraph bg = build_batch_graph(m.spec, batch_x.shape[0]);
    bg.bind_params(m);
    bg.bind_batch(batch_x, batch_onehot);
    double base = bg.graph.forward(bg.loss).data[0];
    GradientBundle grads = bg.graph.backward(bg.loss, bg.weight_vars);

    FirstOrderReport rep;
    Model perturbed = m;
    for (size_t i = 0; i < m.param_names.size(); ++i) {
        const std::string& name = m.param_names[i];
        auto it = perturbation.find(name);
        if (it == perturbation.end()) continue;
        const Tensor& d = it->second;
        if (d.shape != m.params.at(name).shape)
            throw std::invalid_argument("first_order_report: perturbation shape mismatch for " + name);
        const Tensor& g = grads.at(bg.weight_vars[i]);
        for (size_t k = 0; k < d.data.size(); ++k) rep.predicted += d.data[k] * g.data[k];
        rep.delta_inf_norm = std::max(rep.delta_inf_norm, linf_norm(d));
        Tensor& w = perturbed.params.at(name);
        for (size_t k = 0; k < d.data.size(); ++k) w.data[k] += d.data[k];
    }

    bg.bind_params(perturbed);
    rep.actual = bg.graph.forward(bg.loss).data[0] - base;
    rep.residual = rep.actual - rep.predicted;
    return rep;
}

double kl_fp_vs_quantized(const Model& m, const QuantConfig& qc, const Tensor& batch_x,
                          const Tensor& calib_x) {
    Tensor p = predict_softmax(m, batch_x);
    Model qm = quantize_weights(m, weight_ranges(m, qc.weight_bits));
    std::vector<QuantScheme> acts = activation_ranges(qm, calib_x, qc.act_bits);
    Tensor q = predict_softmax(qm, batch_x, acts);

    double total = 0;
    for (int64_t i = 0; i < p.shape[0]; ++i)
        for (int64_t c = 0; c < p.shape[1]; ++c) {
            double pi = p.at(i, c);
            if (pi <= 0) continue;
            double qi = std::max(q.at(i, c), 1e-12);
            total += pi * std::log(pi / qi);
        }
    return total / static_cast<double>(p.shape[0]);
}

std::vector<std::pair<double, double>> grad_norm_stats(const Model& m, const Dataset& data,
                                                       int64_t batch_size) {
    if (data.size() < 1) throw std::invalid_argument("grad_norm_stats: empty dataset");
    std::vector<std::pair<double, double>> out;
    for (int64_t lo = 0; lo < data.size(); lo += batch_size) {
        int64_t hi = std::min(lo + batch_size, data.size());
        std::vector<int64_t> ids;
        for (int64_t i = lo; i < hi; ++i) ids.push_back(i);
        BatchGraph bg = build_batch_graph(m.spec, hi - lo);
        bg.bind_params(m);
        bg.bind_batch(data.batch_features(ids), data.batch_onehot(ids));
        bg.graph.forward(bg.loss);
        std::vector<NodeId> wrt(bg.weight_vars);
        wrt.insert(wrt.end(), bg.activations.begin(), bg.activations.end());
        GradientBundle gb = bg.graph.backward(bg.loss, wrt);
        double l1 = 0, l2sq = 0;
        for (const auto& [id, t] : gb) {
            l1 += l1_norm(t);
            for (double v : t.data) l2sq += v * v;
        }
        out.emplace_back(l1, std::sqrt(l2sq));
    }
    return out;
}

ConcentrationReport hoeffding_interval(int64_t n, double delta, double epsilon) {
    if (n < 1) throw std::invalid_argument("hoeffding_interval: n must be >= 1");
    if (!(delta > 0)) throw std::invalid_argument("hoeffding_interval: delta must be > 0");
    if (!(epsilon > 0 && epsilon < 1))
        throw std::invalid_argument("hoeffding_interval: epsilon must be in (0, 1)");
    ConcentrationReport r;
    r.n = n;
    r.delta = delta;
    r.epsilon = epsilon;
    double nd = static_cast<double>(n);
    r.expected = nd * delta * delta / 12.0;
    r.half_width = std::sqrt(nd * std::pow(delta, 4) / 32.0 * std::log(2.0 / epsilon));
    return r;
}

ConcentrationReport monte_carlo_norm_check(int64_t n, double delta, double epsilon,
                                           int64_t trials, uint64_t seed) {
    if (trials < 1000) throw std::invalid_argument("monte_carlo_norm_check: trials must be >= 1000");
    ConcentrationReport r;
    if (delta == 0.0) {
        // all norms are exactly 0; the degenerate interval [0, 0] covers them
        r.n = n;
        r.delta = 0;
        r.epsilon = epsilon;
        r.empirical_coverage = 1.0;
        return r;
    }
    r = hoeffding_interval(n, delta, epsilon);
    Rng rng(derive_seed(seed, "mc-norm-check"));
    double lo = r.expected - r.half_width, hi = r.expected + r.half_width;
    int64_t inside = 0;
    for (int64_t t = 0; t < trials; ++t) {
        double sq = 0;
        for (int64_t i = 0; i < n; ++i) {
            double x = rng.uniform(-delta / 2.0, delta / 2.0);
            sq += x * x;
        }
        if (sq >= lo && sq <= hi) ++inside;
    }
    r.empirical_coverage = static_cast<double>(inside) / static_cast<double>(trials);
    return r;
}

double ks_distance_uniform_half(std::vector<double> samples) {
    if (samples.empty()) throw std::invalid_argument("ks_distance_uniform_half: no samples");
    std::sort(samples.begin(), samples.end());
    double nd = static_cast<double>(samples.size());
    double ks = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        double cdf = std::clamp(samples[i] + 0.5, 0.0, 1.0);  // U(-0.5, 0.5) CDF
        double lo = static_cast<double>(i) / nd;
        double hi = static_cast<double>(i + 1) / nd;
        ks = std::max(ks, std::max(std::abs(cdf - lo), std::abs(cdf - hi)));
    }
    return ks;
}

NoiseHistogram noise_histogram(const Model& m, int weight_bits, int64_t bins) {
    std::vector<double> scaled;
    for (const auto& [name, t] : m.params) {
        if (linf_norm(t) == 0.0) continue;
        QuantScheme s = calibrate_scale(t, weight_bits);
        Tensor noise = quant_noise(t, s);
        for (double v : noise.data) scaled.push_back(v / s.scale);
    }
    if (scaled.empty()) throw std::domain_error("noise_histogram: no quantizable weights");

    NoiseHistogram h;
    h.total_count = static_cast<int64_t>(scaled.size());
    h.bin_edges.resize(static_cast<size_t>(bins + 1));
    for (int64_t i = 0; i <= bins; ++i)
        h.bin_edges[static_cast<size_t>(i)] = -0.5 + static_cast<double>(i) / static_cast<double>(bins);
    h.density.assign(static_cast<size_t>(bins), 0.0);
    for (double v : scaled) {
        int64_t b = static_cast<int64_t>((v + 0.5) * static_cast<double>(bins));
        b = std::clamp(b, int64_t{0}, bins - 1);
        h.density[static_cast<size_t>(b)] += 1.0;
    }
    for (double& d : h.density) d /= static_cast<double>(h.total_count);
    h.ks_distance_uniform = ks_distance_uniform_half(std::move(scaled));
    return h;
}

CrossSection decision_cross_section(const Model& m, const Dataset& data, int64_t example_id,
                                    double radius, int64_t resolution, uint64_t seed) {
    if (example_id < 0 || example_id >= data.size())
        throw std::invalid_argument("decision_cross_section: example id out of range");
    if (resolution < 2) throw std::invalid_argument("decision_cross_section: resolution must be >= 2");

    int64_t d = data.dim();
    Rng rng(derive_seed(seed, "cross-section"));
    std::vector<double> d1(static_cast<size_t>(d)), d2(static_cast<size_t>(d));
    const int max_retries = 16;
    bool ok = false;
    for (int attempt = 0; attempt < max_retries && !ok; ++attempt) {
        for (auto& v : d1) v = rng.normal();
        for (auto& v : d2) v = rng.normal();
        // Gram-Schmidt
        double n1 = 0;
        for (double v : d1) n1 += v * v;
        n1 = std::sqrt(n1);
        if (n1 < 1e-9) continue;
        for (auto& v : d1) v /= n1;
        double dot = 0;
        for (int64_t i = 0; i < d; ++i) dot += d1[static_cast<size_t>(i)] * d2[static_cast<size_t>(i)];
        for (int64_t i = 0; i < d; ++i) d2[static_cast<size_t>(i)] -= dot * d1[static_cast<size_t>(i)];
        double n2 = 0;
        for (double v : d2) n2 += v * v;
        n2 = std::sqrt(n2);
        if (n2 < 1e-9) continue;
        for (auto& v : d2) v /= n2;
        ok = true;
    }
    if (!ok) throw std::runtime_error("decision_cross_section: degenerate directions");

    CrossSection cs;
    cs.center_example = example_id;
    cs.dir1 = d1;
    cs.dir2 = d2;
    cs.radius = radius;
    cs.resolution = resolution;

    Tensor center = data.example(example_id);
    int64_t total = resolution * resolution;
    Tensor grid = Tensor::zeros({total, d});
    for (int64_t r = 0; r < resolution; ++r) {
        double a = -radius + 2.0 * radius * static_cast<double>(r) / static_cast<double>(resolution - 1);
        for (int64_t c = 0; c < resolution; ++c) {
            double b = -radius + 2.0 * radius * static_cast<double>(c) / static_cast<double>(resolution - 1);
            int64_t row = r * resolution + c;
            for (int64_t j = 0; j < d; ++j)
                grid.at(row, j) = center.at(0, j) + a * d1[static_cast<size_t>(j)] +
                                  b * d2[static_cast<size_t>(j)];
        }
    }
    Tensor probs = predict_softmax(m, grid);
    cs.class_grid.resize(static_cast<size_t>(total));
    cs.max_softmax.resize(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) {
        int64_t best = 0;
        for (int64_t c = 1; c < probs.shape[1]; ++c)
            if (probs.at(i, c) > probs.at(i, best)) best = c;
        cs.class_grid[static_cast<size_t>(i)] = static_cast<int>(best);
        cs.max_softmax[static_cast<size_t>(i)] = probs.at(i, best);
    }
    return cs;
}

double second_order_vertex_oracle(const Tensor& hessian, double delta) {
    if (hessian.ndim() != 2 || hessian.shape[0] != hessian.shape[1])
        throw std::invalid_argument("second_order_vertex_oracle: H must be square");
    int64_t n = hessian.shape[0];
    if (n > 20) throw std::invalid_argument("second_order_vertex_oracle: n too large (n <= 20)");
    std::vector<double> ev = symmetric_eigenvalues(hessian);
    if (ev.front() < -1e-10)
        throw std::invalid_argument("second_order_vertex_oracle: H is not positive semi-definite");

    double best = 0;
    for (uint64_t mask = 0; mask < (uint64_t{1} << n); ++mask) {
        double q = 0;
        for (int64_t i = 0; i < n; ++i) {
            double si = (mask >> i) & 1 ? 1.0 : -1.0;
            double row = 0;
            for (int64_t j = 0; j < n; ++j) {
                double sj = (mask >> j) & 1 ? 1.0 : -1.0;
                row += hessian.at(i, j) * sj;
            }
            q += si * row;
        }
        best = std::max(best, q);
    }
    return delta * delta * best;
}

bool lp_ball_inclusion_check(const std::vector<Tensor>& samples, double p, double delta) {
    if (p < 1) throw std::invalid_argument("lp_ball_inclusion_check: p must be >= 1");
    for (const Tensor& x : samples) {
        double norm_p = 0;
        for (double v : x.data) norm_p += std::pow(std::abs(v), p);
        norm_p = std::pow(norm_p, 1.0 / p);
        if (norm_p <= delta && linf_norm(x) > delta) return false;
    }
    return true;
}

}  // namespace qrlab
