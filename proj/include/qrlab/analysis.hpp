#pragma once

#include "qrlab/data.hpp"
#include "qrlab/model.hpp"
#include "qrlab/quantizer.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace qrlab {

// Predicted vs actual induced loss under a weight perturbation.
struct FirstOrderReport {
    double predicted = 0;       // sum_l <delta_l, grad_l>
    double actual = 0;          // L(w + delta) - L(w)
    double residual = 0;        // actual - predicted (second-order remainder)
    double delta_inf_norm = 0;
};

struct ConcentrationReport {
    int64_t n = 0;
    double delta = 0;
    double epsilon = 0;
    double expected = 0;            // n * delta^2 / 12
    double half_width = 0;          // sqrt(n * delta^4 / 32 * ln(2/eps))
    double empirical_coverage = 0;  // fraction of draws inside the interval
};

struct CrossSection {
    int64_t center_example = 0;
    std::vector<double> dir1, dir2;  // orthonormal directions in input space
    double radius = 0;
    int64_t resolution = 0;
    std::vector<int> class_grid;        // resolution x resolution, row-major
    std::vector<double> max_softmax;    // same layout
};

// delta * sign(grad), with sign(0) = 0; attains <out, grad> = delta*||grad||_1.
Tensor worst_case_perturbation(const Tensor& grad, double delta);

// One backward pass for the prediction, one re-evaluation for the actual.
FirstOrderReport first_order_report(const Model& m, const Tensor& batch_x,
                                    const Tensor& batch_onehot,
                                    const std::map<std::string, Tensor>& perturbation);

// Mean over the batch of KL(fp softmax || quantized-model softmax), with the
// quantized probabilities floored at 1e-12 before the log.
double kl_fp_vs_quantized(const Model& m, const QuantConfig& qc, const Tensor& batch_x,
                          const Tensor& calib_x);

// Per-batch (l1, l2) norms of the CE gradient with all weight and tracked
// activation gradients concatenated into one vector.
std::vector<std::pair<double, double>> grad_norm_stats(const Model& m, const Dataset& data,
                                                       int64_t batch_size);

// Hoeffding interval for ||delta_vec||_2^2 with iid entries on [-d/2, d/2].
ConcentrationReport hoeffding_interval(int64_t n, double delta, double epsilon);

// Monte Carlo coverage of that interval with `trials` random vectors.
ConcentrationReport monte_carlo_norm_check(int64_t n, double delta, double epsilon,
                                           int64_t trials, uint64_t seed);

struct NoiseHistogram {
    std::vector<double> bin_edges;   // bins + 1 edges spanning [-0.5, 0.5]
    std::vector<double> density;     // normalized so the masses sum to 1
    double ks_distance_uniform = 0;  // KS distance of noise/scale vs U(-0.5, 0.5)
    int64_t total_count = 0;
};

// Pools quant_noise over all weight tensors, scaled per tensor by its bin
// width, and bins into [-0.5, 0.5].
NoiseHistogram noise_histogram(const Model& m, int weight_bits, int64_t bins = 50);

// KS distance of samples against U(-0.5, 0.5); exposed for tests.
double ks_distance_uniform_half(std::vector<double> samples);

CrossSection decision_cross_section(const Model& m, const Dataset& data, int64_t example_id,
                                    double radius, int64_t resolution, uint64_t seed);

// Exact max of d^T H d over ||d||_inf <= delta for PSD H by enumerating all
// 2^n sign vertices (a convex maximum over a box sits at a vertex). Equals
// delta^2 * ||H^{1/2}||^2_{inf->2}.
double second_order_vertex_oracle(const Tensor& hessian, double delta);

// Verifies every sample with ||x||_p <= delta also has ||x||_inf <= delta.
bool lp_ball_inclusion_check(const std::vector<Tensor>& samples, double p, double delta);

}  // namespace qrlab
