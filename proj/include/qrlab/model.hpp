#pragma once

#include "qrlab/data.hpp"
#include "qrlab/graph.hpp"
#include "qrlab/quantizer.hpp"

#include <map>
#include <string>
#include <vector>

namespace qrlab {

struct ModelSpec {
    enum class Kind { Mlp, TinyConv };
    Kind kind = Kind::Mlp;
    std::vector<int64_t> hidden = {16, 16};  // MLP hidden widths
    int64_t input_dim = 2;
    int64_t classes = 2;
    // tiny-conv only: input is a single-channel image_side x image_side image
    // (input_dim must equal image_side^2); 2 conv layers (8, 16 channels,
    // 3x3, stride 1, pad 1), each followed by relu + 2x2 average pooling,
    // then a dense head
    int64_t image_side = 0;

    void validate() const;
};

struct Model {
    ModelSpec spec;
    std::vector<std::string> param_names;  // fixed order, matches graph construction
    std::map<std::string, Tensor> params;

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [k, v] : params) n += v.numel();
        return n;
    }
};

// Initialized with uniform(-1, 1)/sqrt(fan_in), deterministic per seed.
Model build_model(const ModelSpec& spec, uint64_t seed);

struct GraphOptions {
    // Fake-quantize weights through STE nodes with these per-parameter
    // schemes (shadow-weight training). Empty map = plain FP weights.
    std::map<std::string, QuantScheme> weight_schemes;
    // Fake-quantize each tracked activation; must have one scheme per
    // tracked activation (relu outputs then logits) or be empty.
    std::vector<QuantScheme> act_schemes;
};

// One cross-entropy loss graph for a fixed batch size. Weights, input and
// labels are variables, so the graph is built once and rebound per batch.
struct BatchGraph {
    CompGraph graph;
    int64_t batch = 0;
    NodeId input = -1;
    NodeId onehot = -1;
    NodeId logits = -1;
    NodeId loss = -1;
    std::vector<NodeId> weight_vars;   // aligned with Model::param_names
    std::vector<NodeId> activations;   // tracked set: post-relu outputs + logits

    void bind_params(const Model& m);
    void bind_batch(const Tensor& x, const Tensor& y);
};

BatchGraph build_batch_graph(const ModelSpec& spec, int64_t batch, const GraphOptions& opt = {});

// Number of tracked activation tensors for a spec (relu outputs + logits).
int64_t tracked_activation_count(const ModelSpec& spec);

// Observed-max activation ranges over a calibration batch; one scheme per
// tracked activation. Substitute for batch-norm-derived ranges, which these
// desk-scale models do not have. Throws on a degenerate (all-zero) range.
std::vector<QuantScheme> activation_ranges(const Model& m, const Tensor& calib_x, int bits);

// Per-tensor symmetric-max weight schemes.
std::map<std::string, QuantScheme> weight_ranges(const Model& m, int bits);

// Model with every parameter tensor replaced by its quantized version.
Model quantize_weights(const Model& m, const std::map<std::string, QuantScheme>& schemes);

// Classification accuracy of the model on a dataset, optionally with
// fake-quantized activations.
double evaluate_accuracy(const Model& m, const Dataset& data,
                         const std::vector<QuantScheme>& act_schemes = {});

// Softmax outputs (N x classes) on a feature batch.
Tensor predict_softmax(const Model& m, const Tensor& x,
                       const std::vector<QuantScheme>& act_schemes = {});

}  // namespace qrlab
