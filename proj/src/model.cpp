#include "qrlab/model.hpp"

#include "qrlab/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace qrlab {

void ModelSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("ModelSpec: need at least 2 classes");
    if (kind == Kind::Mlp) {
        if (hidden.empty()) throw std::invalid_argument("ModelSpec: MLP needs >= 1 hidden layer");
        for (int64_t w : hidden)
            if (w <= 0) throw std::invalid_argument("ModelSpec: non-positive hidden width");
        if (input_dim <= 0) throw std::invalid_argument("ModelSpec: non-positive input dim");
    } else {
        if (image_side < 8) throw std::invalid_argument("ModelSpec: tiny-conv needs image_side >= 8");
        if (image_side % 4 != 0)
            throw std::invalid_argument("ModelSpec: tiny-conv image_side must be divisible by 4");
        if (input_dim != image_side * image_side)
            throw std::invalid_argument("ModelSpec: input_dim must equal image_side^2");
    }
}

namespace {

Tensor init_uniform(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

constexpr int64_t kConv1Ch = 8;
constexpr int64_t kConv2Ch = 16;

}  // namespace

Model build_model(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, "model-init"));
    Model m;
    m.spec = spec;
    auto put = [&](const std::string& name, Tensor t) {
        m.param_names.push_back(name);
        m.params.emplace(name, std::move(t));
    };
    if (spec.kind == ModelSpec::Kind::Mlp) {
        std::vector<int64_t> widths;
        widths.push_back(spec.input_dim);
        widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
        widths.push_back(spec.classes);
        for (size_t l = 0; l + 1 < widths.size(); ++l) {
            put("w" + std::to_string(l), init_uniform({widths[l], widths[l + 1]}, widths[l], rng));
            put("b" + std::to_string(l), Tensor::zeros({widths[l + 1]}));
        }
    } else {
        put("k0", init_uniform({kConv1Ch, 1, 3, 3}, 9, rng));
        put("k1", init_uniform({kConv2Ch, kConv1Ch, 3, 3}, 9 * kConv1Ch, rng));
        int64_t s = spec.image_side / 4;
        int64_t flat = kConv2Ch * s * s;
        put("w_head", init_uniform({flat, spec.classes}, flat, rng));
        put("b_head", Tensor::zeros({spec.classes}));
    }
    return m;
}

int64_t tracked_activation_count(const ModelSpec& spec) {
    if (spec.kind == ModelSpec::Kind::Mlp)
        return static_cast<int64_t>(spec.hidden.size()) + 1;  // relus + logits
    return 3;                                                 // two relus + logits
}

BatchGraph build_batch_graph(const ModelSpec& spec, int64_t batch, const GraphOptions& opt) {
    spec.validate();
    if (batch < 1) throw std::invalid_argument("build_batch_graph: batch must be >= 1");
    if (!opt.act_schemes.empty() &&
        static_cast<int64_t>(opt.act_schemes.size()) != tracked_activation_count(spec))
        throw std::invalid_argument("build_batch_graph: act_schemes count mismatch");

    BatchGraph bg;
    bg.batch = batch;
    CompGraph& g = bg.graph;
    bg.input = g.variable("x", {batch, spec.input_dim});
    bg.onehot = g.variable("y", {batch, spec.classes});

    size_t act_idx = 0;
    auto track = [&](NodeId a) {
        // fake-quantize the tracked tensor when a scheme is configured; the
        // quantized node replaces the FP one on the downstream path
        if (!opt.act_schemes.empty()) a = g.quantize_ste(a, opt.act_schemes[act_idx]);
        ++act_idx;
        bg.activations.push_back(a);
        return a;
    };
    auto weight = [&](const std::string& name, std::vector<int64_t> shape) {
        NodeId v = g.variable(name, std::move(shape));
        bg.weight_vars.push_back(v);
        auto it = opt.weight_schemes.find(name);
        return it == opt.weight_schemes.end() ? v : g.quantize_ste(v, it->second);
    };

    NodeId cur;
    if (spec.kind == ModelSpec::Kind::Mlp) {
        std::vector<int64_t> widths;
        widths.push_back(spec.input_dim);
        widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
        widths.push_back(spec.classes);
        cur = bg.input;
        for (size_t l = 0; l + 1 < widths.size(); ++l) {
            NodeId w = weight("w" + std::to_string(l), {widths[l], widths[l + 1]});
            NodeId b = weight("b" + std::to_string(l), {widths[l + 1]});
            cur = g.affine(cur, w, b);
            if (l + 2 < widths.size()) cur = track(g.relu(cur));
        }
    } else {
        int64_t side = spec.image_side;
        NodeId img = g.reshape(bg.input, {batch, 1, side, side});
        NodeId k0 = weight("k0", {kConv1Ch, 1, 3, 3});
        NodeId k1 = weight("k1", {kConv2Ch, kConv1Ch, 3, 3});
        NodeId h = g.avg_pool2(track(g.relu(g.conv2d(img, k0, 1))));
        h = g.avg_pool2(track(g.relu(g.conv2d(h, k1, 1))));
        int64_t s = side / 4;
        NodeId flat = g.reshape(h, {batch, kConv2Ch * s * s});
        NodeId w = weight("w_head", {kConv2Ch * s * s, spec.classes});
        NodeId b = weight("b_head", {spec.classes});
        cur = g.affine(flat, w, b);
    }
    bg.logits = cur;
    NodeId logits_q = track(bg.logits);
    bg.loss = g.softmax_xent(logits_q, bg.onehot);
    return bg;
}

void BatchGraph::bind_params(const Model& m) {
    for (size_t i = 0; i < m.param_names.size(); ++i)
        graph.bind(weight_vars[i], m.params.at(m.param_names[i]));
}

void BatchGraph::bind_batch(const Tensor& x, const Tensor& y) {
    graph.bind(input, x);
    graph.bind(onehot, y);
}

std::vector<QuantScheme> activation_ranges(const Model& m, const Tensor& calib_x, int bits) {
    if (calib_x.shape.empty() || calib_x.shape[0] < 1)
        throw std::invalid_argument("activation_ranges: empty calibration batch");
    BatchGraph bg = build_batch_graph(m.spec, calib_x.shape[0]);
    bg.bind_params(m);
    bg.graph.bind(bg.input, calib_x);
    bg.graph.bind(bg.onehot, Tensor::zeros({calib_x.shape[0], m.spec.classes}));
    bg.graph.forward(bg.loss);
    std::vector<QuantScheme> out;
    out.reserve(bg.activations.size());
    for (NodeId a : bg.activations) out.push_back(calibrate_scale(bg.graph.value(a), bits));
    return out;
}

std::map<std::string, QuantScheme> weight_ranges(const Model& m, int bits) {
    std::map<std::string, QuantScheme> out;
    for (const auto& [name, t] : m.params) {
        if (linf_norm(t) == 0.0) continue;  // all-zero tensors (fresh biases) stay FP
        out.emplace(name, calibrate_scale(t, bits));
    }
    return out;
}

Model quantize_weights(const Model& m, const std::map<std::string, QuantScheme>& schemes) {
    Model out = m;
    for (auto& [name, t] : out.params) {
        auto it = schemes.find(name);
        if (it != schemes.end()) t = quantize(t, it->second);
    }
    return out;
}

Tensor predict_softmax(const Model& m, const Tensor& x,
                       const std::vector<QuantScheme>& act_schemes) {
    GraphOptions opt;
    opt.act_schemes = act_schemes;
    BatchGraph bg = build_batch_graph(m.spec, x.shape[0], opt);
    bg.bind_params(m);
    bg.graph.bind(bg.input, x);
    bg.graph.bind(bg.onehot, Tensor::zeros({x.shape[0], m.spec.classes}));
    // evaluate through the (possibly quantized) logits activation node
    NodeId last_logits = bg.activations.back();
    NodeId sm = bg.graph.softmax(last_logits);
    bg.graph.forward(sm);
    return bg.graph.value(sm);
}

double evaluate_accuracy(const Model& m, const Dataset& data,
                         const std::vector<QuantScheme>& act_schemes) {
    Tensor probs = predict_softmax(m, data.features, act_schemes);
    int64_t correct = 0;
    for (int64_t i = 0; i < data.size(); ++i) {
        int64_t best = 0;
        for (int64_t c = 1; c < probs.shape[1]; ++c)
            if (probs.at(i, c) > probs.at(i, best)) best = c;
        if (best == data.labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace qrlab
