#include "qrlab/trainer.hpp"

#include "qrlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qrlab {

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("TrainConfig: negative epochs");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("TrainConfig: momentum in [0,1)");
    if (weight_decay < 0) throw std::invalid_argument("TrainConfig: negative weight decay");
    if (reg_start_epoch > epochs)
        throw std::invalid_argument("TrainConfig: reg_start_epoch must be <= epochs");
    reg.validate();
    for (const auto& q : quant_eval) q.validate();
}

namespace {

// Loss graph for one batch size, with the penalty appended as a separate
// head. Gradients for the pre-penalty phase come from the loss node alone,
// so those updates are bit-identical to a penalty-free run.
struct TrainGraphs {
    BatchGraph bg;
    NodeId penalty = -1;
    NodeId total = -1;
};

TrainGraphs make_train_graphs(const ModelSpec& spec, int64_t batch, const RegConfig& reg,
                              const GraphOptions& opt) {
    TrainGraphs tg;
    tg.bg = build_batch_graph(spec, batch, opt);
    CompGraph& g = tg.bg.graph;
    tg.penalty = build_penalty(g, tg.bg.loss, tg.bg.weight_vars, tg.bg.activations, reg);
    tg.total = g.add(tg.bg.loss, tg.penalty);
    return tg;
}

struct SgdState {
    std::map<std::string, Tensor> velocity;
};

void sgd_step(Model& m, const GradientBundle& grads, const std::vector<NodeId>& weight_vars,
              SgdState& st, double lr, double momentum, double weight_decay) {
    for (size_t i = 0; i < m.param_names.size(); ++i) {
        const std::string& name = m.param_names[i];
        Tensor& w = m.params.at(name);
        const Tensor& g = grads.at(weight_vars[i]);
        Tensor& v = st.velocity.emplace(name, Tensor::zeros(w.shape)).first->second;
        for (size_t k = 0; k < w.data.size(); ++k) {
            double total_g = g.data[k] + weight_decay * w.data[k];
            v.data[k] = momentum * v.data[k] + total_g;
            w.data[k] -= lr * v.data[k];
        }
    }
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch, Rng& rng) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)],
                  order[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
    std::vector<std::vector<int64_t>> batches;
    for (int64_t lo = 0; lo < n; lo += batch) {
        int64_t hi = std::min(lo + batch, n);
        batches.emplace_back(order.begin() + lo, order.begin() + hi);
    }
    return batches;
}

}  // namespace

Tensor calibration_batch(const Dataset& train_set, int64_t n) {
    int64_t take = std::min(n, train_set.size());
    std::vector<int64_t> ids(static_cast<size_t>(take));
    for (int64_t i = 0; i < take; ++i) ids[static_cast<size_t>(i)] = i;
    return train_set.batch_features(ids);
}

TrainResult train(const Model& init, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg) {
    cfg.validate();
    TrainResult res;
    res.model = init;
    Model& m = res.model;

    // graphs are cached per batch size (full batches plus one trailing
    // remainder size at most)
    std::map<int64_t, TrainGraphs> graphs;
    auto graphs_for = [&](int64_t b) -> TrainGraphs& {
        auto it = graphs.find(b);
        if (it == graphs.end())
            it = graphs.emplace(b, make_train_graphs(m.spec, b, cfg.reg, {})).first;
        return it->second;
    };

    SgdState sgd;
    Rng shuffle_rng(derive_seed(cfg.seed, "batch-shuffle"));
    bool dq = cfg.reg.family == RegFamily::DqOrtho || cfg.reg.family == RegFamily::DqTrace;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        bool penalty_active = epoch >= cfg.reg_start_epoch && cfg.reg.family != RegFamily::None;
        double loss_sum = 0, penalty_sum = 0, l1_sum = 0, l2_sum = 0;
        auto batches = epoch_batches(train_set.size(), cfg.batch_size, shuffle_rng);

        for (const auto& ids : batches) {
            TrainGraphs& tg = graphs_for(static_cast<int64_t>(ids.size()));
            CompGraph& g = tg.bg.graph;
            tg.bg.bind_params(m);
            tg.bg.bind_batch(train_set.batch_features(ids), train_set.batch_onehot(ids));
            g.forward(tg.total);
            loss_sum += g.value(tg.bg.loss).data[0];
            penalty_sum += g.value(tg.penalty).data[0];

            // CE gradient norms over weights and tracked activations (the
            // full accumulated vector, as in grad_norm_stats)
            {
                std::vector<NodeId> wrt(tg.bg.weight_vars);
                wrt.insert(wrt.end(), tg.bg.activations.begin(), tg.bg.activations.end());
                GradientBundle gb = g.backward(tg.bg.loss, wrt);
                double l1 = 0, l2sq = 0;
                for (const auto& [id, t] : gb) {
                    l1 += l1_norm(t);
                    for (double v : t.data) l2sq += v * v;
                }
                l1_sum += l1;
                l2_sum += std::sqrt(l2sq);
            }

            NodeId objective = penalty_active ? tg.total : tg.bg.loss;
            GradientBundle grads = g.backward(objective, tg.bg.weight_vars);
            // DQ drops weight decay while its penalty drives the update
            double wd = (dq && penalty_active) ? 0.0 : cfg.weight_decay;
            sgd_step(m, grads, tg.bg.weight_vars, sgd, cfg.learning_rate, cfg.momentum, wd);
        }

        MetricsRecord rec;
        rec.epoch = epoch;
        double nb = static_cast<double>(batches.size());
        rec.train_loss = loss_sum / nb;
        rec.penalty = penalty_sum / nb;
        rec.mean_grad_l1 = l1_sum / nb;
        rec.mean_grad_l2 = l2_sum / nb;
        rec.fp_accuracy = evaluate_accuracy(m, val_set);
        if (!cfg.quant_eval.empty()) {
            Tensor calib = calibration_batch(train_set);
            for (const auto& qc : cfg.quant_eval)
                rec.quant_accuracy.push_back(evaluate_quantized(m, val_set, calib, qc));
        }
        res.metrics.push_back(std::move(rec));
    }
    return res;
}

LambdaSearchReport lambda_grid_search(const Model& init, const Dataset& train_set,
                                      const Dataset& val_set,
                                      const std::vector<double>& candidates,
                                      const TrainConfig& base_cfg, double tolerance) {
    if (candidates.empty()) throw std::invalid_argument("lambda_grid_search: no candidates");

    TrainConfig cfg0 = base_cfg;
    cfg0.reg.family = RegFamily::None;
    TrainResult baseline = train(init, train_set, val_set, cfg0);
    LambdaSearchReport report;
    report.baseline_accuracy = baseline.metrics.empty() ? evaluate_accuracy(init, val_set)
                                                        : baseline.metrics.back().fp_accuracy;

    for (double lam : candidates) {
        TrainConfig cfg = base_cfg;
        cfg.reg.lambda_w = lam;
        cfg.reg.lambda_y = lam;
        TrainResult r = train(init, train_set, val_set, cfg);
        LambdaSearchRow row;
        row.lambda = lam;
        row.fp_val_accuracy =
            r.metrics.empty() ? evaluate_accuracy(init, val_set) : r.metrics.back().fp_accuracy;
        row.final_penalty = r.metrics.empty() ? 0 : r.metrics.back().penalty;
        row.final_ce = r.metrics.empty() ? 0 : r.metrics.back().train_loss;
        report.rows.push_back(row);
    }

    double best = -1;
    for (const auto& row : report.rows)
        if (row.fp_val_accuracy >= report.baseline_accuracy - tolerance && row.lambda > best)
            best = row.lambda;
    if (best < 0) {
        // all candidates degrade FP accuracy: fall back to the smallest
        report.all_degraded = true;
        best = *std::min_element(candidates.begin(), candidates.end());
    }
    report.chosen = best;
    return report;
}

SteModel ste_finetune(const Model& pretrained, const Dataset& train_set, const Dataset& val_set,
                      const Tensor& calib_x, const QuantConfig& quant, const TrainConfig& cfg) {
    cfg.validate();
    quant.validate();
    SteModel sm;
    sm.shadow = pretrained;
    sm.target = quant;
    sm.weight_schemes = weight_ranges(pretrained, quant.weight_bits);
    sm.act_schemes = activation_ranges(pretrained, calib_x, quant.act_bits);

    GraphOptions opt;
    opt.weight_schemes = sm.weight_schemes;
    opt.act_schemes = sm.act_schemes;

    std::map<int64_t, TrainGraphs> graphs;
    RegConfig none;
    auto graphs_for = [&](int64_t b) -> TrainGraphs& {
        auto it = graphs.find(b);
        if (it == graphs.end())
            it = graphs.emplace(b, make_train_graphs(pretrained.spec, b, none, opt)).first;
        return it->second;
    };

    SgdState sgd;
    Rng shuffle_rng(derive_seed(cfg.seed, "ste-shuffle"));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = epoch_batches(train_set.size(), cfg.batch_size, shuffle_rng);
        for (const auto& ids : batches) {
            TrainGraphs& tg = graphs_for(static_cast<int64_t>(ids.size()));
            tg.bg.bind_params(sm.shadow);
            tg.bg.bind_batch(train_set.batch_features(ids), train_set.batch_onehot(ids));
            tg.bg.graph.forward(tg.bg.loss);
            GradientBundle grads = tg.bg.graph.backward(tg.bg.loss, tg.bg.weight_vars);
            sgd_step(sm.shadow, grads, tg.bg.weight_vars, sgd, cfg.learning_rate, cfg.momentum,
                     cfg.weight_decay);
        }
    }
    (void)val_set;
    return sm;
}

double evaluate_quantized(const Model& m, const Dataset& test, const Tensor& calib_x,
                          const QuantConfig& qc) {
    qc.validate();
    Model qm = quantize_weights(m, weight_ranges(m, qc.weight_bits));
    // activation ranges observed on the quantized-weight model, so the grids
    // match what inference actually sees
    std::vector<QuantScheme> acts = activation_ranges(qm, calib_x, qc.act_bits);
    return evaluate_accuracy(qm, test, acts);
}

double evaluate_ste_at(const SteModel& sm, const Dataset& test, const Tensor& calib_x,
                       const QuantConfig& qc) {
    qc.validate();
    // target-grid representation: quantize shadow weights on the frozen grid
    auto eval_on_target_grid = [&]() {
        Model qm = quantize_weights(sm.shadow, sm.weight_schemes);
        return evaluate_accuracy(qm, test, sm.act_schemes);
    };
    if (qc.weight_bits == sm.target.weight_bits && qc.act_bits == sm.target.act_bits)
        return eval_on_target_grid();
    double requant = evaluate_quantized(sm.shadow, test, calib_x, qc);
    if (qc.weight_bits >= sm.target.weight_bits && qc.act_bits >= sm.target.act_bits) {
        // higher width: the target grid embeds trivially (ignore extra bits);
        // report the better of truncation and re-quantization
        return std::max(requant, eval_on_target_grid());
    }
    return requant;
}

}  // namespace qrlab
