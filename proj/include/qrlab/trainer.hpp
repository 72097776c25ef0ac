#pragma once

#include "qrlab/data.hpp"
#include "qrlab/model.hpp"
#include "qrlab/quantizer.hpp"
#include "qrlab/regularizers.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace qrlab {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 64;
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    RegConfig reg;
    int reg_start_epoch = 0;  // penalty affects updates from this epoch on
    uint64_t seed = 1;
    std::vector<QuantConfig> quant_eval;  // per-epoch quantized eval configs

    void validate() const;
};

struct MetricsRecord {
    int epoch = 0;
    double train_loss = 0;
    double penalty = 0;                   // reported every epoch, applied from reg_start_epoch
    double fp_accuracy = 0;               // validation accuracy
    std::vector<double> quant_accuracy;   // per TrainConfig::quant_eval entry
    double mean_grad_l1 = 0;              // per-batch CE gradient norms, epoch mean
    double mean_grad_l2 = 0;
};

struct TrainResult {
    Model model;
    std::vector<MetricsRecord> metrics;
};

// SGD with momentum on the cross-entropy loss, adding the configured penalty
// from reg_start_epoch onward. Deterministic given (config, seed).
TrainResult train(const Model& init, const Dataset& train_set, const Dataset& val_set,
                  const TrainConfig& cfg);

struct LambdaSearchRow {
    double lambda = 0;
    double fp_val_accuracy = 0;
    double final_penalty = 0;
    double final_ce = 0;
};

struct LambdaSearchReport {
    double chosen = 0;
    bool all_degraded = false;  // every candidate fell below the tolerance
    double baseline_accuracy = 0;
    std::vector<LambdaSearchRow> rows;
};

// Trains one model per candidate and picks the largest lambda whose FP
// validation accuracy stays within `tolerance` of the best unregularized
// accuracy. No quantized validation is used during selection.
LambdaSearchReport lambda_grid_search(const Model& init, const Dataset& train_set,
                                      const Dataset& val_set,
                                      const std::vector<double>& candidates,
                                      const TrainConfig& base_cfg, double tolerance = 0.005);

// Quantization-aware fine-tuning state: full-precision shadow weights plus
// the frozen grids they were trained against.
struct SteModel {
    Model shadow;
    std::map<std::string, QuantScheme> weight_schemes;
    std::vector<QuantScheme> act_schemes;
    QuantConfig target;
};

// Fine-tunes shadow weights through STE quantizers on grids fixed at entry
// (weights calibrated per tensor, activations from the calibration batch).
SteModel ste_finetune(const Model& pretrained, const Dataset& train_set, const Dataset& val_set,
                      const Tensor& calib_x, const QuantConfig& quant, const TrainConfig& cfg);

// Post-training quantization accuracy: weights quantized per tensor with
// calibrated scales, activations fake-quantized at the tracked nodes using
// ranges calibrated on `calib_x`.
double evaluate_quantized(const Model& m, const Dataset& test, const Tensor& calib_x,
                          const QuantConfig& qc);

// Accuracy of an STE-fine-tuned model at an arbitrary bit-width. At or below
// the target this re-quantizes the shadow weights; above the target both the
// target-grid representation (bit truncation) and re-quantization at the
// higher width are evaluated and the better one is reported.
double evaluate_ste_at(const SteModel& sm, const Dataset& test, const Tensor& calib_x,
                       const QuantConfig& qc);

// First `n` training examples (dataset size permitting) as one feature batch.
Tensor calibration_batch(const Dataset& train_set, int64_t n = 256);

}  // namespace qrlab
