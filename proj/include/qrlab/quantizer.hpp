#pragma once

#include "qrlab/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace qrlab {

// Uniform symmetric quantization grid: integer multiples k*scale with
// k in [-(2^{bits-1}-1), 2^{bits-1}-1]. scale is the bin width.
struct QuantScheme {
    int bits = 8;
    double scale = 1.0;
    double zero_point = 0.0;  // fixed at 0 in symmetric mode
    bool symmetric = true;

    int64_t max_level() const { return (int64_t{1} << (bits - 1)) - 1; }

    void validate() const {
        if (bits < 2) throw std::invalid_argument("QuantScheme: bits must be >= 2");
        if (!(scale > 0.0)) throw std::invalid_argument("QuantScheme: scale must be positive");
        if (!symmetric || zero_point != 0.0)
            throw std::invalid_argument("QuantScheme: only symmetric zero-point-0 mode supported");
    }
};

struct QuantConfig {
    int weight_bits = 8;
    int act_bits = 8;

    void validate() const {
        if (weight_bits < 2 || weight_bits > 16 || act_bits < 2 || act_bits > 16)
            throw std::invalid_argument("QuantConfig: bits must be in [2, 16]");
    }
};

// Symmetric-max calibration: the largest magnitude maps exactly to the top
// level, so no value is clamped and noise stays within scale/2.
QuantScheme calibrate_scale(const Tensor& x, int bits);

double quantize_value(double v, const QuantScheme& s);
Tensor quantize(const Tensor& x, const QuantScheme& s);

// quantize(x, s) - x
Tensor quant_noise(const Tensor& x, const QuantScheme& s);

}  // namespace qrlab
