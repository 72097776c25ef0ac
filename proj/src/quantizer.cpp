#include "qrlab/quantizer.hpp"

namespace qrlab {

QuantScheme calibrate_scale(const Tensor& x, int bits) {
    if (bits < 2 || bits > 16) throw std::invalid_argument("calibrate_scale: bits must be in [2, 16]");
    if (x.numel() == 0) throw std::invalid_argument("calibrate_scale: empty tensor");
    double maxabs = linf_norm(x);
    if (maxabs == 0.0)
        throw std::domain_error("calibrate_scale: degenerate input (all-zero tensor)");
    QuantScheme s;
    s.bits = bits;
    s.scale = maxabs / static_cast<double>((int64_t{1} << (bits - 1)) - 1);
    s.zero_point = 0.0;
    s.symmetric = true;
    return s;
}

double quantize_value(double v, const QuantScheme& s) {
    // round-half-away-from-zero (std::round), clamp to the level range
    double k = std::round(v / s.scale);
    double m = static_cast<double>(s.max_level());
    if (k > m) k = m;
    if (k < -m) k = -m;
    return k * s.scale;
}

Tensor quantize(const Tensor& x, const QuantScheme& s) {
    s.validate();
    Tensor out = x;
    for (double& v : out.data) v = quantize_value(v, s);
    return out;
}

Tensor quant_noise(const Tensor& x, const QuantScheme& s) {
    s.validate();
    Tensor out = x;
    for (double& v : out.data) v = quantize_value(v, s) - v;
    return out;
}

}  // namespace qrlab
