#include "qrlab/eig.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qrlab {

std::vector<double> symmetric_eigenvalues(const Tensor& sym) {
    if (sym.ndim() != 2 || sym.shape[0] != sym.shape[1])
        throw std::invalid_argument("symmetric_eigenvalues: matrix must be square");
    const int64_t n = sym.shape[0];
    std::vector<double> a = sym.data;
    auto at = [&](int64_t r, int64_t c) -> double& { return a[static_cast<size_t>(r * n + c)]; };

    for (int64_t r = 0; r < n; ++r)
        for (int64_t c = r + 1; c < n; ++c)
            if (std::abs(at(r, c) - at(c, r)) > 1e-12 * (1.0 + std::abs(at(r, c))))
                throw std::invalid_argument("symmetric_eigenvalues: matrix not symmetric");

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0;
        for (int64_t r = 0; r < n; ++r)
            for (int64_t c = r + 1; c < n; ++c) off += at(r, c) * at(r, c);
        if (off < 1e-28 * static_cast<double>(n * n)) {
            std::vector<double> ev(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) ev[static_cast<size_t>(i)] = at(i, i);
            std::sort(ev.begin(), ev.end());
            return ev;
        }
        for (int64_t p = 0; p < n - 1; ++p)
            for (int64_t q = p + 1; q < n; ++q) {
                double apq = at(p, q);
                if (apq == 0.0) continue;
                double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int64_t k = 0; k < n; ++k) {
                    double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int64_t k = 0; k < n; ++k) {
                    double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
    }
    throw std::runtime_error("symmetric_eigenvalues: Jacobi sweeps did not converge");
}

}  // namespace qrlab
