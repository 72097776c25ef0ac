#pragma once

#include "qrlab/tensor.hpp"

#include <vector>

namespace qrlab {

// Eigenvalues of a symmetric n x n matrix by cyclic Jacobi rotations,
// ascending order. Intended for the small matrices this project handles
// (n <= 64); throws if the sweep limit is exhausted before convergence.
std::vector<double> symmetric_eigenvalues(const Tensor& sym);

}  // namespace qrlab
