#pragma once

#include "grokscope/core/matrix.hpp"

#include <vector>

namespace grokscope {

struct EigenDecomposition {
    std::vector<double> values; // descending, not clamped
    Matrix vectors;             // column k pairs with values[k]; empty unless requested
    int sweeps = 0;
    double off_diagonal_norm = 0.0;
};

// Cyclic Jacobi on (m + m^T)/2. Stops when the off-diagonal Frobenius norm
// drops below 1e-12 * ||m||_F or after 100 sweeps.
// Throws std::invalid_argument for non-square input or asymmetry above
// 1e-9 * max(1, max|m_ij|), NumericError for non-finite entries.
EigenDecomposition jacobi_eigen(const Matrix& m, bool want_vectors = false);

// Eigenvalues only, via Householder tridiagonalisation and implicit-shift QL.
// Descending, negatives clamped to zero. Same input checks as jacobi_eigen.
std::vector<double> sym_eigvals(const Matrix& m);

} // namespace grokscope
