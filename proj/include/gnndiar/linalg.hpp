#pragma once

#include <Eigen/Dense>
#include <lapacke.h>

#include <string>

#include "gnndiar/errors.hpp"

namespace gnndiar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct SymmetricEigen {
    Vector values;          // ascending
    Matrix vectors;  // column i pairs with values[i]
};

/// Full eigendecomposition of a symmetric matrix (upper triangle is read).
/// Backed by LAPACK divide-and-conquer; Eigen's Jacobi/QR solver is several
/// times slower at the session sizes training sees.
inline SymmetricEigen symmetric_eigen(const Eigen::Ref<const Eigen::MatrixXd>& a, bool with_vectors = true) {
    if (a.rows() != a.cols()) throw UsageError("symmetric_eigen: matrix is not square");
    const auto n = static_cast<lapack_int>(a.rows());
    SymmetricEigen out;
    out.vectors = a;
    out.values.resize(n);
    if (n == 0) return out;
    const lapack_int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, with_vectors ? 'V' : 'N', 'U', n,
                                           out.vectors.data(), n, out.values.data());
    if (info != 0) throw NumericError("eigendecomposition failed (dsyevd info=" + std::to_string(info) + ")");
    if (!with_vectors) out.vectors.resize(0, 0);
    return out;
}

inline Vector symmetric_eigenvalues(const Eigen::Ref<const Eigen::MatrixXd>& a) {
    return symmetric_eigen(a, false).values;
}

inline bool is_symmetric(const Eigen::Ref<const Eigen::MatrixXd>& a, double tol = 1e-12) {
    if (a.rows() != a.cols()) return false;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = i + 1; j < a.cols(); ++j)
            if (std::abs(a(i, j) - a(j, i)) > tol * std::max(1.0, std::abs(a(i, j)))) return false;
    return true;
}

}  // namespace gnndiar
