#pragma once

#include <Eigen/Dense>

#include "lotmerge/errors.hpp"

namespace lotmerge {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thin SVD of a real matrix: a = u * sigma.asDiagonal() * vt, with sigma
/// sorted descending and u / vt carrying orthonormal columns / rows.
struct SvdFactors {
    Matrix u;
    Vector sigma;
    Matrix vt;

    Matrix reconstruct() const { return u * sigma.asDiagonal() * vt; }
};

bool all_finite(const Matrix& a);

/// Throws FormatError(BadValue) naming `what` if `a` contains NaN/Inf.
void require_finite(const Matrix& a, const std::string& what);

/// Matrix product with explicit dimension checking (64-bit accumulation).
Matrix matmul(const Matrix& a, const Matrix& b);

SvdFactors svd(const Matrix& a);

/// Number of singular values above rel_tol * sigma_max.
Index truncated_rank(const Vector& sigma, double rel_tol);

/// Moore-Penrose pseudoinverse. Singular values sigma_i <= rel_tol * sigma_max
/// are treated as zero, so the result is the minimum-norm least-squares inverse
/// on the truncated rank.
Matrix pinv(const Matrix& a, double rel_tol = 1e-12);
Matrix pinv(const SvdFactors& f, double rel_tol = 1e-12);

/// Largest singular value; 0 for an empty matrix.
double spectral_norm(const Matrix& a);

}  // namespace lotmerge
