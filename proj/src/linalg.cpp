#include "lotmerge/linalg.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <sstream>

namespace lotmerge {

bool all_finite(const Matrix& a) { return a.allFinite(); }

void require_finite(const Matrix& a, const std::string& what) {
    if (!a.allFinite()) {
        throw FormatError(FormatError::Code::BadValue, what + ": non-finite entries");
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        std::ostringstream msg;
        msg << "matmul: inner dimensions do not match (" << a.rows() << "x" << a.cols()
            << " times " << b.rows() << "x" << b.cols() << ")";
        throw ShapeError(msg.str());
    }
    return a * b;
}

SvdFactors svd(const Matrix& a) {
    if (!a.allFinite()) {
        throw NumericalError("svd: input has non-finite entries");
    }
    Eigen::JacobiSVD<Matrix> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success) {
        throw NumericalError("svd: decomposition did not converge");
    }
    return SvdFactors{dec.matrixU(), dec.singularValues(), dec.matrixV().transpose()};
}

Index truncated_rank(const Vector& sigma, double rel_tol) {
    if (sigma.size() == 0) return 0;
    const double cut = rel_tol * sigma(0);
    Index r = 0;
    while (r < sigma.size() && sigma(r) > cut) ++r;
    return r;
}

Matrix pinv(const SvdFactors& f, double rel_tol) {
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) {
        throw ArgumentError("pinv: rel_tol must lie in (0,1)");
    }
    const Index r = truncated_rank(f.sigma, rel_tol);
    Vector inv = Vector::Zero(f.sigma.size());
    for (Index i = 0; i < r; ++i) inv(i) = 1.0 / f.sigma(i);
    return f.vt.transpose() * inv.asDiagonal() * f.u.transpose();
}

Matrix pinv(const Matrix& a, double rel_tol) { return pinv(svd(a), rel_tol); }

double spectral_norm(const Matrix& a) {
    if (a.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> dec(a);
    return dec.singularValues().size() > 0 ? dec.singularValues()(0) : 0.0;
}

}  // namespace lotmerge
