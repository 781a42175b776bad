#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace sps {

/// Top singular triple of a dense matrix, from the eigendecomposition of the
/// smaller Gram matrix. Exact up to LAPACK-level rounding.
struct SingularTriple {
    double sigma = 0.0;
    Eigen::VectorXd left;  // rows()
    Eigen::VectorXd right; // cols()
};

SingularTriple top_singular_triple(const Eigen::MatrixXd& a);

inline double spectral_norm(const Eigen::MatrixXd& a) { return top_singular_triple(a).sigma; }

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace sps
