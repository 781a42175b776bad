#include "sps/linalg.hpp"

#include <Eigen/Eigenvalues>

namespace sps {

SingularTriple top_singular_triple(const Eigen::MatrixXd& a) {
    SingularTriple out;
    if (a.size() == 0) {
        out.left = Eigen::VectorXd::Zero(a.rows());
        out.right = Eigen::VectorXd::Zero(a.cols());
        return out;
    }
    const bool tall = a.rows() >= a.cols();
    const Eigen::MatrixXd gram = tall ? Eigen::MatrixXd(a.transpose() * a) : Eigen::MatrixXd(a * a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const Eigen::Index top = gram.rows() - 1;
    const double lambda = std::max(eig.eigenvalues()[top], 0.0);
    out.sigma = std::sqrt(lambda);
    const Eigen::VectorXd vec = eig.eigenvectors().col(top);
    if (out.sigma == 0.0) {
        out.left = Eigen::VectorXd::Zero(a.rows());
        out.right = Eigen::VectorXd::Zero(a.cols());
        return out;
    }
    if (tall) {
        out.right = vec;
        out.left = a * vec / out.sigma;
    } else {
        out.left = vec;
        out.right = a.transpose() * vec / out.sigma;
    }
    return out;
}

} // namespace sps
