#include "sps/analysis.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace sps {

CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                            const Eigen::VectorXd& b, double tol, int max_iters) {
    CgResult out;
    out.x = Eigen::VectorXd::Zero(b.size());
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
        out.converged = true;
        return out;
    }
    Eigen::VectorXd r = b;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    for (out.iters = 0; out.iters < max_iters; ++out.iters) {
        if (std::sqrt(rr) <= tol * bnorm) {
            break;
        }
        const Eigen::VectorXd ap = apply(p);
        const double pap = p.dot(ap);
        if (!(pap > 0.0)) {
            break; // singular direction
        }
        const double step = rr / pap;
        out.x += step * p;
        r -= step * ap;
        const double rr_next = r.squaredNorm();
        p = r + (rr_next / rr) * p;
        rr = rr_next;
    }
    // true residual, not the recursively updated one
    out.relative_residual = (b - apply(out.x)).norm() / bnorm;
    out.converged = out.relative_residual <= tol;
    return out;
}

Decomposition decompose(const SolverState& state, const InnerProblem& problem, double cg_tol) {
    if (!(cg_tol > 0.0)) {
        throw InputError("cg_tol must be positive");
    }
    const Image& x = state.x;
    require_same_shape(problem.adjoint_data(), x, "decompose");
    const int h = x.height;
    const int w = x.width;
    const double beta = problem.model().beta;

    auto normal_op = [&](double damping) {
        return [&problem, beta, h, w, damping](const Eigen::VectorXd& v) {
            const Image img(h, w, v);
            Eigen::VectorXd out = problem.op().normal(img).data;
            out += beta * problem.gram(img).data;
            out += damping * v;
            return out;
        };
    };

    Decomposition dec;
    dec.x_star = x;
    const Eigen::VectorXd b_smooth = problem.adjoint_data().data;
    const Eigen::VectorXd b_sparse = beta * problem.synthesis(state.alpha).data;

    // The constant image is the usual null direction (H blind to the mean, constant atom in Q).
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(x.pixels());
    double damping = 0.0;
    if (normal_op(0.0)(ones).norm() <= 1e-10 * ones.norm()) {
        damping = kDecomposeDamping;
    }
    const int max_iters = std::max(100, 10 * x.pixels());
    CgResult smooth = conjugate_gradient(normal_op(damping), b_smooth, cg_tol, max_iters);
    CgResult sparse = conjugate_gradient(normal_op(damping), b_sparse, cg_tol, max_iters);
    if (damping == 0.0 && (!smooth.converged || !sparse.converged)) {
        damping = kDecomposeDamping;
        smooth = conjugate_gradient(normal_op(damping), b_smooth, cg_tol, max_iters);
        sparse = conjugate_gradient(normal_op(damping), b_sparse, cg_tol, max_iters);
    }
    dec.damped = damping > 0.0;
    dec.x_smooth = Image(h, w, smooth.x);
    dec.x_sparse = Image(h, w, sparse.x);
    dec.cg_residual = std::max(smooth.relative_residual, sparse.relative_residual);
    const Eigen::VectorXd eq = normal_op(0.0)(x.data) - b_smooth - b_sparse;
    dec.normal_residual = eq.norm() / std::max(x.data.norm(), 1e-300);
    dec.cost_map = patch_cost_map(problem, x, state.alpha);
    return dec;
}

CodeField recover_free_coefficients(const Image& x, const DictionaryPair& dict) {
    return conv2d_circular(x, dict.q);
}

Image patch_cost_map(const InnerProblem& problem, const Image& x, const CodeField& alpha) {
    Image map(x.height, x.width);
    map.data = 0.5 * problem.model().beta * problem.patch_residuals(x, alpha);
    map.data += problem.regularizer_map(alpha);
    return map;
}

FreeAtomOrdering sort_free_atoms(const DictionaryPair& dict, const std::vector<Image>& images) {
    if (images.empty()) {
        throw InputError("sort_free_atoms needs at least one image");
    }
    const int free = dict.p2() - 1;
    const Eigen::MatrixXd qf = dict.q.taps.leftCols(free);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(free, free);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(free);
    double count = 0.0;
    for (const auto& img : images) {
        const Eigen::MatrixXd c = qf.transpose() * extract_patches(img, dict.side());
        cov.noalias() += c * c.transpose();
        mean += c.rowwise().sum();
        count += static_cast<double>(c.cols());
    }
    mean /= count;
    cov = cov / count - mean * mean.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    FreeAtomOrdering out;
    out.rotated_q = dict.q.taps;
    out.variances = eig.eigenvalues().reverse();
    out.rotated_q.leftCols(free) = qf * eig.eigenvectors().rowwise().reverse();
    return out;
}

Image atom_sheet(const Eigen::MatrixXd& atoms, int side, int columns) {
    const int count = static_cast<int>(atoms.cols());
    if (count == 0) {
        return Image(1, 1);
    }
    if (columns <= 0) {
        columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
    }
    const int rows = (count + columns - 1) / columns;
    const int tile = side + 1;
    Image sheet(rows * tile + 1, columns * tile + 1, 1.0);
    for (int a = 0; a < count; ++a) {
        const double lo = atoms.col(a).minCoeff();
        const double hi = atoms.col(a).maxCoeff();
        const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
        const int ty = 1 + (a / columns) * tile;
        const int tx = 1 + (a % columns) * tile;
        for (int t = 0; t < side * side; ++t) {
            sheet(ty + t / side, tx + t % side) = (atoms(t, a) - lo) / span;
        }
    }
    return sheet;
}

} // namespace sps
