#pragma once

#include <functional>
#include <vector>

#include "sps/solver.hpp"

namespace sps {

struct CgResult {
    Eigen::VectorXd x;
    double relative_residual = 0.0; // ||A x - b|| / ||b||
    int iters = 0;
    bool converged = false;
};

/// Conjugate gradients for a symmetric positive (semi)definite operator.
CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                            const Eigen::VectorXd& b, double tol, int max_iters);

struct Decomposition {
    Image x_star;
    Image x_smooth; // A^{-1} H^T y
    Image x_sparse; // A^{-1} beta sum_k P_hat_k^T D alpha_k
    Image cost_map;
    double cg_residual = 0.0;    // worst of the two solves
    double normal_residual = 0.0; // ||A x* - H^T y - beta S alpha|| / ||x*||
    bool damped = false;          // Tikhonov damping 1e-8 was needed
};

inline constexpr double kDecomposeTol = 1e-8;
inline constexpr double kDecomposeDamping = 1e-8;

/// Split x* with A = H^T H + beta sum_k P_hat_k^T P_hat_k.
Decomposition decompose(const SolverState& state, const InnerProblem& problem, double cg_tol = kDecomposeTol);

/// c_k = Q^T P_k x at every pixel (p2 channels).
CodeField recover_free_coefficients(const Image& x, const DictionaryPair& dict);

/// (beta / 2) ||P_hat_k x - D alpha_k||^2 + the regularizer's share at pixel k.
Image patch_cost_map(const InnerProblem& problem, const Image& x, const CodeField& alpha);

/// Diagnostic: rotate the non-constant free atoms by the PCA of their patch
/// coefficients over `images`, sorted by decreasing variance. The constant atom stays last.
struct FreeAtomOrdering {
    Eigen::MatrixXd rotated_q;
    Eigen::VectorXd variances;
};
FreeAtomOrdering sort_free_atoms(const DictionaryPair& dict, const std::vector<Image>& images);

/// Tiles atoms (columns of `atoms`, side x side each) into one image, each tile
/// min-max scaled, with a 1-pixel border.
Image atom_sheet(const Eigen::MatrixXd& atoms, int side, int columns = 0);

} // namespace sps
