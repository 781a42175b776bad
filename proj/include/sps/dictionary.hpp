#pragma once

#include <vector>

#include <Eigen/Dense>

#include "sps/tensor.hpp"

namespace sps {

/// d x atoms matrix whose columns reshape to side x side filters.
using Dictionary = KernelStack;

inline constexpr int kBjorckIterations = 15;
inline constexpr double kDegenerateAtomThreshold = 1e-10;

/// Unconstrained matrices that parameterize the feasible dictionaries.
struct RawDictionaries {
    int side = 1;
    Eigen::MatrixXd d; // d x p1
    Eigen::MatrixXd q; // d x (p2 - 1)
};

/// Synthesis dictionary D and free dictionary Q (last column is the constant atom).
struct DictionaryPair {
    Dictionary d;
    Dictionary q;

    int side() const { return d.side; }
    int patch_dim() const { return d.dim(); }
    int p1() const { return d.count(); }
    int p2() const { return q.count(); }
};

/// Intermediate values of parameterize_dictionaries needed for its vector-Jacobian product.
struct ParameterizationTape {
    Eigen::MatrixXd q_centered;
    double q_scale = 1.0;
    Eigen::VectorXd q_scale_left, q_scale_right;
    std::vector<Eigen::MatrixXd> bjorck_iterates; // inputs of each Björck step
    Eigen::MatrixXd q_full;
    Eigen::MatrixXd d_raw;
    Eigen::VectorXd column_norms;
    Eigen::MatrixXd d_unit;
    double d_scale = 1.0;
    Eigen::VectorXd d_scale_left, d_scale_right;
};

/// Q_{k+1} = Q_k (3 I - Q_k^T Q_k) / 2, starting from q0. Throws DivergenceError
/// when ||Q^T Q - I||_F grows or stays away from zero (rank deficiency).
Eigen::MatrixXd bjorck_orthonormalize(const Eigen::MatrixXd& q0, int iters = kBjorckIterations,
                                      std::vector<Eigen::MatrixXd>* iterates = nullptr);

/// Map raw matrices onto the feasible set:
///   1. center the columns of Q_raw
///   2. scale by the spectral norm and run Björck
///   3. append the constant atom 1/sqrt(d)
///   4. D = (I - Q Q^T) D_raw
///   5. normalize every column of D
///   6. divide D by its spectral norm
DictionaryPair parameterize_dictionaries(const RawDictionaries& raw, ParameterizationTape* tape = nullptr);

/// Pull gradients w.r.t. (D, Q) back to the raw matrices. Returns a RawDictionaries
/// holding d(loss)/d(D_raw) and d(loss)/d(Q_raw).
RawDictionaries parameterize_vjp(const ParameterizationTape& tape, const Eigen::MatrixXd& grad_d,
                                 const Eigen::MatrixXd& grad_q);

struct FeasibilityReport {
    double orthonormality = 0.0; // ||Q^T Q - I||_F
    double cross = 0.0;          // ||Q^T D||_F
    double spectral_error = 0.0; // | ||D||_2 - 1 |
    double norm_spread = 0.0;    // max_k | ||d_k|| - ||d_1|| |
    bool constant_atom = false;
    double tol = 0.0;
    bool passed = false;
};

FeasibilityReport validate_feasible_set(const DictionaryPair& pair, double tol);

} // namespace sps
