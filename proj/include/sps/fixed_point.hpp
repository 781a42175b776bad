#pragma once

#include <functional>

#include <Eigen/Dense>

namespace sps {

using FixedPointMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct FixedPointResult {
    Eigen::VectorXd z;
    double residual = 0.0; // ||g(z) - z||
    int iters = 0;         // evaluations of g
    bool converged = false;
    int fallbacks = 0;     // Anderson steps that fell back to plain mixing
};

struct AndersonOptions {
    int iters = 75;
    /// Number of recent iterates mixed per step; 1 is plain damped iteration.
    int memory = 5;
    double damping = 1.0;
    double tol = 1e-8;
};

/// Type-II Anderson acceleration of z = g(z). Returns the iterate with the
/// smallest residual seen.
FixedPointResult anderson_solve(const FixedPointMap& g, Eigen::VectorXd z0, const AndersonOptions& opts);

struct BroydenOptions {
    int iters = 50;
    /// Rank-one updates kept in the inverse-Jacobian estimate; the estimate restarts when full.
    int memory = 50;
    double tol = 1e-8;
};

/// Good Broyden root finding on g(z) - z with a limited-memory inverse Jacobian
/// estimate -I + U V^T.
FixedPointResult broyden_solve(const FixedPointMap& g, Eigen::VectorXd z0, const BroydenOptions& opts);

} // namespace sps
