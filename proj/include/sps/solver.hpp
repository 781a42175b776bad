#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "sps/forward_operators.hpp"
#include "sps/model.hpp"
#include "sps/tensor.hpp"

namespace sps {

struct StepSizes {
    double gamma1 = 0.99;
    double gamma2 = 0.0;
};

struct StepOptions {
    /// Drop ||H||^2 from the gamma2 bound, as in the original printed formula.
    bool paper_literal_step = false;
    /// Multiplies gamma2; only for stability experiments.
    double step_scale = 1.0;
};

/// gamma1 = 0.99 / ||D^T D|| and gamma2 = 0.99 / (||H||^2 + beta * max symbol).
StepSizes compute_step_sizes(const ReconstructionModel& model, const ForwardOperator& h, int height, int width,
                             const StepOptions& opts = {});

/// One reconstruction problem: model, operator, data, and the precomputed
/// operators every iPALM sweep needs.
class InnerProblem {
public:
    InnerProblem(ReconstructionModel model, ForwardOperator h, Measurement y, const StepOptions& opts = {});

    const ReconstructionModel& model() const { return model_; }
    const ForwardOperator& op() const { return h_; }
    const Measurement& measurement() const { return y_; }
    const StepSizes& steps() const { return steps_; }
    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return model_.dict.p1(); }
    const Eigen::MatrixXd& dtd() const { return dtd_; }
    const PatchGramOperator& gram_operator() const { return gram_; }
    const Image& adjoint_data() const { return hty_; }

    /// (I - Q Q^T) D; equals D on the feasible set.
    const KernelStack& projected_dictionary() const { return projected_d_; }
    const Eigen::MatrixXd& projector() const { return projector_; }

    /// D^T P_hat_k x at every pixel.
    CodeField analysis(const Image& x) const;
    /// sum_k P_hat_k^T D a_k
    Image synthesis(const CodeField& a) const;
    /// sum_k P_hat_k^T P_hat_k x
    Image gram(const Image& x) const;
    /// H^T (H z - y)
    Image data_gradient(const Image& z) const;

    /// a - gamma1 (D^T D a - D^T P x): the argument of the regularizer prox.
    CodeField prox_input(const CodeField& a, const Image& x) const;
    CodeField alpha_update(const CodeField& a, const Image& x) const;
    Image x_update(const Image& z, const CodeField& alpha_next) const;

    /// Non-data part of the objective that the x-gradient needs: G z - synthesis(a).
    Image patch_residual_gradient(const Image& z, const CodeField& a) const;

    /// beta * lambda R(a): the regularizer term whose stationary points the iPALM
    /// updates find (NCPR: numerically recovered potential / gamma1).
    double regularizer_value(const CodeField& a) const;
    /// Per-pixel share of regularizer_value (CPR group cost split over the 4 pixels).
    Eigen::VectorXd regularizer_map(const CodeField& a) const;
    /// ||P_hat_k x - D a_k||^2 for every pixel k.
    Eigen::VectorXd patch_residuals(const Image& x, const CodeField& a) const;

    CodeField zero_code() const { return CodeField(channels(), height_, width_); }

private:
    ReconstructionModel model_;
    ForwardOperator h_;
    Measurement y_;
    int height_ = 0;
    int width_ = 0;
    StepSizes steps_;
    Eigen::MatrixXd dtd_;
    Eigen::MatrixXd projector_;
    KernelStack projected_d_;
    PatchGramOperator gram_;
    Image hty_;
    std::optional<NcprPotential> potential_;
};

struct SolverState {
    Image x;
    Image x_prev;
    CodeField alpha;
    CodeField alpha_prev;
    int iter = 0;
    double residual = 0.0;
    bool converged = false;
};

struct SolverConfig {
    double tol = 1e-4;
    int max_iters = 2000;
    bool record_objective = false;
};

inline constexpr double kTrainingTol = 1e-4;
inline constexpr double kInferenceTol = 1e-5;

/// One inertial sweep: extrapolate alpha, prox-gradient on alpha, extrapolate x,
/// gradient step on x. Inertia weight (m - 1) / (m + 2) with m = iter + 1.
SolverState ipalm_step(const SolverState& state, const InnerProblem& problem);

struct SolveResult {
    SolverState state;
    std::vector<double> trace;
    int iterations = 0; // sweeps run by this call
};

/// Iterate ipalm_step until max(rel dx, rel dalpha) < tol. Defaults: x0 = H^T y, alpha0 = 0.
SolveResult solve_inner(const InnerProblem& problem, const SolverConfig& cfg, std::optional<Image> x0 = std::nullopt,
                        std::optional<CodeField> alpha0 = std::nullopt);

/// Continue iPALM from a previous state, inertia included; state.iter keeps counting
/// and at most cfg.max_iters further sweeps run.
SolveResult solve_inner(const InnerProblem& problem, const SolverConfig& cfg, const SolverState& start);

/// Non-inertial sweep T(x, alpha); its fixed points are the stationary points of the objective.
std::pair<Image, CodeField> fixed_point_map(const InnerProblem& problem, const Image& x, const CodeField& alpha);

/// 1/2 ||H x - y||^2 + sum_k beta/2 ||P_hat_k x - D a_k||^2 + beta lambda R(a_k)
double objective_value(const InnerProblem& problem, const Image& x, const CodeField& alpha);

/// ||next - prev|| / (||prev|| + 1e-12)
template <class A, class B>
double relative_change(const A& next, const B& prev) {
    return (next - prev).norm() / (prev.norm() + 1e-12);
}

} // namespace sps
