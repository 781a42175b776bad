#include "sps/solver.hpp"

#include <algorithm>
#include <cmath>

#include "sps/linalg.hpp"

namespace sps {

StepSizes compute_step_sizes(const ReconstructionModel& model, const ForwardOperator& h, int height, int width,
                             const StepOptions& opts) {
    StepSizes s;
    const double dnorm = spectral_norm(model.dict.d.taps);
    // Feasible dictionaries have ||D||_2 = 1; keep gamma1 exactly constant there.
    s.gamma1 = std::abs(dnorm - 1.0) <= 1e-6 ? 0.99 : 0.99 / (dnorm * dnorm);
    const Eigen::VectorXd symbol = patch_gram_symbol(model.dict.q.taps, model.dict.side(), height, width);
    const double patch_norm = model.beta * symbol.maxCoeff();
    const double hnorm = h.norm(height, width);
    double denom = hnorm * hnorm + patch_norm;
    if (opts.paper_literal_step && patch_norm > 0.0) {
        denom = patch_norm;
    }
    s.gamma2 = opts.step_scale * 0.99 / denom;
    return s;
}

InnerProblem::InnerProblem(ReconstructionModel model, ForwardOperator h, Measurement y, const StepOptions& opts)
    : model_(std::move(model)), h_(std::move(h)), y_(std::move(y)) {
    hty_ = h_.adjoint(y_);
    height_ = hty_.height;
    width_ = hty_.width;
    h_.check_image(height_, width_);
    const int side = model_.dict.side();
    if (model_.dict.q.side != side || model_.dict.q.taps.rows() != model_.dict.d.taps.rows()) {
        throw InputError("D and Q must share the patch size");
    }
    if (side > std::min(height_, width_)) {
        throw InputError("patch side exceeds image dimensions");
    }
    if (!(model_.beta >= 0.0)) {
        throw InputError("beta must be non-negative");
    }
    validate(model_.reg, model_.dict.p1());
    if (model_.reg.kind == RegularizerKind::CPR) {
        require_even_grid(height_, width_);
    } else {
        potential_.emplace(model_.reg.gamma);
    }
    dtd_ = model_.dict.d.taps.transpose() * model_.dict.d.taps;
    const int d = model_.dict.patch_dim();
    projector_ = Eigen::MatrixXd::Identity(d, d);
    if (model_.dict.p2() > 0) {
        projector_ -= model_.dict.q.taps * model_.dict.q.taps.transpose();
    }
    projected_d_ = KernelStack(side, projector_ * model_.dict.d.taps);
    gram_ = PatchGramOperator::projected(model_.dict.q.taps, side);
    steps_ = compute_step_sizes(model_, h_, height_, width_, opts);
}

CodeField InnerProblem::analysis(const Image& x) const { return conv2d_circular(x, projected_d_); }

Image InnerProblem::synthesis(const CodeField& a) const { return conv2d_transpose_circular(a, projected_d_); }

Image InnerProblem::gram(const Image& x) const { return gram_.apply(x); }

Image InnerProblem::data_gradient(const Image& z) const {
    Measurement r = h_.apply(z);
    r -= y_;
    return h_.adjoint(r);
}

CodeField InnerProblem::prox_input(const CodeField& a, const Image& x) const {
    CodeField u = analysis(x);
    u.data *= steps_.gamma1;
    u.data.noalias() -= steps_.gamma1 * (a.data * dtd_);
    u.data += a.data;
    return u;
}

CodeField InnerProblem::alpha_update(const CodeField& a, const Image& x) const {
    return regularizer_prox(prox_input(a, x), steps_.gamma1, model_.reg);
}

Image InnerProblem::patch_residual_gradient(const Image& z, const CodeField& a) const {
    Image g = gram(z);
    g.data -= synthesis(a).data;
    return g;
}

Image InnerProblem::x_update(const Image& z, const CodeField& alpha_next) const {
    Image grad = data_gradient(z);
    grad.data += model_.beta * patch_residual_gradient(z, alpha_next).data;
    Image out = z;
    out.data -= steps_.gamma2 * grad.data;
    return out;
}

double InnerProblem::regularizer_value(const CodeField& a) const {
    // The alpha update has no beta in its gradient, so its fixed points are those of
    // the objective whose regularizer carries the factor beta.
    if (model_.reg.kind == RegularizerKind::CPR) {
        return model_.beta * cpr_value(a, model_.reg);
    }
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const double tau = model_.reg.tau[c];
        for (const double v : a.channel(c)) {
            total += (*potential_)(v, tau);
        }
    }
    return model_.beta * total / steps_.gamma1;
}

Eigen::VectorXd InnerProblem::regularizer_map(const CodeField& a) const {
    Eigen::VectorXd map = Eigen::VectorXd::Zero(a.pixels());
    const auto& reg = model_.reg;
    if (reg.kind == RegularizerKind::NCPR) {
        for (int c = 0; c < a.channels; ++c) {
            for (Eigen::Index k = 0; k < a.pixels(); ++k) {
                map[k] += (*potential_)(a.data(k, c), reg.tau[c]);
            }
        }
        return map * (model_.beta / steps_.gamma1);
    }
    for (int by = 0; by < a.height; by += 2) {
        for (int bx = 0; bx < a.width; bx += 2) {
            const Eigen::Index i0 = static_cast<Eigen::Index>(by) * a.width + bx;
            const Eigen::Index idx[4] = {i0, i0 + 1, i0 + a.width, i0 + a.width + 1};
            double cost = 0.0;
            for (int c = 0; c < a.channels; ++c) {
                double n2 = 0.0;
                for (const auto i : idx) {
                    n2 += a.data(i, c) * a.data(i, c);
                }
                cost += reg.tau[c] * std::sqrt(n2);
            }
            for (const auto i : idx) {
                map[i] = 0.25 * model_.beta * reg.lambda * cost;
            }
        }
    }
    return map;
}

Eigen::VectorXd InnerProblem::patch_residuals(const Image& x, const CodeField& a) const {
    require_same_shape(hty_, x, "patch_residuals");
    const int side = model_.dict.side();
    const int r = side / 2;
    const int d = side * side;
    const Eigen::MatrixXd& dm = model_.dict.d.taps;
    Eigen::VectorXd out(x.pixels());
    Eigen::VectorXd patch(d);
    for (int y = 0; y < x.height; ++y) {
        for (int xx = 0; xx < x.width; ++xx) {
            for (int t = 0; t < d; ++t) {
                const int yy = ((y + t / side - r) % x.height + x.height) % x.height;
                const int xc = ((xx + t % side - r) % x.width + x.width) % x.width;
                patch[t] = x(yy, xc);
            }
            const Eigen::Index k = static_cast<Eigen::Index>(y) * x.width + xx;
            out[k] = (projector_ * patch - dm * a.data.row(k).transpose()).squaredNorm();
        }
    }
    return out;
}

SolverState ipalm_step(const SolverState& state, const InnerProblem& problem) {
    const int m = state.iter + 1;
    const double inertia = static_cast<double>(m - 1) / (m + 2);

    CodeField a_bar = state.alpha;
    a_bar.data += inertia * (state.alpha.data - state.alpha_prev.data);
    CodeField a_next = problem.alpha_update(a_bar, state.x);

    Image z = state.x;
    z.data += inertia * (state.x.data - state.x_prev.data);
    Image x_next = problem.x_update(z, a_next);

    if (!x_next.all_finite() || !a_next.all_finite()) {
        throw DivergenceError("iPALM produced non-finite iterates", m);
    }
    SolverState next;
    next.residual = std::max(relative_change(x_next.data, state.x.data), relative_change(a_next.data, state.alpha.data));
    next.x_prev = state.x;
    next.alpha_prev = state.alpha;
    next.x = std::move(x_next);
    next.alpha = std::move(a_next);
    next.iter = m;
    return next;
}

namespace {

void run_sweeps(const InnerProblem& problem, const SolverConfig& cfg, SolveResult& out) {
    SolverState& s = out.state;
    if (cfg.record_objective) {
        out.trace.push_back(objective_value(problem, s.x, s.alpha));
    }
    while (out.iterations < cfg.max_iters) {
        s = ipalm_step(s, problem);
        ++out.iterations;
        if (cfg.record_objective) {
            out.trace.push_back(objective_value(problem, s.x, s.alpha));
        }
        if (s.residual < cfg.tol) {
            s.converged = true;
            break;
        }
    }
}

void check_config(const SolverConfig& cfg) {
    if (!(cfg.tol > 0.0) || cfg.max_iters < 1) {
        throw InputError("solver config needs tol > 0 and max_iters >= 1");
    }
}

void check_start(const InnerProblem& problem, const SolverState& s) {
    require_same_shape(problem.adjoint_data(), s.x, "solve_inner initial image");
    require_same_shape(s.x, s.x_prev, "solve_inner previous image");
    if (!s.alpha.matches(s.x) || s.alpha.channels != problem.channels() || !s.alpha_prev.same_shape(s.alpha)) {
        throw InputError("solve_inner: initial code does not match the problem");
    }
}

} // namespace

SolveResult solve_inner(const InnerProblem& problem, const SolverConfig& cfg, std::optional<Image> x0,
                        std::optional<CodeField> alpha0) {
    check_config(cfg);
    SolveResult out;
    SolverState& s = out.state;
    s.x = x0 ? std::move(*x0) : problem.adjoint_data();
    s.alpha = alpha0 ? std::move(*alpha0) : problem.zero_code();
    s.x_prev = s.x;
    s.alpha_prev = s.alpha;
    check_start(problem, s);
    run_sweeps(problem, cfg, out);
    return out;
}

SolveResult solve_inner(const InnerProblem& problem, const SolverConfig& cfg, const SolverState& start) {
    check_config(cfg);
    check_start(problem, start);
    SolveResult out;
    out.state = start;
    out.state.converged = false;
    run_sweeps(problem, cfg, out);
    return out;
}

std::pair<Image, CodeField> fixed_point_map(const InnerProblem& problem, const Image& x, const CodeField& alpha) {
    CodeField a_next = problem.alpha_update(alpha, x);
    Image x_next = problem.x_update(x, a_next);
    if (!x_next.all_finite() || !a_next.all_finite()) {
        throw DivergenceError("fixed-point map produced non-finite values", 0);
    }
    return {std::move(x_next), std::move(a_next)};
}

double objective_value(const InnerProblem& problem, const Image& x, const CodeField& alpha) {
    Measurement r = problem.op().apply(x);
    r -= problem.measurement();
    const double data = 0.5 * r.values.squaredNorm();
    const double patches = 0.5 * problem.model().beta * problem.patch_residuals(x, alpha).sum();
    return data + patches + problem.regularizer_value(alpha);
}

} // namespace sps
