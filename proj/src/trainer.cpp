#include "sps/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "sps/image_io.hpp"
#include "sps/linalg.hpp"
#include "sps/parallel.hpp"

namespace sps {

double loss_l1(const Image& x_star, const Image& x_true) {
    require_same_shape(x_star, x_true, "loss_l1");
    return (x_star.data - x_true.data).lpNorm<1>();
}

double loss_l1(const std::vector<Image>& x_star, const std::vector<Image>& x_true) {
    if (x_star.size() != x_true.size() || x_star.empty()) {
        throw InputError("loss_l1: batch sizes differ or are empty");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < x_star.size(); ++i) {
        total += loss_l1(x_star[i], x_true[i]);
    }
    return total / static_cast<double>(x_star.size());
}

Image loss_l1_gradient(const Image& x_star, const Image& x_true, double weight) {
    require_same_shape(x_star, x_true, "loss_l1_gradient");
    Image g(x_star.height, x_star.width);
    for (Eigen::Index i = 0; i < g.data.size(); ++i) {
        const double r = x_star.data[i] - x_true.data[i];
        g.data[i] = weight * static_cast<double>((r > 0.0) - (r < 0.0));
    }
    return g;
}

Gradients Gradients::zeros_like(const ModelParams& p) {
    Gradients g;
    g.d_raw = Eigen::MatrixXd::Zero(p.raw.d.rows(), p.raw.d.cols());
    g.q_raw = Eigen::MatrixXd::Zero(p.raw.q.rows(), p.raw.q.cols());
    g.tau_raw = Eigen::VectorXd::Zero(p.tau_raw.size());
    return g;
}

Gradients& Gradients::operator+=(const Gradients& o) {
    d_raw += o.d_raw;
    q_raw += o.q_raw;
    tau_raw += o.tau_raw;
    beta_raw += o.beta_raw;
    return *this;
}

Gradients& Gradients::operator*=(double s) {
    d_raw *= s;
    q_raw *= s;
    tau_raw *= s;
    beta_raw *= s;
    return *this;
}

bool Gradients::all_finite() const {
    return d_raw.allFinite() && q_raw.allFinite() && tau_raw.allFinite() && std::isfinite(beta_raw);
}

const char* to_string(BackwardSolver s) { return s == BackwardSolver::Anderson ? "anderson" : "broyden"; }

BackwardSolver backward_solver_from_string(const std::string& name) {
    if (name == "anderson") {
        return BackwardSolver::Anderson;
    }
    if (name == "broyden") {
        return BackwardSolver::Broyden;
    }
    throw InputError("unknown backward solver '" + name + "' (expected anderson or broyden)");
}

BackwardResult backward_implicit(const SolverState& state, const ModelParams& params, const InnerProblem& problem,
                                 const Image& dloss_dx, const BackwardConfig& cfg) {
    require_same_shape(state.x, dloss_dx, "backward_implicit");
    const Image& x = state.x;
    const int h = x.height;
    const int w = x.width;
    const int p1 = problem.channels();
    const Eigen::Index n = x.pixels();
    const double gamma1 = problem.steps().gamma1;
    const double gamma2 = problem.steps().gamma2;
    const double beta = problem.model().beta;
    const auto& reg = problem.model().reg;
    const ForwardOperator& op = problem.op();

    // Linearization point: one sweep of T at the converged state.
    const CodeField u = problem.prox_input(state.alpha, x);
    const CodeField alpha_next = regularizer_prox(u, gamma1, reg);

    auto split = [&](const Eigen::VectorXd& v, Image& vx, CodeField& va) {
        vx = Image(h, w, v.head(n));
        va = CodeField(p1, h, w);
        va.data = Eigen::Map<const Eigen::MatrixXd>(v.data() + n, n, p1);
    };
    auto join = [&](const Image& vx, const CodeField& va) {
        Eigen::VectorXd v(n + n * p1);
        v.head(n) = vx.data;
        v.tail(n * p1) = Eigen::Map<const Eigen::VectorXd>(va.data.data(), n * p1);
        return v;
    };

    struct Pullback {
        Image out_x;
        CodeField out_alpha;
        CodeField w;   // adjoint at alpha_next
        ProxVjp prox;  // adjoint at u, and tau
    };
    auto pullback = [&](const Image& vx, const CodeField& va) {
        Pullback pb;
        pb.w = va;
        pb.w.data += gamma2 * beta * problem.analysis(vx).data;
        pb.prox = regularizer_prox_vjp(u, gamma1, reg, pb.w);
        const CodeField& wu = pb.prox.input;
        pb.out_alpha = wu;
        pb.out_alpha.data.noalias() -= gamma1 * (wu.data * problem.dtd());
        pb.out_x = vx;
        Image hh = op.normal(vx);
        hh.data += beta * problem.gram(vx).data;
        pb.out_x.data -= gamma2 * hh.data;
        pb.out_x.data += gamma1 * problem.synthesis(wu).data;
        return pb;
    };

    const Eigen::VectorXd rhs = join(dloss_dx, CodeField(p1, h, w));
    const FixedPointMap adjoint_map = [&](const Eigen::VectorXd& v) {
        Image vx;
        CodeField va;
        split(v, vx, va);
        const Pullback pb = pullback(vx, va);
        return Eigen::VectorXd(join(pb.out_x, pb.out_alpha) + rhs);
    };
    const double scale = std::max(rhs.norm(), 1e-300);
    FixedPointResult sol;
    if (cfg.solver == BackwardSolver::Anderson) {
        sol = anderson_solve(adjoint_map, rhs, AndersonOptions{cfg.iters, cfg.memory, 1.0, cfg.tol * scale});
    } else {
        sol = broyden_solve(adjoint_map, rhs, BroydenOptions{cfg.iters, std::max(cfg.iters, 1), cfg.tol * scale});
    }

    BackwardResult result;
    result.adjoint_residual = sol.residual / scale;
    result.iters = sol.iters;
    result.low_confidence = !(result.adjoint_residual <= cfg.tol);

    Image vx;
    CodeField va;
    split(sol.z, vx, va);
    const Pullback pb = pullback(vx, va);
    const CodeField& wu = pb.prox.input;

    const Eigen::MatrixXd& dm = problem.model().dict.d.taps;
    const Eigen::MatrixXd& qm = problem.model().dict.q.taps;
    const Eigen::MatrixXd& proj = problem.projector();
    const int side = problem.model().dict.side();

    // x+ = x - gamma2 (H^T(Hx - y) + beta (G x - S_hat alpha+))
    const Image patch_grad = problem.patch_residual_gradient(x, alpha_next);
    const double grad_beta = -gamma2 * vx.data.dot(patch_grad.data);

    // projected dictionary D_hat = Pi D, in both analysis (u) and synthesis (x+)
    Eigen::MatrixXd grad_dhat = gamma2 * beta * patch_outer(vx, alpha_next.data, side);
    grad_dhat += gamma1 * patch_outer(x, wu.data, side);

    // D^T D in u = a - gamma1 D^T D a + ...
    const Eigen::MatrixXd wa = wu.data.transpose() * state.alpha.data;
    Eigen::MatrixXd grad_d = -gamma1 * dm * (wa + wa.transpose());
    grad_d += proj * grad_dhat;

    // G = sum_k P_k^T Pi^T Pi P_k; d<vx, -gamma2 beta G x>/dM = -gamma2 beta sum_k (P_k vx)(P_k x)^T
    const Eigen::MatrixXd outer_vx = -gamma2 * beta * patch_outer(vx, extract_patches(x, side).transpose(), side);
    Eigen::MatrixXd grad_proj = proj * (outer_vx + outer_vx.transpose());
    grad_proj += grad_dhat * dm.transpose();
    const Eigen::MatrixXd grad_q = -(grad_proj + grad_proj.transpose()) * qm;

    const RawDictionaries raw_grad = parameterize_vjp(params.tape, grad_d, grad_q);
    result.grads.d_raw = raw_grad.d;
    result.grads.q_raw = raw_grad.q;
    result.grads.tau_raw = pb.prox.tau.cwiseProduct(
        params.tau_raw.unaryExpr([&](double r) { return params.tau_multiplier * sigmoid(r); }));
    result.grads.beta_raw = grad_beta * sigmoid(params.beta_raw);
    return result;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamMoments& mom, const Eigen::VectorXd& lr) {
    if (grads.size() != params.size() || lr.size() != params.size()) {
        throw InputError("adam_step: size mismatch");
    }
    if (mom.m.size() != params.size()) {
        mom.m = Eigen::VectorXd::Zero(params.size());
        mom.v = Eigen::VectorXd::Zero(params.size());
        mom.step = 0;
    }
    ++mom.step;
    mom.m = kAdamBeta1 * mom.m + (1.0 - kAdamBeta1) * grads;
    mom.v = kAdamBeta2 * mom.v + (1.0 - kAdamBeta2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(mom.step));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(mom.step));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double mhat = mom.m[i] / c1;
        const double vhat = mom.v[i] / c2;
        params[i] -= lr[i] * mhat / (std::sqrt(vhat) + kAdamEps);
    }
}

Eigen::VectorXd pack_trainable(const ModelParams& p) {
    const Eigen::Index nd = p.raw.d.size(), nq = p.raw.q.size(), nt = p.tau_raw.size();
    Eigen::VectorXd flat(nd + nq + nt + 1);
    flat.segment(0, nd) = Eigen::Map<const Eigen::VectorXd>(p.raw.d.data(), nd);
    flat.segment(nd, nq) = Eigen::Map<const Eigen::VectorXd>(p.raw.q.data(), nq);
    flat.segment(nd + nq, nt) = p.tau_raw;
    flat[nd + nq + nt] = p.beta_raw;
    return flat;
}

void unpack_trainable(const Eigen::VectorXd& flat, ModelParams& p) {
    const Eigen::Index nd = p.raw.d.size(), nq = p.raw.q.size(), nt = p.tau_raw.size();
    if (flat.size() != nd + nq + nt + 1) {
        throw InputError("unpack_trainable: size mismatch");
    }
    Eigen::Map<Eigen::VectorXd>(p.raw.d.data(), nd) = flat.segment(0, nd);
    Eigen::Map<Eigen::VectorXd>(p.raw.q.data(), nq) = flat.segment(nd, nq);
    p.tau_raw = flat.segment(nd + nq, nt);
    p.beta_raw = flat[nd + nq + nt];
    p.reparameterize();
}

Eigen::VectorXd pack_gradients(const Gradients& g) {
    const Eigen::Index nd = g.d_raw.size(), nq = g.q_raw.size(), nt = g.tau_raw.size();
    Eigen::VectorXd flat(nd + nq + nt + 1);
    flat.segment(0, nd) = Eigen::Map<const Eigen::VectorXd>(g.d_raw.data(), nd);
    flat.segment(nd, nq) = Eigen::Map<const Eigen::VectorXd>(g.q_raw.data(), nq);
    flat.segment(nd + nq, nt) = g.tau_raw;
    flat[nd + nq + nt] = g.beta_raw;
    return flat;
}

Eigen::VectorXd learning_rates(const ModelParams& p, double lr_dict, double lr_reg) {
    const Eigen::Index nd = p.raw.d.size() + p.raw.q.size();
    Eigen::VectorXd lr(nd + p.tau_raw.size() + 1);
    lr.head(nd).setConstant(lr_dict);
    lr.tail(p.tau_raw.size() + 1).setConstant(lr_reg);
    return lr;
}

CropDataset::CropDataset(std::vector<Image> images) : images_(std::move(images)) {}

CropDataset CropDataset::from_directory(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) {
        throw InputError("dataset directory not found: " + path);
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.is_regular_file() && is_supported_image(entry.path().string())) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Image> images;
    for (const auto& f : files) {
        images.push_back(load_image(f.string()));
    }
    if (images.empty()) {
        throw FormatError("no readable images in " + path);
    }
    return CropDataset(std::move(images));
}

TrainState initial_train_state(ModelParams params) {
    TrainState s;
    s.params = std::move(params);
    return s;
}

double lr_decay_multiplier(const TrainConfig& cfg, long batch) {
    if (cfg.batches_per_epoch < 1 || cfg.decay_points_per_epoch < 1) {
        return 1.0;
    }
    const long per_epoch = cfg.batches_per_epoch;
    const long epoch = batch / per_epoch;
    const long within = batch % per_epoch;
    long passed = epoch * cfg.decay_points_per_epoch;
    for (int j = 1; j <= cfg.decay_points_per_epoch; ++j) {
        if (static_cast<long>(j) * per_epoch / cfg.decay_points_per_epoch <= within) {
            ++passed;
        }
    }
    return std::pow(cfg.decay_factor, static_cast<double>(passed));
}

std::uint64_t batch_seed(std::uint64_t seed, long batch, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(batch), static_cast<std::uint32_t>(static_cast<std::uint64_t>(batch) >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

TrainState train(const CropDataset& data, TrainState state, const TrainConfig& tcfg, const SolverConfig& scfg,
                 const TrainCallbacks& callbacks) {
    if (tcfg.batch_size < 1 || tcfg.epochs < 1 || tcfg.batches_per_epoch < 1 || tcfg.lr_dict < 0.0 ||
        tcfg.lr_reg < 0.0) {
        throw InputError("invalid training configuration");
    }
    if (data.size() == 0) {
        throw InputError("training dataset is empty");
    }
    if (state.params.kind == RegularizerKind::CPR) {
        require_even_grid(tcfg.crop_height, tcfg.crop_width);
    }
    const long total = static_cast<long>(tcfg.epochs) * tcfg.batches_per_epoch;
    long ran = 0;
    while (state.next_batch < total && (tcfg.stop_after < 0 || ran < tcfg.stop_after)) {
        const long b = state.next_batch;
        std::mt19937_64 rng(batch_seed(tcfg.seed, b));
        std::vector<Image> truth;
        std::vector<std::uint64_t> noise_seeds;
        for (int i = 0; i < tcfg.batch_size; ++i) {
            truth.push_back(data.sample(rng, tcfg.crop_height, tcfg.crop_width));
            noise_seeds.push_back(rng());
        }

        const ModelParams& params = state.params;
        const ReconstructionModel model = params.model();
        const ForwardOperator identity = ForwardOperator::identity();
        struct Slot {
            bool used = false;
            double loss = 0.0;
            SolverState solved;
            std::optional<InnerProblem> problem;
        };
        std::vector<Slot> slots(truth.size());
        parallel_for(truth.size(), [&](std::size_t i) {
            Measurement y = simulate_measurements(identity, truth[i], tcfg.noise_sigma, noise_seeds[i]);
            slots[i].problem.emplace(model, identity, std::move(y));
            try {
                SolveResult r = solve_inner(*slots[i].problem, scfg);
                if (r.state.converged) {
                    slots[i].used = true;
                    slots[i].loss = loss_l1(r.state.x, truth[i]);
                    slots[i].solved = std::move(r.state);
                }
            } catch (const DivergenceError&) {
                slots[i].used = false;
            }
        });
        const int used = static_cast<int>(std::count_if(slots.begin(), slots.end(), [](const Slot& s) { return s.used; }));
        state.processed += static_cast<long>(slots.size());
        state.skipped += static_cast<long>(slots.size()) - used;

        const double mult = lr_decay_multiplier(tcfg, b);
        HistoryEntry entry;
        entry.batch = b;
        entry.lr_dict = tcfg.lr_dict * mult;
        entry.lr_reg = tcfg.lr_reg * mult;
        entry.used = used;

        if (used > 0) {
            std::vector<Gradients> grads(slots.size());
            parallel_for(slots.size(), [&](std::size_t i) {
                if (!slots[i].used) {
                    return;
                }
                const Image g = loss_l1_gradient(slots[i].solved.x, truth[i], 1.0 / used);
                grads[i] = backward_implicit(slots[i].solved, params, *slots[i].problem, g, tcfg.backward).grads;
            });
            Gradients total_grad = Gradients::zeros_like(params);
            double loss = 0.0;
            for (std::size_t i = 0; i < slots.size(); ++i) {
                if (slots[i].used) {
                    total_grad += grads[i];
                    loss += slots[i].loss;
                }
            }
            entry.loss = loss / used;
            if (total_grad.all_finite()) {
                Eigen::VectorXd flat = pack_trainable(state.params);
                adam_step(flat, pack_gradients(total_grad), state.moments,
                          learning_rates(state.params, entry.lr_dict, entry.lr_reg));
                unpack_trainable(flat, state.params);
            }
        } else {
            entry.loss = std::nan("");
        }
        entry.beta = state.params.beta();
        entry.skipped_total = state.skipped;
        state.history.push_back(entry);
        ++state.next_batch;
        ++ran;
        if (callbacks.on_batch) {
            callbacks.on_batch(entry);
        }
        if (state.next_batch >= 10 &&
            static_cast<double>(state.skipped) > tcfg.max_skip_fraction * static_cast<double>(state.processed)) {
            throw TrainingAborted("more than " + std::to_string(tcfg.max_skip_fraction * 100.0) +
                                  "% of inner solves did not converge");
        }
        if (callbacks.on_checkpoint && tcfg.checkpoint_every > 0 && state.next_batch % tcfg.checkpoint_every == 0) {
            callbacks.on_checkpoint(state);
        }
    }
    return state;
}

} // namespace sps
