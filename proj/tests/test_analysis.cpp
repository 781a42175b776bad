#include <doctest.h>

#include <cmath>

#include "sps/analysis.hpp"
#include "sps/metrics.hpp"
#include "support.hpp"

using namespace sps;
using namespace testing_support;

namespace {

ModelParams analysis_model(RegularizerKind kind, std::uint64_t seed, double tau = 0.005, double beta = 2.0) {
    ModelInit init;
    init.side = 3;
    init.p1 = 6;
    init.p2 = 3;
    init.kind = kind;
    init.tau = tau;
    init.beta = beta;
    init.seed = seed;
    return initialize_model(init);
}

SolverState converged(const InnerProblem& prob, double tol = 1e-9) {
    SolverConfig cfg;
    cfg.tol = tol;
    cfg.max_iters = 100000;
    SolveResult r = solve_inner(prob, cfg);
    REQUIRE(r.state.converged);
    return r.state;
}

double rel(const Image& a, const Image& b) { return (a.data - b.data).norm() / b.data.norm(); }

} // namespace

TEST_CASE("conjugate gradients against a direct solve") {
    const Eigen::MatrixXd m = random_matrix(30, 30, 4);
    const Eigen::MatrixXd a = m.transpose() * m + 0.5 * Eigen::MatrixXd::Identity(30, 30);
    const Eigen::VectorXd b = random_matrix(30, 1, 5).col(0);
    const auto r = conjugate_gradient([&](const Eigen::VectorXd& v) { return Eigen::VectorXd(a * v); }, b, 1e-12, 500);
    CHECK(r.converged);
    CHECK(r.relative_residual <= 1e-12);
    CHECK((r.x - a.ldlt().solve(b)).norm() <= 1e-9 * b.norm());
    const auto zero = conjugate_gradient([&](const Eigen::VectorXd& v) { return Eigen::VectorXd(a * v); },
                                         Eigen::VectorXd::Zero(30), 1e-12, 10);
    CHECK(zero.x.norm() == 0.0);
}

TEST_CASE("decomposition reproduces converged reconstructions") {
    struct Case {
        RegularizerKind kind;
        ForwardOperator h;
        int size;
        double tol = 1e-9;
        bool sparse = true;
    };
    const std::vector<Case> cases = {
        {RegularizerKind::CPR, ForwardOperator::identity(), 12},
        {RegularizerKind::NCPR, ForwardOperator::identity(), 11},
        {RegularizerKind::CPR, ForwardOperator::masked_fourier(generate_column_mask(16, 16, 4, 0.125, 3)), 16},
        // A is badly conditioned here, so x* has to be accurate for the split to close
        {RegularizerKind::CPR, ForwardOperator::blur_stride(2.0, 16, 4), 16, 1e-12, false},
    };
    std::uint64_t seed = 20;
    for (const auto& c : cases) {
        ++seed;
        const ModelParams p = analysis_model(c.kind, seed);
        const Image truth = procedural_image(c.size, c.size, seed);
        const InnerProblem prob(p.model(), c.h, simulate_measurements(c.h, truth, 0.03, seed));
        const SolverState s = converged(prob, c.tol);
        const Decomposition d = decompose(s, prob);
        INFO("operator " << c.h.describe());
        Image sum = d.x_smooth;
        sum.data += d.x_sparse.data;
        CHECK(rel(sum, s.x) <= 1e-5);
        CHECK(d.normal_residual <= 1e-4);
        CHECK(d.cg_residual <= kDecomposeTol);
        if (c.sparse) {
            CHECK(d.x_sparse.data.norm() > 0.0);
        }
    }
}

TEST_CASE("decomposition limits") {
    const auto identity = ForwardOperator::identity();
    const Image truth = procedural_image(10, 10, 3);
    const Measurement y = simulate_measurements(identity, truth, 0.05, 4);

    // nothing active: everything is the generalized Tikhonov part
    const ModelParams dead = analysis_model(RegularizerKind::CPR, 5, 1e6);
    const InnerProblem pd(dead.model(), identity, y);
    const SolverState sd = converged(pd, 1e-12);
    CHECK(sd.alpha.data.norm() == 0.0);
    const Decomposition dd = decompose(sd, pd);
    CHECK(dd.x_sparse.data.norm() == 0.0);
    CHECK(rel(dd.x_smooth, sd.x) <= 1e-8);

    // beta -> 0 with H = I
    const ModelParams weak = analysis_model(RegularizerKind::CPR, 5, 0.005, 1e-9);
    const InnerProblem pw(weak.model(), identity, y);
    const SolverState sw = converged(pw, 1e-12);
    const Decomposition dw = decompose(sw, pw);
    CHECK(rel(dw.x_smooth, y.as_image()) <= 1e-7);

    // linear in y with alpha frozen
    const ModelParams p = analysis_model(RegularizerKind::CPR, 6);
    const InnerProblem p1(p.model(), identity, y);
    const SolverState s = converged(p1);
    Measurement y2 = y;
    y2.values *= 2.0;
    const InnerProblem p2(p.model(), identity, y2);
    const Decomposition a = decompose(s, p1);
    const Decomposition b = decompose(s, p2);
    Image twice = a.x_smooth;
    twice.data *= 2.0;
    CHECK(rel(b.x_smooth, twice) <= 1e-8);
    REQUIRE(a.x_sparse.data.norm() > 0.0);
    CHECK(rel(b.x_sparse, a.x_sparse) <= 1e-8);
}

TEST_CASE("singular normal operator falls back to damping") {
    // a mask without the DC column cannot see the mean, and Q holds the constant atom
    SamplingMask mask;
    mask.keep.assign(8, false);
    mask.keep[1] = mask.keep[3] = true;
    const ForwardOperator h = ForwardOperator::masked_fourier(mask);
    const ModelParams p = analysis_model(RegularizerKind::CPR, 9);
    const Image truth = procedural_image(8, 8, 9);
    const InnerProblem prob(p.model(), h, simulate_measurements(h, truth, 0.0, 1));
    SolverState s;
    s.x = prob.adjoint_data();
    s.alpha = prob.zero_code();
    const Decomposition d = decompose(s, prob);
    CHECK(d.damped);
    CHECK(d.x_smooth.data.allFinite());
}

TEST_CASE("patch cost map") {
    const auto identity = ForwardOperator::identity();
    const Image truth = procedural_image(10, 10, 12);
    for (RegularizerKind kind : {RegularizerKind::CPR, RegularizerKind::NCPR}) {
        const ModelParams p = analysis_model(kind, 13);
        const InnerProblem prob(p.model(), identity, simulate_measurements(identity, truth, 0.05, 14));
        const SolverState s = converged(prob);
        const Image map = patch_cost_map(prob, s.x, s.alpha);
        CHECK(map.data.minCoeff() >= 0.0);
        Measurement r = identity.apply(s.x);
        r -= prob.measurement();
        const double data_term = 0.5 * r.dot(r);
        const double total = objective_value(prob, s.x, s.alpha);
        CHECK(std::abs(map.data.sum() - (total - data_term)) <= 1e-8 * total);
    }
    const ModelParams p = analysis_model(RegularizerKind::CPR, 15);
    const Image flat(10, 10, 0.4);
    const InnerProblem prob(p.model(), identity, identity.apply(flat));
    const Image map = patch_cost_map(prob, flat, prob.zero_code());
    CHECK(map.data.cwiseAbs().maxCoeff() <= 1e-24);
}

TEST_CASE("free coefficient recovery") {
    const ModelParams p = analysis_model(RegularizerKind::CPR, 16);
    const DictionaryPair& dict = p.dict;
    const Image flat(8, 8, 0.7);
    const CodeField c = recover_free_coefficients(flat, dict);
    REQUIRE(c.channels == dict.p2());
    for (int j = 0; j + 1 < c.channels; ++j) {
        CHECK(c.channel(j).cwiseAbs().maxCoeff() <= 1e-12);
    }
    CHECK(c.channel(c.channels - 1).cwiseAbs().minCoeff() > 0.1);

    const Image x = random_image(8, 8, 17);
    const CodeField got = recover_free_coefficients(x, dict);
    const auto patches = all_patch_matrices(3, 8, 8);
    double worst = 0.0;
    for (int k = 0; k < 64; ++k) {
        const Eigen::VectorXd ref = dict.q.taps.transpose() * (patches[k] * x.data);
        worst = std::max(worst, (got.data.row(k).transpose() - ref).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("atom sheet and free-atom ordering") {
    const ModelParams p = analysis_model(RegularizerKind::CPR, 18);
    const Image sheet = atom_sheet(p.dict.d.taps, 3, 3);
    CHECK(sheet.height == 2 * 4 + 1);
    CHECK(sheet.width == 3 * 4 + 1);
    CHECK(sheet.data.minCoeff() >= 0.0);
    CHECK(sheet.data.maxCoeff() <= 1.0);

    const FreeAtomOrdering o = sort_free_atoms(p.dict, {procedural_image(16, 16, 1), procedural_image(16, 16, 2)});
    REQUIRE(o.variances.size() == p.p2() - 1);
    for (Eigen::Index i = 1; i < o.variances.size(); ++i) {
        CHECK(o.variances(i) <= o.variances(i - 1));
    }
    const Eigen::MatrixXd qtq = o.rotated_q.transpose() * o.rotated_q;
    CHECK((qtq - Eigen::MatrixXd::Identity(qtq.rows(), qtq.cols())).norm() <= 1e-10);
    CHECK((o.rotated_q.col(p.p2() - 1) - p.dict.q.taps.col(p.p2() - 1)).norm() <= 1e-12);
}

TEST_CASE("PSNR and SSIM") {
    const Image ref = random_image(16, 16, 30);
    Image off = ref;
    off.data.array() += 0.1;
    CHECK(psnr(off, ref) == doctest::Approx(20.0).epsilon(1e-12));
    Image full = ref;
    full.data.array() += 1.0;
    CHECK(std::abs(psnr(full, ref)) <= 1e-12);
    CHECK(std::isinf(psnr(ref, ref)));
    CHECK(psnr_for_table(psnr(ref, ref)) == 99.0);
    CHECK(psnr(off, ref, 2.0) == doctest::Approx(20.0 + 20.0 * std::log10(2.0)));

    Image corner = ref;
    corner(0, 0) += 0.5;
    CHECK(std::isinf(psnr(corner, ref, 1.0, CenterCrop{8, 8})));
    CHECK(center_crop(ref, {8, 8})(0, 0) == ref(4, 4));

    CHECK(ssim(ref, ref) == doctest::Approx(1.0).epsilon(1e-12));
    const Image noisy = random_image(16, 16, 31, -0.1, 0.1);
    Image a = ref, b = ref;
    a.data += 0.3 * noisy.data;
    b.data += noisy.data;
    CHECK(ssim(a, ref) < 1.0);
    CHECK(ssim(b, ref) < ssim(a, ref));
    CHECK(std::abs(ssim(a, ref) - ssim(ref, a)) <= 1e-12);
    CHECK_THROWS_AS(psnr(ref, Image(4, 4)), InputError);
}
