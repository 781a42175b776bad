#include "sps/dictionary.hpp"

#include <cmath>

#include "sps/linalg.hpp"

namespace sps {
namespace {

double orthonormality_error(const Eigen::MatrixXd& q) {
    const Eigen::Index m = q.cols();
    return (q.transpose() * q - Eigen::MatrixXd::Identity(m, m)).norm();
}

} // namespace

Eigen::MatrixXd bjorck_orthonormalize(const Eigen::MatrixXd& q0, int iters, std::vector<Eigen::MatrixXd>* iterates) {
    Eigen::MatrixXd q = q0;
    if (iterates) {
        iterates->clear();
    }
    if (q.cols() == 0) {
        return q;
    }
    const Eigen::Index m = q.cols();
    double err = orthonormality_error(q);
    for (int it = 0; it < iters; ++it) {
        if (iterates) {
            iterates->push_back(q);
        }
        const Eigen::MatrixXd gram = q.transpose() * q;
        q = 0.5 * q * (3.0 * Eigen::MatrixXd::Identity(m, m) - gram);
        const double next = orthonormality_error(q);
        if (!std::isfinite(next) || next > err * (1.0 + 1e-9) + 1e-12) {
            throw DivergenceError("Björck iteration diverged", it + 1);
        }
        err = next;
    }
    // A zero singular value is a fixed point of the recursion and leaves an error >= 1.
    if (iters > 0 && err >= 0.5) {
        throw DivergenceError("Björck iteration did not orthonormalize (rank-deficient input?)", iters);
    }
    return q;
}

DictionaryPair parameterize_dictionaries(const RawDictionaries& raw, ParameterizationTape* tape) {
    const int side = raw.side;
    const int d = side * side;
    if (side < 1 || side % 2 == 0) {
        throw InputError("patch side must be odd");
    }
    if (raw.d.rows() != d || raw.q.rows() != d) {
        throw InputError("raw dictionaries must have side^2 rows");
    }
    if (raw.q.cols() + 1 > d) {
        throw InputError("free subspace dimension p2 exceeds patch dimension");
    }
    if (!raw.d.allFinite() || !raw.q.allFinite()) {
        throw InputError("raw dictionaries contain non-finite entries");
    }
    ParameterizationTape local;
    ParameterizationTape& t = tape ? *tape : local;

    const Eigen::Index m = raw.q.cols();
    t.q_centered = raw.q.rowwise() - raw.q.colwise().mean();
    Eigen::MatrixXd qb(d, m);
    if (m > 0) {
        const SingularTriple top = top_singular_triple(t.q_centered);
        if (top.sigma <= 0.0) {
            throw DivergenceError("raw free dictionary is zero after centering", 0);
        }
        t.q_scale = top.sigma;
        t.q_scale_left = top.left;
        t.q_scale_right = top.right;
        qb = bjorck_orthonormalize(t.q_centered / top.sigma, kBjorckIterations, &t.bjorck_iterates);
    }
    t.q_full.resize(d, m + 1);
    t.q_full.leftCols(m) = qb;
    t.q_full.col(m).setConstant(1.0 / std::sqrt(static_cast<double>(d)));

    t.d_raw = raw.d;
    const Eigen::MatrixXd projected = raw.d - t.q_full * (t.q_full.transpose() * raw.d);
    t.column_norms = projected.colwise().norm().transpose();
    for (Eigen::Index k = 0; k < projected.cols(); ++k) {
        if (t.column_norms[k] < kDegenerateAtomThreshold) {
            throw DegenerateAtomError(static_cast<int>(k), t.column_norms[k]);
        }
    }
    t.d_unit = projected * t.column_norms.cwiseInverse().asDiagonal();
    const SingularTriple top = top_singular_triple(t.d_unit);
    t.d_scale = top.sigma;
    t.d_scale_left = top.left;
    t.d_scale_right = top.right;

    return DictionaryPair{Dictionary(side, t.d_unit / top.sigma), Dictionary(side, t.q_full)};
}

RawDictionaries parameterize_vjp(const ParameterizationTape& t, const Eigen::MatrixXd& grad_d,
                                 const Eigen::MatrixXd& grad_q) {
    const Eigen::Index d = t.q_full.rows();
    const Eigen::Index m = t.q_full.cols() - 1;

    // D = D_unit / sigma(D_unit), d sigma = u^T dD_unit v
    const Eigen::MatrixXd g_unit =
        grad_d / t.d_scale -
        (grad_d.cwiseProduct(t.d_unit).sum() / (t.d_scale * t.d_scale)) * t.d_scale_left * t.d_scale_right.transpose();

    // column normalization
    Eigen::MatrixXd g_proj(g_unit.rows(), g_unit.cols());
    for (Eigen::Index k = 0; k < g_unit.cols(); ++k) {
        const auto u = t.d_unit.col(k);
        g_proj.col(k) = (g_unit.col(k) - u * u.dot(g_unit.col(k))) / t.column_norms[k];
    }

    // D_proj = D_raw - Q Q^T D_raw
    const Eigen::MatrixXd& q = t.q_full;
    RawDictionaries out;
    out.side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(d))));
    out.d = g_proj - q * (q.transpose() * g_proj);
    Eigen::MatrixXd g_qfull = grad_q - g_proj * (t.d_raw.transpose() * q) - t.d_raw * (g_proj.transpose() * q);

    out.q = Eigen::MatrixXd::Zero(d, m);
    if (m == 0) {
        return out;
    }
    Eigen::MatrixXd g = g_qfull.leftCols(m);
    for (auto it = t.bjorck_iterates.rbegin(); it != t.bjorck_iterates.rend(); ++it) {
        const Eigen::MatrixXd& qk = *it;
        g = 1.5 * g - 0.5 * (g * (qk.transpose() * qk) + qk * (g.transpose() * qk) + qk * (qk.transpose() * g));
    }
    // Q_0 = Q_centered / sigma(Q_centered)
    const Eigen::MatrixXd g_centered =
        g / t.q_scale -
        (g.cwiseProduct(t.q_centered).sum() / (t.q_scale * t.q_scale)) * t.q_scale_left * t.q_scale_right.transpose();
    out.q = g_centered.rowwise() - g_centered.colwise().mean();
    return out;
}

FeasibilityReport validate_feasible_set(const DictionaryPair& pair, double tol) {
    FeasibilityReport r;
    r.tol = tol;
    const Eigen::MatrixXd& dm = pair.d.taps;
    const Eigen::MatrixXd& qm = pair.q.taps;
    r.orthonormality = orthonormality_error(qm);
    r.cross = (qm.transpose() * dm).norm();
    r.spectral_error = std::abs(spectral_norm(dm) - 1.0);
    if (dm.cols() > 0) {
        const Eigen::VectorXd norms = dm.colwise().norm().transpose();
        r.norm_spread = (norms.array() - norms[0]).abs().maxCoeff();
    }
    for (Eigen::Index c = 0; c < qm.cols(); ++c) {
        const auto col = qm.col(c);
        if (col.minCoeff() > 0.0 && col.maxCoeff() - col.minCoeff() <= tol) {
            r.constant_atom = true;
        }
    }
    r.passed = r.constant_atom && r.orthonormality <= tol && r.cross <= tol && r.spectral_error <= tol &&
               r.norm_spread <= tol;
    return r;
}

} // namespace sps
