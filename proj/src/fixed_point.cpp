#include "sps/fixed_point.hpp"

#include <cmath>
#include <deque>

#include "sps/error.hpp"

namespace sps {
namespace {

struct Best {
    Eigen::VectorXd z;
    double residual = INFINITY;

    void offer(const Eigen::VectorXd& cand, double res) {
        if (res < residual) {
            residual = res;
            z = cand;
        }
    }
};

} // namespace

FixedPointResult anderson_solve(const FixedPointMap& g, Eigen::VectorXd z0, const AndersonOptions& opts) {
    if (opts.memory < 1 || opts.iters < 1) {
        throw InputError("anderson_solve: memory and iters must be >= 1");
    }
    FixedPointResult out;
    Best best;
    std::deque<Eigen::VectorXd> zs, fs;
    Eigen::VectorXd z = std::move(z0);
    const double beta = opts.damping;
    for (int k = 0; k < opts.iters; ++k) {
        const Eigen::VectorXd gz = g(z);
        const Eigen::VectorXd f = gz - z;
        const double res = f.norm();
        ++out.iters;
        if (!std::isfinite(res)) {
            break;
        }
        best.offer(z, res);
        if (res <= opts.tol) {
            out.converged = true;
            break;
        }
        zs.push_back(z);
        fs.push_back(f);
        while (static_cast<int>(zs.size()) > opts.memory) {
            zs.pop_front();
            fs.pop_front();
        }
        const Eigen::Index hist = static_cast<Eigen::Index>(zs.size()) - 1;
        Eigen::VectorXd next = z + beta * f;
        if (hist > 0) {
            Eigen::MatrixXd df(z.size(), hist), dz(z.size(), hist);
            for (Eigen::Index i = 0; i < hist; ++i) {
                df.col(i) = fs[i + 1] - fs[i];
                dz.col(i) = zs[i + 1] - zs[i];
            }
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(df);
            qr.setThreshold(1e-12);
            if (qr.rank() == hist) {
                const Eigen::VectorXd gamma = qr.solve(f);
                next -= (dz + beta * df) * gamma;
            } else {
                ++out.fallbacks;
            }
        }
        z = std::move(next);
    }
    out.z = best.z.size() ? best.z : z;
    out.residual = best.residual;
    return out;
}

FixedPointResult broyden_solve(const FixedPointMap& g, Eigen::VectorXd z0, const BroydenOptions& opts) {
    if (opts.memory < 1 || opts.iters < 1) {
        throw InputError("broyden_solve: memory and iters must be >= 1");
    }
    FixedPointResult out;
    Best best;
    std::deque<Eigen::VectorXd> us, vs;
    // B x = -x + sum_i u_i (v_i . x)
    auto apply_b = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd r = -x;
        for (std::size_t i = 0; i < us.size(); ++i) {
            r += us[i] * vs[i].dot(x);
        }
        return r;
    };
    auto apply_bt = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd r = -x;
        for (std::size_t i = 0; i < us.size(); ++i) {
            r += vs[i] * us[i].dot(x);
        }
        return r;
    };

    Eigen::VectorXd z = std::move(z0);
    Eigen::VectorXd f = g(z) - z;
    ++out.iters;
    double res = f.norm();
    best.offer(z, res);
    while (std::isfinite(res) && res > opts.tol && out.iters < opts.iters) {
        const Eigen::VectorXd step = -apply_b(f);
        const Eigen::VectorXd z_next = z + step;
        const Eigen::VectorXd f_next = g(z_next) - z_next;
        ++out.iters;
        res = f_next.norm();
        if (!std::isfinite(res)) {
            break;
        }
        best.offer(z_next, res);
        const Eigen::VectorXd y = f_next - f;
        const Eigen::VectorXd by = apply_b(y);
        const Eigen::VectorXd vt = apply_bt(step);
        const double denom = vt.dot(y);
        if (std::abs(denom) > 1e-300 && std::isfinite(denom)) {
            // dropping the oldest pair stalls on non-normal maps; restart instead
            if (static_cast<int>(us.size()) >= opts.memory) {
                us.clear();
                vs.clear();
            }
            us.push_back((step - by) / denom);
            vs.push_back(vt);
        } else {
            us.clear();
            vs.clear();
        }
        z = z_next;
        f = f_next;
    }
    out.converged = best.residual <= opts.tol;
    out.z = best.z;
    out.residual = best.residual;
    return out;
}

} // namespace sps
