// Shared fixtures and independent dense oracles for the tests.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "sps/forward_operators.hpp"
#include "sps/model.hpp"
#include "sps/regularizers.hpp"
#include "sps/solver.hpp"

namespace testing_support {

using sps::CodeField;
using sps::Image;

inline Image random_image(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(h, w);
    for (Eigen::Index i = 0; i < img.data.size(); ++i) {
        img.data[i] = u(rng);
    }
    return img;
}

inline CodeField random_code(int c, int h, int w, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    CodeField a(c, h, w);
    for (Eigen::Index i = 0; i < a.data.size(); ++i) {
        a.data.data()[i] = n(rng);
    }
    return a;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = n(rng);
    }
    return m;
}

// Smooth shading, a few flat shapes, and mild texture: enough structure for
// patch dictionaries to learn something, reproducible from the seed.
inline Image procedural_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w);
    const double gx = u(rng) - 0.5, gy = u(rng) - 0.5, base = 0.3 + 0.4 * u(rng);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            img(y, x) = base + 0.3 * (gx * x / w + gy * y / h);
        }
    }
    const int shapes = 3 + static_cast<int>(u(rng) * 4);
    for (int s = 0; s < shapes; ++s) {
        const double cy = u(rng) * h, cx = u(rng) * w;
        const double ry = (0.1 + 0.3 * u(rng)) * h, rx = (0.1 + 0.3 * u(rng)) * w;
        const double level = u(rng);
        const bool disk = u(rng) < 0.5;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double dy = (y - cy) / ry, dx = (x - cx) / rx;
                const bool inside = disk ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
                if (inside) {
                    img(y, x) = 0.5 * img(y, x) + 0.5 * level;
                }
            }
        }
    }
    const double fy = 0.2 + 0.8 * u(rng), fx = 0.2 + 0.8 * u(rng), ph = 6.28 * u(rng);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            img(y, x) = std::clamp(img(y, x) + 0.04 * std::sin(fy * y + fx * x + ph), 0.0, 1.0);
        }
    }
    return img;
}

// Modified Shepp-Logan head phantom (Toft's intensities) on an h x w grid.
inline Image shepp_logan(int h, int w, double jitter = 0.0, std::uint64_t seed = 0) {
    struct E { double a, x0, y0, ax, ay, phi; };
    const E es[] = {{1.0, 0, 0, 0.69, 0.92, 0},         {-0.8, 0, -0.0184, 0.6624, 0.874, 0},
                    {-0.2, 0.22, 0, 0.11, 0.31, -18},   {-0.2, -0.22, 0, 0.16, 0.41, 18},
                    {0.1, 0, 0.35, 0.21, 0.25, 0},      {0.1, 0, 0.1, 0.046, 0.046, 0},
                    {0.1, 0, -0.1, 0.046, 0.046, 0},    {0.1, -0.08, -0.605, 0.046, 0.023, 0},
                    {0.1, 0, -0.606, 0.023, 0.023, 0},  {0.1, 0.06, -0.605, 0.023, 0.046, 0}};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-jitter, jitter);
    Image img(h, w);
    for (const auto& e0 : es) {
        E e = e0;
        e.x0 += u(rng);
        e.y0 += u(rng);
        const double c = std::cos(e.phi * M_PI / 180.0), s = std::sin(e.phi * M_PI / 180.0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double px = (2.0 * x + 1.0) / w - 1.0 - e.x0;
                const double py = 1.0 - (2.0 * y + 1.0) / h - e.y0;
                const double rx = (px * c + py * s) / e.ax;
                const double ry = (-px * s + py * c) / e.ay;
                if (rx * rx + ry * ry <= 1.0) {
                    img(y, x) += e.a;
                }
            }
        }
    }
    img.data = img.data.cwiseMax(0.0).cwiseMin(1.0);
    return img;
}

// ---- dense oracles: patches materialized as explicit matrices ----

inline int wrap(int i, int n) { return ((i % n) + n) % n; }

// P_k as a d x n 0/1 matrix.
inline Eigen::MatrixXd patch_matrix(int k, int side, int h, int w) {
    const int r = side / 2;
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(side * side, h * w);
    const int y = k / w, x = k % w;
    for (int t = 0; t < side * side; ++t) {
        p(t, wrap(y + t / side - r, h) * w + wrap(x + t % side - r, w)) = 1.0;
    }
    return p;
}

inline std::vector<Eigen::MatrixXd> all_patch_matrices(int side, int h, int w) {
    std::vector<Eigen::MatrixXd> ps;
    for (int k = 0; k < h * w; ++k) {
        ps.push_back(patch_matrix(k, side, h, w));
    }
    return ps;
}

// Direct double loop for channel c: sum_t k(t, c) x(y + dy_t, x + dx_t).
inline CodeField brute_conv(const Image& img, const Eigen::MatrixXd& taps, int side) {
    const int r = side / 2;
    CodeField out(static_cast<int>(taps.cols()), img.height, img.width);
    for (int c = 0; c < taps.cols(); ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                double s = 0.0;
                for (int t = 0; t < side * side; ++t) {
                    s += taps(t, c) * img(wrap(y + t / side - r, img.height), wrap(x + t % side - r, img.width));
                }
                out.at(c, y, x) = s;
            }
        }
    }
    return out;
}

// Dense H for the identity / blur / Fourier operators, columns = H e_j (real embedding).
inline Eigen::MatrixXd dense_operator(const sps::ForwardOperator& h, int height, int width) {
    const int n = height * width;
    Eigen::MatrixXd m;
    for (int j = 0; j < n; ++j) {
        Image e(height, width);
        e.data[j] = 1.0;
        const auto y = h.apply(e);
        if (m.size() == 0) {
            m.resize(y.values.size(), n);
        }
        m.col(j) = y.values;
    }
    return m;
}

// Literal transcription of one inertial sweep with explicit P_k, Pi, D, H.
struct DenseProblem {
    int h = 0, w = 0, side = 0;
    Eigen::MatrixXd d, proj, hmat;
    Eigen::VectorXd y;
    double beta = 1.0, gamma1 = 0.0, gamma2 = 0.0;
    sps::RegularizerParams reg;
    std::vector<Eigen::MatrixXd> patches;

    explicit DenseProblem(const sps::InnerProblem& p) {
        h = p.height();
        w = p.width();
        side = p.model().dict.side();
        d = p.model().dict.d.taps;
        const Eigen::MatrixXd q = p.model().dict.q.taps;
        proj = Eigen::MatrixXd::Identity(d.rows(), d.rows()) - q * q.transpose();
        hmat = dense_operator(p.op(), h, w);
        y = p.measurement().values;
        beta = p.model().beta;
        gamma1 = p.steps().gamma1;
        gamma2 = p.steps().gamma2;
        reg = p.model().reg;
        patches = all_patch_matrices(side, h, w);
    }

    CodeField alpha_update(const CodeField& a_bar, const Eigen::VectorXd& x) const {
        CodeField u(a_bar.channels, h, w);
        for (int k = 0; k < h * w; ++k) {
            const Eigen::VectorXd ak = a_bar.data.row(k).transpose();
            const Eigen::VectorXd grad = d.transpose() * (d * ak - proj * patches[k] * x);
            u.data.row(k) = (ak - gamma1 * grad).transpose();
        }
        return sps::regularizer_prox(u, gamma1, reg);
    }

    Eigen::VectorXd x_update(const Eigen::VectorXd& z, const CodeField& a) const {
        Eigen::VectorXd g = hmat.transpose() * (hmat * z - y);
        for (int k = 0; k < h * w; ++k) {
            const Eigen::MatrixXd ph = proj * patches[k];
            g += beta * ph.transpose() * (ph * z - d * a.data.row(k).transpose());
        }
        return z - gamma2 * g;
    }

    double objective_cpr(const Eigen::VectorXd& x, const CodeField& a) const {
        double v = 0.5 * (hmat * x - y).squaredNorm();
        for (int k = 0; k < h * w; ++k) {
            v += 0.5 * beta * (proj * patches[k] * x - d * a.data.row(k).transpose()).squaredNorm();
        }
        return v + beta * sps::cpr_value(a, reg);
    }
};

// FISTA on the joint (x, alpha) CPR objective (regularizer weighted by beta) with the exact
// Lipschitz constant of the smooth part; returns the best objective value.
inline double dense_cpr_optimum(const DenseProblem& dp, int channels, double tol, int max_iters,
                                Eigen::VectorXd* x_out = nullptr) {
    const int n = dp.h * dp.w;
    const int m = n + n * channels;
    // smooth part 1/2 ||A z - b||^2 with z = [x; alpha (pixel-major)]
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(dp.hmat.rows() + n * dp.d.rows(), m);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(a.rows());
    a.topLeftCorner(dp.hmat.rows(), n) = dp.hmat;
    b.head(dp.hmat.rows()) = dp.y;
    const double sb = std::sqrt(dp.beta);
    for (int k = 0; k < n; ++k) {
        const Eigen::Index row = dp.hmat.rows() + k * dp.d.rows();
        a.block(row, 0, dp.d.rows(), n) = sb * dp.proj * dp.patches[k];
        a.block(row, n + k * channels, dp.d.rows(), channels) = -sb * dp.d;
    }
    const Eigen::MatrixXd ata = a.transpose() * a;
    const Eigen::VectorXd atb = a.transpose() * b;
    const double lip = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(ata).eigenvalues().maxCoeff();
    const double step = 1.0 / lip;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd zprev = z, v = z;
    double t = 1.0;
    auto split_alpha = [&](const Eigen::VectorXd& vec) {
        CodeField al(channels, dp.h, dp.w);
        for (int k = 0; k < n; ++k) {
            al.data.row(k) = vec.segment(n + k * channels, channels).transpose();
        }
        return al;
    };
    auto objective = [&](const Eigen::VectorXd& vec) {
        return 0.5 * (a * vec - b).squaredNorm() + dp.beta * sps::cpr_value(split_alpha(vec), dp.reg);
    };
    double best = objective(z);
    for (int it = 0; it < max_iters; ++it) {
        // FISTA with adaptive restart
        const Eigen::VectorXd g = v - step * (ata * v - atb);
        CodeField al = sps::cpr_prox(split_alpha(g), step * dp.beta, dp.reg);
        Eigen::VectorXd znew = g;
        for (int k = 0; k < n; ++k) {
            znew.segment(n + k * channels, channels) = al.data.row(k).transpose();
        }
        const double tnew = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        if ((v - znew).dot(znew - z) > 0.0) {
            v = znew;
            t = 1.0;
        } else {
            v = znew + ((t - 1.0) / tnew) * (znew - z);
            t = tnew;
        }
        const double change = (znew - z).norm() / (z.norm() + 1e-12);
        zprev = z;
        z = znew;
        best = std::min(best, objective(z));
        if (change < tol) {
            break;
        }
    }
    if (x_out) {
        *x_out = z.head(n);
    }
    return best;
}

// Minimize 1/2 ||u - a||^2 + t ||u||_2 over a 4-vector by a coarse grid on the
// radial scale followed by golden-section refinement (the minimizer is a
// nonnegative multiple of a).
inline Eigen::Vector4d brute_group_prox(const Eigen::Vector4d& a, double t) {
    const double na = a.norm();
    if (na == 0.0) {
        return a;
    }
    auto f = [&](double s) { return 0.5 * (s * a - a).squaredNorm() + t * s * na; };
    double best_s = 0.0, best_f = f(0.0);
    for (int i = 1; i <= 2000; ++i) {
        const double s = i / 2000.0;
        if (f(s) < best_f) {
            best_f = f(s);
            best_s = s;
        }
    }
    double lo = std::max(0.0, best_s - 1e-3), hi = std::min(1.0, best_s + 1e-3);
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int i = 0; i < 200; ++i) {
        const double m1 = hi - g * (hi - lo), m2 = lo + g * (hi - lo);
        if (f(m1) < f(m2)) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    const double s = 0.5 * (lo + hi);
    return f(s) < best_f ? Eigen::Vector4d(s * a) : Eigen::Vector4d(best_s * a);
}

} // namespace testing_support
