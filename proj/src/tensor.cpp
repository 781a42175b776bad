#include "sps/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sps/fft.hpp"

namespace sps {
namespace {

int wrap(int i, int n) {
    int r = i % n;
    return r < 0 ? r + n : r;
}

void check_kernel_fits(int side, int height, int width) {
    if (side < 1 || side % 2 == 0) {
        throw InputError("patch side must be odd and positive, got " + std::to_string(side));
    }
    if (side > std::min(height, width)) {
        throw InputError("patch side " + std::to_string(side) + " exceeds image dimensions");
    }
}

} // namespace

KernelStack::KernelStack(int s, Eigen::MatrixXd t) : side(s), taps(std::move(t)) {
    if (s < 1 || s % 2 == 0) {
        throw InputError("kernel side must be odd and positive");
    }
    if (taps.rows() != static_cast<Eigen::Index>(s) * s) {
        throw InputError("kernel taps must have side^2 rows");
    }
}

void add_shifted(double* out, const double* in, int height, int width, int dy, int dx, double scale) {
    const int sx = wrap(dx, width);
    const int first = width - sx; // columns x < first read from x + sx
    for (int y = 0; y < height; ++y) {
        const double* src = in + static_cast<std::ptrdiff_t>(wrap(y + dy, height)) * width;
        double* dst = out + static_cast<std::ptrdiff_t>(y) * width;
        for (int x = 0; x < first; ++x) {
            dst[x] += scale * src[x + sx];
        }
        for (int x = first; x < width; ++x) {
            dst[x] += scale * src[x + sx - width];
        }
    }
}

void copy_shifted(double* out, const double* in, int height, int width, int dy, int dx) {
    const int sx = wrap(dx, width);
    const int first = width - sx;
    for (int y = 0; y < height; ++y) {
        const double* src = in + static_cast<std::ptrdiff_t>(wrap(y + dy, height)) * width;
        double* dst = out + static_cast<std::ptrdiff_t>(y) * width;
        std::copy(src + sx, src + width, dst);
        std::copy(src, src + sx, dst + first);
    }
}

Image circular_shift(const Image& x, int dy, int dx) {
    Image out(x.height, x.width);
    // (T_m x)(k) = x(k - m)
    copy_shifted(out.data.data(), x.data.data(), x.height, x.width, -dy, -dx);
    return out;
}

CodeField conv2d_circular(const Image& x, const KernelStack& k) {
    check_kernel_fits(k.side, x.height, x.width);
    CodeField out(k.count(), x.height, x.width);
    Eigen::VectorXd shifted(x.pixels());
    const int r = k.radius();
    for (int t = 0; t < k.dim(); ++t) {
        copy_shifted(shifted.data(), x.data.data(), x.height, x.width, t / k.side - r, t % k.side - r);
        out.data.noalias() += shifted * k.taps.row(t);
    }
    return out;
}

Image conv2d_transpose_circular(const CodeField& a, const KernelStack& k) {
    if (a.channels != k.count()) {
        throw InputError("conv2d_transpose_circular: code has " + std::to_string(a.channels) +
                         " channels, kernel stack has " + std::to_string(k.count()));
    }
    check_kernel_fits(k.side, a.height, a.width);
    Image out(a.height, a.width);
    Eigen::VectorXd mixed(a.pixels());
    const int r = k.radius();
    for (int t = 0; t < k.dim(); ++t) {
        mixed.noalias() = a.data * k.taps.row(t).transpose();
        // adjoint of a read at +offset is a write at +offset, i.e. a read at -offset
        add_shifted(out.data.data(), mixed.data(), a.height, a.width, -(t / k.side - r), -(t % k.side - r), 1.0);
    }
    return out;
}

Eigen::MatrixXd extract_patches(const Image& x, int side) {
    check_kernel_fits(side, x.height, x.width);
    const int d = side * side;
    const int r = side / 2;
    Eigen::MatrixXd patches(d, x.pixels());
    Eigen::VectorXd shifted(x.pixels());
    for (int t = 0; t < d; ++t) {
        copy_shifted(shifted.data(), x.data.data(), x.height, x.width, t / side - r, t % side - r);
        patches.row(t) = shifted.transpose();
    }
    return patches;
}

Image fold_patches(const Eigen::MatrixXd& patches, int side, int height, int width) {
    check_kernel_fits(side, height, width);
    const int d = side * side;
    if (patches.rows() != d || patches.cols() != static_cast<Eigen::Index>(height) * width) {
        throw InputError("fold_patches: patch matrix shape mismatch");
    }
    const int r = side / 2;
    Image out(height, width);
    Eigen::VectorXd row(patches.cols());
    for (int t = 0; t < d; ++t) {
        row = patches.row(t).transpose();
        add_shifted(out.data.data(), row.data(), height, width, -(t / side - r), -(t % side - r), 1.0);
    }
    return out;
}

Eigen::MatrixXd patch_outer(const Image& a, const Eigen::MatrixXd& b, int side) {
    check_kernel_fits(side, a.height, a.width);
    if (b.rows() != a.pixels()) {
        throw InputError("patch_outer: row count must equal the pixel count");
    }
    const int d = side * side;
    const int r = side / 2;
    Eigen::MatrixXd out(d, b.cols());
    Eigen::VectorXd shifted(a.pixels());
    for (int t = 0; t < d; ++t) {
        copy_shifted(shifted.data(), a.data.data(), a.height, a.width, t / side - r, t % side - r);
        out.row(t).noalias() = shifted.transpose() * b;
    }
    return out;
}

PatchGramOperator::PatchGramOperator(const Eigen::MatrixXd& m, int side) : side_(side) {
    const int d = side * side;
    if (side < 1 || side % 2 == 0 || m.rows() != d || m.cols() != d) {
        throw InputError("PatchGramOperator: matrix must be side^2 x side^2 with odd side");
    }
    // (sum_k P_k^T M P_k x)(p) = sum_{i,j} M_ij x(p - o_i + o_j)
    const int span = 2 * side - 1;
    kernel_ = Eigen::MatrixXd::Zero(span, span);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            const int dy = j / side - i / side;
            const int dx = j % side - i % side;
            kernel_(dy + side - 1, dx + side - 1) += m(i, j);
        }
    }
}

PatchGramOperator PatchGramOperator::projected(const Eigen::MatrixXd& q, int side) {
    const int d = side * side;
    if (q.rows() != d) {
        throw InputError("PatchGramOperator: Q must have side^2 rows");
    }
    Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(d, d);
    if (q.cols() > 0) {
        proj.noalias() -= q * q.transpose();
    }
    return PatchGramOperator(proj.transpose() * proj, side);
}

Image PatchGramOperator::apply(const Image& x) const {
    check_kernel_fits(side_, x.height, x.width);
    Image out(x.height, x.width);
    const int span = 2 * side_ - 1;
    for (int a = 0; a < span; ++a) {
        for (int b = 0; b < span; ++b) {
            const double c = kernel_(a, b);
            if (c != 0.0) {
                add_shifted(out.data.data(), x.data.data(), x.height, x.width, a - side_ + 1, b - side_ + 1, c);
            }
        }
    }
    return out;
}

Eigen::VectorXd patch_gram_symbol(const Eigen::MatrixXd& q, int side, int height, int width) {
    const auto op = PatchGramOperator::projected(q, side);
    Image delta(height, width);
    delta(0, 0) = 1.0;
    const Image response = op.apply(delta);
    const Eigen::VectorXcd spectrum = fft::forward2d(response.data, height, width);
    // The operator is symmetric, so its symbol is real up to rounding.
    return spectrum.real();
}

double spectral_norm_power_iter(const LinearMap& apply, const LinearMap& apply_transpose, Eigen::Index dim,
                                int iters, double tol, std::uint64_t seed) {
    if (iters < 1) {
        throw InputError("spectral_norm_power_iter: iters must be >= 1");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::VectorXd v(dim);
    for (auto& e : v) {
        e = normal(rng);
    }
    v.normalize();
    double rayleigh = 0.0;
    for (int it = 0; it < iters; ++it) {
        const Eigen::VectorXd w = apply_transpose(apply(v));
        const double next = v.dot(w);
        const double norm = w.norm();
        if (norm == 0.0) {
            return 0.0;
        }
        v = w / norm;
        const bool done = it > 0 && std::abs(next - rayleigh) <= tol * std::abs(next);
        rayleigh = std::max(rayleigh, next);
        if (done) {
            break;
        }
    }
    return std::sqrt(std::max(rayleigh, 0.0));
}

} // namespace sps
