#pragma once

#include <cstdint>
#include <functional>

#include <Eigen/Dense>

#include "sps/image.hpp"

namespace sps {

/// Stack of square filters, one per column. Tap t of a filter sits at
/// offset (t / side - r, t % side - r) from the center, r = side / 2.
struct KernelStack {
    int side = 1;
    Eigen::MatrixXd taps; // side^2 x count

    KernelStack() = default;
    KernelStack(int side, Eigen::MatrixXd taps);

    int dim() const { return side * side; }
    int count() const { return static_cast<int>(taps.cols()); }
    int radius() const { return side / 2; }
};

/// out(y, x) += scale * in((y + dy) mod h, (x + dx) mod w)
void add_shifted(double* out, const double* in, int height, int width, int dy, int dx, double scale);

/// out(y, x) = in((y + dy) mod h, (x + dx) mod w)
void copy_shifted(double* out, const double* in, int height, int width, int dy, int dx);

Image circular_shift(const Image& x, int dy, int dx);

/// Channel c at pixel k: <filter c, patch of x centered at k>, circular boundary.
CodeField conv2d_circular(const Image& x, const KernelStack& k);

/// Adjoint of conv2d_circular.
Image conv2d_transpose_circular(const CodeField& a, const KernelStack& k);

/// d x n matrix; column k is the side x side neighborhood of pixel k in tap order.
Eigen::MatrixXd extract_patches(const Image& x, int side);

/// Adjoint of extract_patches: sum_k P_k^T column_k.
Image fold_patches(const Eigen::MatrixXd& patches, int side, int height, int width);

/// sum_k (P_k a) b_k^T for an n x c matrix b (row k belongs to pixel k); d x c.
Eigen::MatrixXd patch_outer(const Image& a, const Eigen::MatrixXd& b, int side);

/// The shift-invariant operator x -> sum_k P_k^T M P_k x for a d x d matrix M,
/// applied as a (2 side - 1)^2 correlation.
class PatchGramOperator {
public:
    PatchGramOperator() = default;
    PatchGramOperator(const Eigen::MatrixXd& m, int side);

    /// M = (I - Q Q^T)^T (I - Q Q^T); Q may have zero columns.
    static PatchGramOperator projected(const Eigen::MatrixXd& q, int side);

    Image apply(const Image& x) const;

    int side() const { return side_; }
    /// Correlation taps indexed by offset (dy, dx) in [-(side-1), side-1]^2.
    const Eigen::MatrixXd& kernel() const { return kernel_; }

private:
    int side_ = 1;
    Eigen::MatrixXd kernel_;
};

/// Eigenvalues of sum_k P_hat_k^T P_hat_k on an h x w grid, as a row-major real array:
/// the DFT of the operator's response to a delta at the origin.
Eigen::VectorXd patch_gram_symbol(const Eigen::MatrixXd& q, int side, int height, int width);

using LinearMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Largest singular value of A by power iteration on A^T A.
double spectral_norm_power_iter(const LinearMap& apply, const LinearMap& apply_transpose, Eigen::Index dim,
                                int iters, double tol, std::uint64_t seed = 0x5eed);

} // namespace sps
