#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sps/image.hpp"

namespace sps {

enum class OperatorKind { Identity, BlurStride, MaskedFourier };

const char* to_string(OperatorKind kind);

/// Measured data. Real measurements store an image; Fourier measurements store
/// the full h x w k-space grid as interleaved (re, im) pairs, zero off the mask.
/// The real inner product on `values` is the one the adjoint is defined for.
struct Measurement {
    OperatorKind kind = OperatorKind::Identity;
    int height = 0;
    int width = 0;
    bool complex = false;
    Eigen::VectorXd values;
    double noise_sigma = 0.0;

    Image as_image() const;
    double dot(const Measurement& other) const;
    Measurement& operator-=(const Measurement& other);
};

/// Column selector for Cartesian k-space sampling, in unshifted DFT order (column 0 = DC).
struct SamplingMask {
    std::vector<bool> keep;
    int width() const { return static_cast<int>(keep.size()); }
    int kept() const;
    std::string to_string() const;
    static SamplingMask from_string(const std::string& bits);
};

double default_center_fraction(int acceleration);

/// Keeps floor(w / acc) columns: the floor(center_fraction * w) lowest frequencies
/// plus uniformly drawn others.
SamplingMask generate_column_mask(int height, int width, int acceleration, double center_fraction,
                                  std::uint64_t seed);

class ForwardOperator {
public:
    static ForwardOperator identity();
    /// size x size sampled Gaussian (sum 1), circular convolution, then keep every stride-th pixel.
    static ForwardOperator blur_stride(double sigma = 2.0, int size = 16, int stride = 4);
    /// Unitary 2-D DFT followed by column masking.
    static ForwardOperator masked_fourier(SamplingMask mask);

    OperatorKind kind() const { return kind_; }
    const Eigen::MatrixXd& kernel() const { return kernel_; }
    int stride() const { return stride_; }
    double blur_sigma() const { return blur_sigma_; }
    const SamplingMask& mask() const { return mask_; }

    void check_image(int height, int width) const;
    Measurement apply(const Image& x) const;
    Image adjoint(const Measurement& y) const;
    /// H^T H x
    Image normal(const Image& x) const { return adjoint(apply(x)); }
    Measurement zero_measurement(int height, int width) const;

    /// ||H||_2 on h x w images.
    double norm(int height, int width) const;

    std::string describe() const;

private:
    OperatorKind kind_ = OperatorKind::Identity;
    Eigen::MatrixXd kernel_;
    int stride_ = 1;
    double blur_sigma_ = 0.0;
    SamplingMask mask_;

    struct NormCache {
        std::mutex mutex;
        std::map<std::pair<int, int>, double> values;
    };
    std::shared_ptr<NormCache> norm_cache_ = std::make_shared<NormCache>();
};

/// y = H x + n with i.i.d. Gaussian n; complex data gets independent real and
/// imaginary parts, only on kept entries.
Measurement simulate_measurements(const ForwardOperator& h, const Image& x_true, double sigma, std::uint64_t seed);

} // namespace sps
