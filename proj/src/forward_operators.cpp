#include "sps/forward_operators.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>
#include <sstream>

#include "sps/fft.hpp"
#include "sps/tensor.hpp"

namespace sps {

const char* to_string(OperatorKind kind) {
    switch (kind) {
    case OperatorKind::Identity:
        return "identity";
    case OperatorKind::BlurStride:
        return "blur-stride";
    case OperatorKind::MaskedFourier:
        return "masked-fourier";
    }
    return "unknown";
}

Image Measurement::as_image() const {
    if (complex) {
        throw InputError("complex measurement cannot be viewed as an image");
    }
    return Image(height, width, values);
}

double Measurement::dot(const Measurement& other) const {
    if (other.values.size() != values.size()) {
        throw InputError("measurement sizes differ");
    }
    return values.dot(other.values);
}

Measurement& Measurement::operator-=(const Measurement& other) {
    if (other.values.size() != values.size() || other.complex != complex) {
        throw InputError("measurement sizes differ");
    }
    values -= other.values;
    return *this;
}

int SamplingMask::kept() const { return static_cast<int>(std::count(keep.begin(), keep.end(), true)); }

std::string SamplingMask::to_string() const {
    std::string s;
    s.reserve(keep.size());
    for (bool b : keep) {
        s.push_back(b ? '1' : '0');
    }
    return s;
}

SamplingMask SamplingMask::from_string(const std::string& bits) {
    SamplingMask m;
    for (char c : bits) {
        if (c != '0' && c != '1') {
            throw InputError("mask string must contain only 0 and 1");
        }
        m.keep.push_back(c == '1');
    }
    return m;
}

double default_center_fraction(int acceleration) { return 0.04 * 8.0 / acceleration; }

SamplingMask generate_column_mask(int height, int width, int acceleration, double center_fraction,
                                  std::uint64_t seed) {
    if (height < 1 || width < 1) {
        throw InputError("mask dimensions must be positive");
    }
    if (acceleration < 1) {
        throw InputError("acceleration must be >= 1");
    }
    if (center_fraction < 0.0 || center_fraction >= 1.0) {
        throw InputError("center fraction must lie in [0, 1)");
    }
    const int total = width / acceleration;
    const int center = static_cast<int>(std::floor(center_fraction * width));
    if (center > total) {
        throw InputError("center band (" + std::to_string(center) + " columns) exceeds the " +
                         std::to_string(total) + " columns allowed by acceleration " + std::to_string(acceleration));
    }
    std::vector<int> order(width);
    std::iota(order.begin(), order.end(), 0);
    auto signed_freq = [width](int j) { return j <= width / 2 ? j : j - width; };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const int fa = signed_freq(a), fb = signed_freq(b);
        if (std::abs(fa) != std::abs(fb)) {
            return std::abs(fa) < std::abs(fb);
        }
        return fa > fb;
    });
    SamplingMask mask;
    mask.keep.assign(width, false);
    for (int i = 0; i < center; ++i) {
        mask.keep[order[i]] = true;
    }
    std::vector<int> rest(order.begin() + center, order.end());
    std::sort(rest.begin(), rest.end());
    std::mt19937_64 rng(seed);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (int i = 0; i < total - center; ++i) {
        mask.keep[rest[i]] = true;
    }
    return mask;
}

ForwardOperator ForwardOperator::identity() { return ForwardOperator(); }

ForwardOperator ForwardOperator::blur_stride(double sigma, int size, int stride) {
    if (size < 1 || stride < 1 || !(sigma > 0.0)) {
        throw InputError("blur-stride operator needs size >= 1, stride >= 1, sigma > 0");
    }
    ForwardOperator op;
    op.kind_ = OperatorKind::BlurStride;
    op.stride_ = stride;
    op.blur_sigma_ = sigma;
    op.kernel_.resize(size, size);
    const double c = 0.5 * (size - 1);
    for (int a = 0; a < size; ++a) {
        for (int b = 0; b < size; ++b) {
            op.kernel_(a, b) = std::exp(-((a - c) * (a - c) + (b - c) * (b - c)) / (2.0 * sigma * sigma));
        }
    }
    op.kernel_ /= op.kernel_.sum();
    return op;
}

ForwardOperator ForwardOperator::masked_fourier(SamplingMask mask) {
    if (mask.keep.empty()) {
        throw InputError("empty sampling mask");
    }
    ForwardOperator op;
    op.kind_ = OperatorKind::MaskedFourier;
    op.mask_ = std::move(mask);
    return op;
}

void ForwardOperator::check_image(int height, int width) const {
    if (height < 1 || width < 1) {
        throw InputError("image dimensions must be positive");
    }
    if (kind_ == OperatorKind::BlurStride && (height % stride_ != 0 || width % stride_ != 0)) {
        throw InputError("image dimensions " + std::to_string(height) + "x" + std::to_string(width) +
                         " are not divisible by stride " + std::to_string(stride_));
    }
    if (kind_ == OperatorKind::MaskedFourier && width != mask_.width()) {
        throw InputError("mask width " + std::to_string(mask_.width()) + " does not match image width " +
                         std::to_string(width));
    }
}

Measurement ForwardOperator::zero_measurement(int height, int width) const {
    check_image(height, width);
    Measurement m;
    m.kind = kind_;
    switch (kind_) {
    case OperatorKind::Identity:
        m.height = height;
        m.width = width;
        m.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(height) * width);
        break;
    case OperatorKind::BlurStride:
        m.height = height / stride_;
        m.width = width / stride_;
        m.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.height) * m.width);
        break;
    case OperatorKind::MaskedFourier:
        m.height = height;
        m.width = width;
        m.complex = true;
        m.values = Eigen::VectorXd::Zero(2 * static_cast<Eigen::Index>(height) * width);
        break;
    }
    return m;
}

Measurement ForwardOperator::apply(const Image& x) const {
    Measurement m = zero_measurement(x.height, x.width);
    switch (kind_) {
    case OperatorKind::Identity:
        m.values = x.data;
        break;
    case OperatorKind::BlurStride: {
        const int size = static_cast<int>(kernel_.rows());
        const int anchor = size / 2;
        Image blurred(x.height, x.width);
        for (int a = 0; a < size; ++a) {
            for (int b = 0; b < size; ++b) {
                add_shifted(blurred.data.data(), x.data.data(), x.height, x.width, a - anchor, b - anchor,
                            kernel_(a, b));
            }
        }
        for (int i = 0; i < m.height; ++i) {
            for (int j = 0; j < m.width; ++j) {
                m.values[static_cast<Eigen::Index>(i) * m.width + j] = blurred(i * stride_, j * stride_);
            }
        }
        break;
    }
    case OperatorKind::MaskedFourier: {
        const Eigen::VectorXcd spectrum = fft::forward2d(x.data, x.height, x.width);
        const double scale = 1.0 / std::sqrt(static_cast<double>(x.pixels()));
        for (int r = 0; r < x.height; ++r) {
            for (int c = 0; c < x.width; ++c) {
                if (!mask_.keep[c]) {
                    continue;
                }
                const Eigen::Index k = static_cast<Eigen::Index>(r) * x.width + c;
                m.values[2 * k] = spectrum[k].real() * scale;
                m.values[2 * k + 1] = spectrum[k].imag() * scale;
            }
        }
        break;
    }
    }
    return m;
}

Image ForwardOperator::adjoint(const Measurement& y) const {
    if (y.kind != kind_) {
        throw InputError("measurement kind does not match operator");
    }
    switch (kind_) {
    case OperatorKind::Identity:
        return Image(y.height, y.width, y.values);
    case OperatorKind::BlurStride: {
        const int h = y.height * stride_;
        const int w = y.width * stride_;
        Image up(h, w);
        for (int i = 0; i < y.height; ++i) {
            for (int j = 0; j < y.width; ++j) {
                up(i * stride_, j * stride_) = y.values[static_cast<Eigen::Index>(i) * y.width + j];
            }
        }
        const int size = static_cast<int>(kernel_.rows());
        const int anchor = size / 2;
        Image out(h, w);
        for (int a = 0; a < size; ++a) {
            for (int b = 0; b < size; ++b) {
                add_shifted(out.data.data(), up.data.data(), h, w, anchor - a, anchor - b, kernel_(a, b));
            }
        }
        return out;
    }
    case OperatorKind::MaskedFourier: {
        check_image(y.height, y.width);
        const Eigen::Index n = static_cast<Eigen::Index>(y.height) * y.width;
        if (y.values.size() != 2 * n) {
            throw InputError("k-space measurement has the wrong size");
        }
        Eigen::VectorXcd grid = Eigen::VectorXcd::Zero(n);
        for (int r = 0; r < y.height; ++r) {
            for (int c = 0; c < y.width; ++c) {
                if (!mask_.keep[c]) {
                    continue;
                }
                const Eigen::Index k = static_cast<Eigen::Index>(r) * y.width + c;
                grid[k] = {y.values[2 * k], y.values[2 * k + 1]};
            }
        }
        // F^H = sqrt(n) * ifft for the unitary F = fft / sqrt(n)
        const Eigen::VectorXcd back = fft::inverse2d(grid, y.height, y.width);
        return Image(y.height, y.width, Eigen::VectorXd(back.real() * std::sqrt(static_cast<double>(n))));
    }
    }
    throw InputError("unknown operator kind");
}

double ForwardOperator::norm(int height, int width) const {
    check_image(height, width);
    switch (kind_) {
    case OperatorKind::Identity:
        return 1.0;
    case OperatorKind::MaskedFourier:
        return mask_.kept() > 0 ? 1.0 : 0.0;
    case OperatorKind::BlurStride:
        break;
    }
    std::lock_guard lock(norm_cache_->mutex);
    const auto key = std::make_pair(height, width);
    if (const auto it = norm_cache_->values.find(key); it != norm_cache_->values.end()) {
        return it->second;
    }
    const Measurement shape = zero_measurement(height, width);
    const LinearMap fwd = [&](const Eigen::VectorXd& v) { return apply(Image(height, width, v)).values; };
    const LinearMap bwd = [&](const Eigen::VectorXd& v) {
        Measurement m = shape;
        m.values = v;
        return adjoint(m).data;
    };
    const double value = spectral_norm_power_iter(fwd, bwd, static_cast<Eigen::Index>(height) * width, 500, 1e-12);
    norm_cache_->values.emplace(key, value);
    return value;
}

std::string ForwardOperator::describe() const {
    std::ostringstream os;
    switch (kind_) {
    case OperatorKind::Identity:
        os << "identity";
        break;
    case OperatorKind::BlurStride:
        os << "sr:sigma=" << blur_sigma_ << ",size=" << kernel_.rows() << ",stride=" << stride_;
        break;
    case OperatorKind::MaskedFourier:
        os << "mri:columns=" << mask_.kept() << "/" << mask_.width();
        break;
    }
    return os.str();
}

Measurement simulate_measurements(const ForwardOperator& h, const Image& x_true, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) {
        throw InputError("noise sigma must be non-negative");
    }
    Measurement y = h.apply(x_true);
    y.noise_sigma = sigma;
    if (sigma == 0.0) {
        return y;
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    if (!y.complex) {
        for (auto& v : y.values) {
            v += normal(rng);
        }
        return y;
    }
    for (int r = 0; r < y.height; ++r) {
        for (int c = 0; c < y.width; ++c) {
            if (!h.mask().keep[c]) {
                continue;
            }
            const Eigen::Index k = static_cast<Eigen::Index>(r) * y.width + c;
            y.values[2 * k] += normal(rng);
            y.values[2 * k + 1] += normal(rng);
        }
    }
    return y;
}

} // namespace sps
