#include "sps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace sps {

Image center_crop(const Image& x, CenterCrop crop) {
    if (crop.height < 1 || crop.width < 1 || crop.height > x.height || crop.width > x.width) {
        throw InputError("center crop larger than the image");
    }
    const int y0 = (x.height - crop.height) / 2;
    const int x0 = (x.width - crop.width) / 2;
    Image out(crop.height, crop.width);
    for (int y = 0; y < crop.height; ++y) {
        for (int c = 0; c < crop.width; ++c) {
            out(y, c) = x(y0 + y, x0 + c);
        }
    }
    return out;
}

double psnr(const Image& x, const Image& ref, double peak, std::optional<CenterCrop> crop) {
    require_same_shape(x, ref, "psnr");
    if (!(peak > 0.0)) {
        throw InputError("psnr peak must be positive");
    }
    if (crop) {
        return psnr(center_crop(x, *crop), center_crop(ref, *crop), peak);
    }
    const double mse = (x.data - ref.data).squaredNorm() / static_cast<double>(x.pixels());
    if (mse == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(peak * peak / mse);
}

double psnr_for_table(double value) { return std::min(value, 99.0); }

double ssim(const Image& x, const Image& ref, double peak) {
    require_same_shape(x, ref, "ssim");
    const int win = std::min({11, x.height, x.width});
    const double sigma = 1.5;
    std::vector<double> g(win);
    double gsum = 0.0;
    for (int i = 0; i < win; ++i) {
        const double t = i - (win - 1) / 2.0;
        g[i] = std::exp(-t * t / (2 * sigma * sigma));
        gsum += g[i];
    }
    for (auto& v : g) {
        v /= gsum;
    }
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const int oh = x.height - win + 1;
    const int ow = x.width - win + 1;
    double total = 0.0;
    for (int y = 0; y < oh; ++y) {
        for (int c = 0; c < ow; ++c) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int i = 0; i < win; ++i) {
                for (int j = 0; j < win; ++j) {
                    const double w = g[i] * g[j];
                    const double a = x(y + i, c + j);
                    const double b = ref(y + i, c + j);
                    mx += w * a;
                    my += w * b;
                    sxx += w * a * a;
                    syy += w * b * b;
                    sxy += w * a * b;
                }
            }
            const double vx = sxx - mx * mx;
            const double vy = syy - my * my;
            const double cov = sxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    return total / (static_cast<double>(oh) * ow);
}

} // namespace sps
