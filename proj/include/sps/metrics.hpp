#pragma once

#include <optional>

#include "sps/image.hpp"

namespace sps {

struct CenterCrop {
    int height = 0;
    int width = 0;
};

/// 10 log10(peak^2 / MSE); +inf for identical images.
double psnr(const Image& x, const Image& ref, double peak = 1.0, std::optional<CenterCrop> crop = std::nullopt);

/// psnr capped at 99 dB for printing.
double psnr_for_table(double value);

/// Mean SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03. Smaller images use a window that fits.
double ssim(const Image& x, const Image& ref, double peak = 1.0);

Image center_crop(const Image& x, CenterCrop crop);

} // namespace sps
