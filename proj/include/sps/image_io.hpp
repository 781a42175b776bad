#pragma once

#include <string>
#include <vector>

#include "sps/image.hpp"

namespace sps {

/// PNG (8/16-bit, gray or color) and PGM (P2/P5) are read; colors become luminance.
/// ".spsf" files are the lossless float container.
bool is_supported_image(const std::string& path);
Image load_image(const std::string& path);

/// 8-bit grayscale PNG, values clamped to [0, 1].
void save_png(const std::string& path, const Image& img);

/// Raw float container: "SPSF", version, channels, height, width, then doubles.
void save_float_container(const std::string& path, const std::vector<Image>& channels);
std::vector<Image> load_float_container(const std::string& path);

/// Writes PNG or the float container depending on the extension.
void save_image(const std::string& path, const Image& img);

} // namespace sps
