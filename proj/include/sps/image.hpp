#pragma once

#include <Eigen/Dense>

#include "sps/error.hpp"

namespace sps {

/// Single-channel real image, row-major storage.
struct Image {
    int height = 0;
    int width = 0;
    Eigen::VectorXd data;

    Image() = default;
    Image(int h, int w, double fill = 0.0);
    Image(int h, int w, Eigen::VectorXd values);

    int pixels() const { return height * width; }
    double& operator()(int y, int x) { return data[static_cast<Eigen::Index>(y) * width + x]; }
    double operator()(int y, int x) const { return data[static_cast<Eigen::Index>(y) * width + x]; }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
    bool all_finite() const { return data.allFinite(); }
};

/// Per-pixel coefficient vectors laid out as a multi-channel image.
/// `data` is pixels x channels so each channel is a contiguous column.
struct CodeField {
    int channels = 0;
    int height = 0;
    int width = 0;
    Eigen::MatrixXd data;

    CodeField() = default;
    CodeField(int c, int h, int w);

    int pixels() const { return height * width; }
    auto channel(int c) { return data.col(c); }
    auto channel(int c) const { return data.col(c); }
    double& at(int c, int y, int x) { return data(static_cast<Eigen::Index>(y) * width + x, c); }
    double at(int c, int y, int x) const { return data(static_cast<Eigen::Index>(y) * width + x, c); }

    bool same_shape(const CodeField& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    bool matches(const Image& img) const { return height == img.height && width == img.width; }
    bool all_finite() const { return data.allFinite(); }
};

void require_same_shape(const Image& a, const Image& b, const char* what);
void require_same_shape(const CodeField& a, const CodeField& b, const char* what);

} // namespace sps
