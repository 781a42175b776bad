#include "sps/image.hpp"

#include <string>

namespace sps {

Image::Image(int h, int w, double fill) : height(h), width(w) {
    if (h < 1 || w < 1) {
        throw InputError("image dimensions must be positive");
    }
    data = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(h) * w, fill);
}

Image::Image(int h, int w, Eigen::VectorXd values) : height(h), width(w), data(std::move(values)) {
    if (h < 1 || w < 1 || data.size() != static_cast<Eigen::Index>(h) * w) {
        throw InputError("image data does not match dimensions");
    }
}

CodeField::CodeField(int c, int h, int w) : channels(c), height(h), width(w) {
    if (c < 0 || h < 1 || w < 1) {
        throw InputError("code field dimensions must be positive");
    }
    data = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(h) * w, c);
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InputError(std::string(what) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width) + ")");
    }
}

void require_same_shape(const CodeField& a, const CodeField& b, const char* what) {
    if (!a.same_shape(b)) {
        throw InputError(std::string(what) + ": code field shapes differ");
    }
}

} // namespace sps
