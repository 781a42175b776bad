#pragma once

#include <Eigen/Dense>

namespace sps::fft {

// Row-major h x w complex grids. Forward transform is unnormalized, the
// inverse carries the 1/(h*w) factor.
Eigen::VectorXcd forward2d(const Eigen::VectorXcd& grid, int height, int width);
Eigen::VectorXcd inverse2d(const Eigen::VectorXcd& grid, int height, int width);

Eigen::VectorXcd forward2d(const Eigen::VectorXd& real_grid, int height, int width);

} // namespace sps::fft
