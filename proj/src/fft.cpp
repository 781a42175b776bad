#include "sps/fft.hpp"

#include <fftw3.h>

#include <complex>
#include <mutex>

#include "sps/error.hpp"

namespace sps::fft {
namespace {

// fftw's planner is not thread-safe; execution of distinct plans is.
std::mutex planner_mutex;

Eigen::VectorXcd transform(const Eigen::VectorXcd& grid, int height, int width, int sign) {
    if (grid.size() != static_cast<Eigen::Index>(height) * width) {
        throw InputError("fft: grid size does not match dimensions");
    }
    Eigen::VectorXcd in = grid;
    Eigen::VectorXcd out(grid.size());
    auto* pin = reinterpret_cast<fftw_complex*>(in.data());
    auto* pout = reinterpret_cast<fftw_complex*>(out.data());
    fftw_plan plan;
    {
        std::lock_guard lock(planner_mutex);
        plan = fftw_plan_dft_2d(height, width, pin, pout, sign, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard lock(planner_mutex);
        fftw_destroy_plan(plan);
    }
    return out;
}

} // namespace

Eigen::VectorXcd forward2d(const Eigen::VectorXcd& grid, int height, int width) {
    return transform(grid, height, width, FFTW_FORWARD);
}

Eigen::VectorXcd inverse2d(const Eigen::VectorXcd& grid, int height, int width) {
    Eigen::VectorXcd out = transform(grid, height, width, FFTW_BACKWARD);
    out /= static_cast<double>(height) * width;
    return out;
}

Eigen::VectorXcd forward2d(const Eigen::VectorXd& real_grid, int height, int width) {
    return forward2d(Eigen::VectorXcd(real_grid.cast<std::complex<double>>()), height, width);
}

} // namespace sps::fft
