#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sps/image.hpp"

namespace sps {

enum class RegularizerKind { CPR, NCPR };

const char* to_string(RegularizerKind kind);
RegularizerKind regularizer_kind_from_string(const std::string& name);

struct RegularizerParams {
    RegularizerKind kind = RegularizerKind::CPR;
    Eigen::VectorXd tau;  // one non-negative weight per code channel
    double gamma = 2.0;   // NCPR exponent
    double lambda = 1.0;  // global multiplier (CPR)
};

void validate(const RegularizerParams& p, int channels);

/// CPR groups are non-overlapping 2x2 spatial blocks within each channel.
void require_even_grid(int height, int width);

/// lambda * sum_blocks sum_p tau_p ||block_p||_2
double cpr_value(const CodeField& a, const RegularizerParams& p);

/// Block soft-thresholding with threshold step * lambda * tau_p.
CodeField cpr_prox(const CodeField& a, double step, const RegularizerParams& p);

/// phi(x) = x |x|^gamma / (tau^gamma + |x|^gamma)
double ncpr_shrink(double x, double tau, double gamma);
double ncpr_shrink_dx(double x, double tau, double gamma);
double ncpr_shrink_dtau(double x, double tau, double gamma);

CodeField ncpr_prox(const CodeField& a, const RegularizerParams& p);

/// Prox of step * lambda * R for CPR; phi for NCPR, whose weights already
/// absorb the step and lambda.
CodeField regularizer_prox(const CodeField& a, double step, const RegularizerParams& p);

/// Vector-Jacobian product of regularizer_prox at input u: given w = dL/d(prox(u)),
/// returns dL/du and dL/dtau. Zero blocks use the zero subgradient.
struct ProxVjp {
    CodeField input;
    Eigen::VectorXd tau;
};
ProxVjp regularizer_prox_vjp(const CodeField& u, double step, const RegularizerParams& p, const CodeField& w);

/// Samples (u_i, R(u_i)) of a potential R with prox_R = phi, on u >= 0. R is even.
struct SampledPotential {
    std::vector<double> u;
    std::vector<double> value;
    std::vector<double> slope; // x_i - phi(x_i) = R'(u_i)

    double operator()(double u) const;
};

/// Recover R from phi through R(phi(x)) = int_0^x (t - phi(t)) phi'(t) dt with R(0) = 0,
/// trapezoidal rule over the (sorted, non-negative) grid of x values.
SampledPotential ncpr_potential_numeric(double tau, double gamma, std::span<const double> grid);

/// Potential for arbitrary tau via the scaling R_tau(u) = tau^2 R_1(u / tau).
class NcprPotential {
public:
    explicit NcprPotential(double gamma);
    double operator()(double u, double tau) const;
    double gamma() const { return gamma_; }

private:
    double gamma_;
    SampledPotential unit_;
};

} // namespace sps
