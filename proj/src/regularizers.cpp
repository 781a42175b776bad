#include "sps/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sps {

const char* to_string(RegularizerKind kind) { return kind == RegularizerKind::CPR ? "cpr" : "ncpr"; }

RegularizerKind regularizer_kind_from_string(const std::string& name) {
    if (name == "cpr" || name == "CPR") {
        return RegularizerKind::CPR;
    }
    if (name == "ncpr" || name == "NCPR") {
        return RegularizerKind::NCPR;
    }
    throw InputError("unknown regularizer '" + name + "' (expected cpr or ncpr)");
}

void validate(const RegularizerParams& p, int channels) {
    if (p.tau.size() != channels) {
        throw InputError("regularizer has " + std::to_string(p.tau.size()) + " weights for " +
                         std::to_string(channels) + " channels");
    }
    if ((p.tau.array() < 0.0).any() || !p.tau.allFinite()) {
        throw InputError("regularizer weights must be finite and non-negative");
    }
    if (!(p.gamma > 0.0)) {
        throw InputError("NCPR exponent must be positive");
    }
    if (p.lambda < 0.0) {
        throw InputError("lambda must be non-negative");
    }
}

void require_even_grid(int height, int width) {
    if (height % 2 != 0 || width % 2 != 0) {
        throw InputError("CPR groups 2x2 blocks and needs even image dimensions, got " + std::to_string(height) +
                         "x" + std::to_string(width));
    }
}

namespace {

template <class Fn>
void for_each_block(const CodeField& a, Fn&& fn) {
    for (int by = 0; by < a.height; by += 2) {
        for (int bx = 0; bx < a.width; bx += 2) {
            const Eigen::Index i0 = static_cast<Eigen::Index>(by) * a.width + bx;
            const Eigen::Index idx[4] = {i0, i0 + 1, i0 + a.width, i0 + a.width + 1};
            fn(idx);
        }
    }
}

} // namespace

double cpr_value(const CodeField& a, const RegularizerParams& p) {
    require_even_grid(a.height, a.width);
    validate(p, a.channels);
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const auto ch = a.channel(c);
        double sum = 0.0;
        for_each_block(a, [&](const Eigen::Index* idx) {
            sum += std::sqrt(ch[idx[0]] * ch[idx[0]] + ch[idx[1]] * ch[idx[1]] + ch[idx[2]] * ch[idx[2]] +
                             ch[idx[3]] * ch[idx[3]]);
        });
        total += p.tau[c] * sum;
    }
    return p.lambda * total;
}

CodeField cpr_prox(const CodeField& a, double step, const RegularizerParams& p) {
    if (!(step > 0.0)) {
        throw InputError("cpr_prox: step must be positive");
    }
    require_even_grid(a.height, a.width);
    validate(p, a.channels);
    CodeField out = a;
    for (int c = 0; c < a.channels; ++c) {
        const double threshold = step * p.lambda * p.tau[c];
        auto ch = out.channel(c);
        for_each_block(a, [&](const Eigen::Index* idx) {
            const double norm = std::sqrt(ch[idx[0]] * ch[idx[0]] + ch[idx[1]] * ch[idx[1]] +
                                          ch[idx[2]] * ch[idx[2]] + ch[idx[3]] * ch[idx[3]]);
            const double scale = norm > threshold ? 1.0 - threshold / norm : 0.0;
            for (int j = 0; j < 4; ++j) {
                ch[idx[j]] *= scale;
            }
        });
    }
    return out;
}

double ncpr_shrink(double x, double tau, double gamma) {
    const double ax = std::pow(std::abs(x), gamma);
    const double denom = std::pow(tau, gamma) + ax;
    return denom > 0.0 ? x * ax / denom : 0.0;
}

double ncpr_shrink_dx(double x, double tau, double gamma) {
    const double ax = std::pow(std::abs(x), gamma);
    const double tg = std::pow(tau, gamma);
    const double denom = tg + ax;
    if (denom <= 0.0) {
        return tau == 0.0 ? 1.0 : 0.0;
    }
    return ax / denom + gamma * ax * tg / (denom * denom);
}

double ncpr_shrink_dtau(double x, double tau, double gamma) {
    const double ax = std::pow(std::abs(x), gamma);
    const double denom = std::pow(tau, gamma) + ax;
    if (denom <= 0.0 || tau <= 0.0) {
        return 0.0;
    }
    return -x * ax * gamma * std::pow(tau, gamma - 1.0) / (denom * denom);
}

CodeField ncpr_prox(const CodeField& a, const RegularizerParams& p) {
    validate(p, a.channels);
    CodeField out = a;
    for (int c = 0; c < a.channels; ++c) {
        const double tau = p.tau[c];
        for (auto& v : out.channel(c)) {
            v = ncpr_shrink(v, tau, p.gamma);
        }
    }
    return out;
}

CodeField regularizer_prox(const CodeField& a, double step, const RegularizerParams& p) {
    return p.kind == RegularizerKind::CPR ? cpr_prox(a, step, p) : ncpr_prox(a, p);
}

ProxVjp regularizer_prox_vjp(const CodeField& u, double step, const RegularizerParams& p, const CodeField& w) {
    require_same_shape(u, w, "regularizer_prox_vjp");
    ProxVjp out{CodeField(u.channels, u.height, u.width), Eigen::VectorXd::Zero(u.channels)};
    if (p.kind == RegularizerKind::NCPR) {
        for (int c = 0; c < u.channels; ++c) {
            const double tau = p.tau[c];
            const auto uc = u.channel(c);
            const auto wc = w.channel(c);
            auto gc = out.input.channel(c);
            double gt = 0.0;
            for (Eigen::Index k = 0; k < uc.size(); ++k) {
                gc[k] = wc[k] * ncpr_shrink_dx(uc[k], tau, p.gamma);
                gt += wc[k] * ncpr_shrink_dtau(uc[k], tau, p.gamma);
            }
            out.tau[c] = gt;
        }
        return out;
    }
    require_even_grid(u.height, u.width);
    for (int c = 0; c < u.channels; ++c) {
        const double threshold = step * p.lambda * p.tau[c];
        const auto uc = u.channel(c);
        const auto wc = w.channel(c);
        auto gc = out.input.channel(c);
        double gt = 0.0;
        for_each_block(u, [&](const Eigen::Index* idx) {
            double norm2 = 0.0;
            double dot = 0.0;
            for (int j = 0; j < 4; ++j) {
                norm2 += uc[idx[j]] * uc[idx[j]];
                dot += uc[idx[j]] * wc[idx[j]];
            }
            const double norm = std::sqrt(norm2);
            if (!(norm > threshold)) {
                return;
            }
            // J = (1 - t/r) I + t/r^3 b b^T, d out / d t = -b / r
            const double shrink = 1.0 - threshold / norm;
            const double outer = threshold / (norm2 * norm);
            for (int j = 0; j < 4; ++j) {
                gc[idx[j]] = shrink * wc[idx[j]] + outer * uc[idx[j]] * dot;
            }
            gt -= dot / norm;
        });
        out.tau[c] = gt * step * p.lambda;
    }
    return out;
}

double SampledPotential::operator()(double uq) const {
    const double a = std::abs(uq);
    if (u.empty()) {
        return 0.0;
    }
    if (a >= u.back()) {
        return value.back() + slope.back() * (a - u.back());
    }
    const auto it = std::upper_bound(u.begin(), u.end(), a);
    const std::size_t i = static_cast<std::size_t>(it - u.begin());
    if (i == 0) {
        return value.front();
    }
    const double span = u[i] - u[i - 1];
    const double t = span > 0.0 ? (a - u[i - 1]) / span : 0.0;
    return value[i - 1] + t * (value[i] - value[i - 1]);
}

SampledPotential ncpr_potential_numeric(double tau, double gamma, std::span<const double> grid) {
    if (grid.empty()) {
        throw InputError("ncpr_potential_numeric: empty grid");
    }
    SampledPotential out;
    out.u.reserve(grid.size());
    out.value.reserve(grid.size());
    out.slope.reserve(grid.size());
    double prev_x = 0.0;
    double prev_phi = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double x = grid[i];
        if (x < 0.0 || (i > 0 && !(x > grid[i - 1]))) {
            throw InputError("ncpr_potential_numeric: grid must be non-negative and strictly increasing");
        }
        const double phi = ncpr_shrink(x, tau, gamma);
        if (i > 0 && phi < prev_phi) {
            throw InputError("ncpr_potential_numeric: shrinkage is not monotone on the grid");
        }
        if (i > 0) {
            acc += 0.5 * ((x - phi) + (prev_x - prev_phi)) * (phi - prev_phi);
        } else if (x > 0.0) {
            // integrate from the origin, where phi(0) = 0
            acc += 0.5 * (x - phi) * phi;
        }
        out.u.push_back(phi);
        out.value.push_back(acc);
        out.slope.push_back(x - phi);
        prev_x = x;
        prev_phi = phi;
    }
    return out;
}

NcprPotential::NcprPotential(double gamma) : gamma_(gamma) {
    // phi_1 saturates to the identity quickly; a geometric tail keeps the table small.
    std::vector<double> grid;
    grid.push_back(0.0);
    const int fine = 4000;
    for (int i = 1; i <= fine; ++i) {
        grid.push_back(8.0 * i / fine);
    }
    double x = 8.0;
    while (x < 1e6) {
        x *= 1.01;
        grid.push_back(x);
    }
    unit_ = ncpr_potential_numeric(1.0, gamma, grid);
}

double NcprPotential::operator()(double u, double tau) const {
    if (tau <= 0.0) {
        return 0.0;
    }
    return tau * tau * unit_(u / tau);
}

} // namespace sps
