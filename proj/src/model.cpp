#include "sps/model.hpp"

#include <random>

#include "sps/linalg.hpp"

namespace sps {

double ModelParams::beta() const { return softplus(beta_raw); }

void ModelParams::set_beta(double beta) {
    if (!(beta > 0.0)) {
        throw InputError("beta must be positive");
    }
    beta_raw = softplus_inverse(beta);
}

Eigen::VectorXd ModelParams::tau() const {
    return tau_multiplier * tau_raw.unaryExpr([](double v) { return softplus(v); });
}

void ModelParams::set_tau(const Eigen::VectorXd& tau) {
    if ((tau.array() <= 0.0).any()) {
        throw InputError("tau must be positive to be stored through softplus");
    }
    tau_multiplier = 1.0;
    tau_raw = tau.unaryExpr([](double v) { return softplus_inverse(v); });
}

RegularizerParams ModelParams::regularizer() const {
    RegularizerParams r;
    r.kind = kind;
    r.tau = tau();
    r.gamma = gamma;
    r.lambda = lambda;
    return r;
}

ReconstructionModel ModelParams::model() const { return ReconstructionModel{dict, regularizer(), beta()}; }

void ModelParams::reparameterize() { dict = parameterize_dictionaries(raw, &tape); }

ModelParams initialize_model(const ModelInit& init) {
    if (init.side < 1 || init.side % 2 == 0 || init.p1 < 1 || init.p2 < 1 || init.p2 > init.side * init.side) {
        throw InputError("invalid model dimensions");
    }
    std::mt19937_64 rng(init.seed);
    std::normal_distribution<double> normal;
    const int d = init.side * init.side;
    ModelParams p;
    p.kind = init.kind;
    p.gamma = init.gamma;
    p.raw.side = init.side;
    p.raw.d.resize(d, init.p1);
    p.raw.q.resize(d, init.p2 - 1);
    for (Eigen::Index i = 0; i < p.raw.d.size(); ++i) {
        p.raw.d.data()[i] = normal(rng);
    }
    for (Eigen::Index i = 0; i < p.raw.q.size(); ++i) {
        p.raw.q.data()[i] = normal(rng);
    }
    p.set_tau(Eigen::VectorXd::Constant(init.p1, init.tau));
    p.set_beta(init.beta);
    p.reparameterize();
    return p;
}

} // namespace sps
