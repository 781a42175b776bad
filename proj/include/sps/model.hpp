#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "sps/dictionary.hpp"
#include "sps/regularizers.hpp"

namespace sps {

/// Everything the inner solver needs: feasible dictionaries, regularizer, and the
/// patch weight beta.
struct ReconstructionModel {
    DictionaryPair dict;
    RegularizerParams reg;
    double beta = 1.0;
};

/// Trainable parameterization. tau and beta are softplus images of their raw
/// values; `dict` and `tape` are always parameterize_dictionaries(raw).
struct ModelParams {
    RawDictionaries raw;
    DictionaryPair dict;
    ParameterizationTape tape;
    RegularizerKind kind = RegularizerKind::CPR;
    Eigen::VectorXd tau_raw;
    double tau_multiplier = 1.0; // deployment-time scaling of all tau
    double beta_raw = 0.0;
    double lambda = 1.0;
    double gamma = 2.0;

    int patch_side() const { return raw.side; }
    int p1() const { return static_cast<int>(raw.d.cols()); }
    int p2() const { return static_cast<int>(raw.q.cols()) + 1; }

    double beta() const;
    void set_beta(double beta);
    Eigen::VectorXd tau() const;
    void set_tau(const Eigen::VectorXd& tau);
    RegularizerParams regularizer() const;
    ReconstructionModel model() const;

    /// Recompute dict/tape from raw.
    void reparameterize();
};

struct ModelInit {
    int side = 3;
    int p1 = 8;
    int p2 = 3;
    RegularizerKind kind = RegularizerKind::CPR;
    double gamma = 2.0;
    double tau = 0.05;
    double beta = 1.0;
    std::uint64_t seed = 0;
};

/// Gaussian raw dictionaries and constant tau/beta.
ModelParams initialize_model(const ModelInit& init);

} // namespace sps
