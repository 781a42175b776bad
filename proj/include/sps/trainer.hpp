#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sps/fixed_point.hpp"
#include "sps/model.hpp"
#include "sps/solver.hpp"

namespace sps {

/// sum_pixels |x_star - x_true|
double loss_l1(const Image& x_star, const Image& x_true);

/// Mean of per-image L1 losses.
double loss_l1(const std::vector<Image>& x_star, const std::vector<Image>& x_true);

/// Gradients w.r.t. the raw trainable parameters.
struct Gradients {
    Eigen::MatrixXd d_raw;
    Eigen::MatrixXd q_raw;
    Eigen::VectorXd tau_raw;
    double beta_raw = 0.0;

    static Gradients zeros_like(const ModelParams& p);
    Gradients& operator+=(const Gradients& o);
    Gradients& operator*=(double s);
    bool all_finite() const;
};

enum class BackwardSolver { Anderson, Broyden };

const char* to_string(BackwardSolver s);
BackwardSolver backward_solver_from_string(const std::string& name);

struct BackwardConfig {
    BackwardSolver solver = BackwardSolver::Broyden;
    int iters = 50;
    int memory = 5; // Anderson mixing depth
    double tol = 1e-6; // relative to ||dL/dx||
};

struct BackwardResult {
    Gradients grads;
    double adjoint_residual = 0.0;
    int iters = 0;
    bool low_confidence = false;
};

/// Implicit differentiation at a fixed point of fixed_point_map: solve
/// v = (dT/dz)^T v + dL/dz, then pull v back through dT/dtheta and the
/// dictionary parameterization.
BackwardResult backward_implicit(const SolverState& state, const ModelParams& params, const InnerProblem& problem,
                                 const Image& dloss_dx, const BackwardConfig& cfg);

/// dL/dx of sum |x - x_true| (sign, 0 at ties), scaled by `weight`.
Image loss_l1_gradient(const Image& x_star, const Image& x_true, double weight = 1.0);

struct AdamMoments {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Bias-corrected ADAM update with a per-entry learning rate.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamMoments& moments, const Eigen::VectorXd& lr);

/// Flat layout [D_raw, Q_raw, tau_raw, beta_raw], column-major.
Eigen::VectorXd pack_trainable(const ModelParams& p);
void unpack_trainable(const Eigen::VectorXd& flat, ModelParams& p);
Eigen::VectorXd pack_gradients(const Gradients& g);
/// lr_dict on dictionary entries, lr_reg on tau and beta.
Eigen::VectorXd learning_rates(const ModelParams& p, double lr_dict, double lr_reg);

/// Grayscale images from which fixed-size training crops are drawn.
class CropDataset {
public:
    CropDataset() = default;
    explicit CropDataset(std::vector<Image> images);
    static CropDataset from_directory(const std::string& path);

    std::size_t size() const { return images_.size(); }
    const std::vector<Image>& images() const { return images_; }

    template <class Rng>
    Image sample(Rng& rng, int height, int width) const;

private:
    std::vector<Image> images_;
};

struct TrainConfig {
    int batch_size = 16;
    double lr_dict = 2e-4;
    double lr_reg = 1e-3;
    int epochs = 2;
    int batches_per_epoch = 238400 / 16;
    int decay_points_per_epoch = 10;
    double decay_factor = 0.75;
    BackwardConfig backward;
    std::uint64_t seed = 0;
    double noise_sigma = 25.0 / 255.0;
    int crop_height = 40;
    int crop_width = 40;
    int checkpoint_every = 0; // batches; 0 disables
    double max_skip_fraction = 0.1;
    /// Stop after this many batches in this call (< 0: run to the end).
    long stop_after = -1;
};

struct HistoryEntry {
    long batch = 0;
    double loss = 0.0;
    double lr_dict = 0.0;
    double lr_reg = 0.0;
    double beta = 0.0;
    int used = 0;
    long skipped_total = 0;
};

struct TrainState {
    ModelParams params;
    AdamMoments moments;
    long next_batch = 0;
    long skipped = 0;
    long processed = 0;
    std::vector<HistoryEntry> history;
};

TrainState initial_train_state(ModelParams params);

/// Learning-rate multiplier after `batch` batches: decay_factor^(decay points passed).
double lr_decay_multiplier(const TrainConfig& cfg, long batch);

struct TrainCallbacks {
    std::function<void(const HistoryEntry&)> on_batch;
    std::function<void(const TrainState&)> on_checkpoint;
};

class TrainingAborted : public Error {
public:
    using Error::Error;
};

/// Runs batches [state.next_batch, epochs * batches_per_epoch) on the denoising task.
TrainState train(const CropDataset& data, TrainState state, const TrainConfig& tcfg, const SolverConfig& scfg,
                 const TrainCallbacks& callbacks = {});

/// Seeded generator for one batch; depends only on (seed, batch).
std::uint64_t batch_seed(std::uint64_t seed, long batch, std::uint64_t stream = 0);

template <class Rng>
Image CropDataset::sample(Rng& rng, int height, int width) const {
    if (images_.empty()) {
        throw InputError("crop dataset is empty");
    }
    std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
    const Image& img = images_[pick(rng)];
    if (img.height < height || img.width < width) {
        throw InputError("image smaller than the requested crop");
    }
    std::uniform_int_distribution<int> oy(0, img.height - height);
    std::uniform_int_distribution<int> ox(0, img.width - width);
    const int y0 = oy(rng);
    const int x0 = ox(rng);
    Image crop(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            crop(y, x) = img(y0 + y, x0 + x);
        }
    }
    return crop;
}

} // namespace sps
