#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "sps/model_io.hpp"
#include "sps/trainer.hpp"

using namespace sps;
using namespace testing_support;

namespace {

CropDataset tiny_dataset(int count = 6) {
    std::vector<Image> imgs;
    for (int i = 0; i < count; ++i) {
        imgs.push_back(procedural_image(24, 24, 100 + i));
    }
    return CropDataset(std::move(imgs));
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.batch_size = 3;
    c.epochs = 1;
    c.batches_per_epoch = 6;
    c.crop_height = 8;
    c.crop_width = 8;
    c.lr_dict = 5e-3;
    c.lr_reg = 2e-2;
    c.seed = 11;
    c.backward.iters = 60;
    return c;
}

SolverConfig tiny_solver() {
    SolverConfig s;
    s.tol = 1e-5;
    s.max_iters = 5000;
    return s;
}

ModelParams tiny_model() {
    ModelInit init;
    init.side = 3;
    init.p1 = 4;
    init.p2 = 2;
    init.tau = 0.03;
    init.beta = 2.0;
    init.seed = 3;
    return initialize_model(init);
}

} // namespace

TEST_CASE("L1 loss") {
    const Image a = random_image(5, 7, 1);
    CHECK(loss_l1(a, a) == 0.0);
    Image b = a;
    b.data.array() += 0.25;
    CHECK(loss_l1(b, a) == doctest::Approx(35 * 0.25).epsilon(1e-12));

    const Image c = random_image(5, 7, 2);
    double oracle = 0.0;
    for (Eigen::Index i = 0; i < a.data.size(); ++i) {
        oracle += std::abs(a.data(i) - c.data(i));
    }
    CHECK(std::abs(loss_l1(a, c) - oracle) <= 1e-12);
    CHECK(std::abs(loss_l1(std::vector<Image>{a, a}, std::vector<Image>{c, a}) - oracle / 2.0) <= 1e-12);
}

TEST_CASE("ADAM") {
    Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(4, -1.0, 1.0);
    const Eigen::VectorXd lr = Eigen::VectorXd::Constant(4, 1e-2);
    AdamMoments m;
    const Eigen::VectorXd p0 = p;
    for (int i = 0; i < 5; ++i) {
        adam_step(p, Eigen::VectorXd::Zero(4), m, lr);
    }
    CHECK(p == p0);

    // constant gradient: every step moves by lr * sign(g)
    AdamMoments mc;
    Eigen::VectorXd q = Eigen::VectorXd::Zero(2);
    const Eigen::VectorXd g = (Eigen::VectorXd(2) << 3.0, -0.2).finished();
    Eigen::VectorXd before;
    for (int i = 0; i < 200; ++i) {
        before = q;
        adam_step(q, g, mc, lr.head(2));
    }
    CHECK(std::abs((q - before)(0) + 1e-2) <= 1e-9);
    CHECK(std::abs((q - before)(1) - 1e-2) <= 1e-9);

    // scalar transcription
    double x = 0.7, mm = 0.0, vv = 0.0;
    Eigen::VectorXd px = Eigen::VectorXd::Constant(1, 0.7);
    AdamMoments ms;
    for (int t = 1; t <= 10; ++t) {
        const double grad = std::sin(3.0 * t) + x;
        mm = 0.9 * mm + 0.1 * grad;
        vv = 0.999 * vv + 0.001 * grad * grad;
        const double mhat = mm / (1.0 - std::pow(0.9, t));
        const double vhat = vv / (1.0 - std::pow(0.999, t));
        x -= 0.05 * mhat / (std::sqrt(vhat) + 1e-8);
        adam_step(px, Eigen::VectorXd::Constant(1, std::sin(3.0 * t) + px(0)), ms, Eigen::VectorXd::Constant(1, 0.05));
    }
    CHECK(std::abs(px(0) - x) <= 1e-14);
}

TEST_CASE("packing round trip and learning-rate groups") {
    ModelParams p = tiny_model();
    const Eigen::VectorXd flat = pack_trainable(p);
    CHECK(flat.size() == p.raw.d.size() + p.raw.q.size() + p.tau_raw.size() + 1);
    ModelParams q = tiny_model();
    q.raw.d.setZero();
    unpack_trainable(flat, q);
    CHECK((q.dict.d.taps - p.dict.d.taps).norm() == 0.0);
    const Eigen::VectorXd lr = learning_rates(p, 1.0, 2.0);
    CHECK(lr.head(p.raw.d.size() + p.raw.q.size()).isConstant(1.0));
    CHECK(lr.tail(p.tau_raw.size() + 1).isConstant(2.0));
}

TEST_CASE("learning-rate decay schedule") {
    TrainConfig c;
    c.batches_per_epoch = 100;
    c.decay_points_per_epoch = 10;
    c.decay_factor = 0.5;
    CHECK(lr_decay_multiplier(c, 0) == 1.0);
    CHECK(lr_decay_multiplier(c, 9) == 1.0);
    CHECK(lr_decay_multiplier(c, 10) == 0.5);
    CHECK(lr_decay_multiplier(c, 99) == doctest::Approx(std::pow(0.5, 9)));
    CHECK(lr_decay_multiplier(c, 100) == doctest::Approx(std::pow(0.5, 10)));
    CHECK(lr_decay_multiplier(c, 199) == doctest::Approx(std::pow(0.5, 19)));
}

TEST_CASE("a tau channel that never activates gets zero gradient") {
    GradCheckSetup s;
    ModelParams p = gradcheck_model(s);
    Eigen::VectorXd tau = p.tau();
    tau(2) = 50.0;
    p.set_tau(tau);
    const Image truth = procedural_image(8, 8, 8);
    const auto identity = ForwardOperator::identity();
    const InnerProblem prob(p.model(), identity, simulate_measurements(identity, truth, 0.08, 9));
    SolverConfig cfg;
    cfg.tol = 1e-12;
    cfg.max_iters = 100000;
    const SolveResult r = solve_inner(prob, cfg);
    REQUIRE(r.state.converged);
    BackwardConfig bc;
    bc.iters = 200;
    bc.tol = 1e-10;
    const auto g = backward_implicit(r.state, p, prob, loss_l1_gradient(r.state.x, truth), bc);
    CHECK(std::abs(g.grads.tau_raw(2)) <= 1e-8);
    CHECK(g.grads.tau_raw.norm() > 1e-6);
}

TEST_CASE("training: lr 0 leaves params bitwise unchanged") {
    TrainConfig c = tiny_config();
    c.lr_dict = 0.0;
    c.lr_reg = 0.0;
    const ModelParams p0 = tiny_model();
    const TrainState out = train(tiny_dataset(), initial_train_state(p0), c, tiny_solver());
    CHECK(out.next_batch == 6);
    CHECK(pack_trainable(out.params) == pack_trainable(p0));
    CHECK(out.params.dict.d.taps == p0.dict.d.taps);
}

TEST_CASE("training: feasibility, determinism and resume") {
    const TrainConfig c = tiny_config();
    const CropDataset data = tiny_dataset();
    int infeasible = 0;
    const TrainState a = train(data, initial_train_state(tiny_model()), c, tiny_solver());
    const TrainState b = train(data, initial_train_state(tiny_model()), c, tiny_solver());
    REQUIRE(a.history.size() == 6);
    REQUIRE(b.history.size() == 6);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].loss == b.history[i].loss);
        CHECK(std::isfinite(a.history[i].loss));
    }
    CHECK(pack_trainable(a.params) == pack_trainable(b.params));

    // step one batch at a time and check the constraint set after each update
    TrainConfig one = c;
    one.stop_after = 1;
    TrainState s = initial_train_state(tiny_model());
    while (s.next_batch < 6) {
        s = train(data, std::move(s), one, tiny_solver());
        const auto rep = validate_feasible_set(s.params.dict, 1e-5);
        infeasible += !rep.passed;
    }
    CHECK(infeasible == 0);
    CHECK(pack_trainable(s.params) == pack_trainable(a.params));

    // checkpoint after 3 batches, reload, finish
    TrainConfig first = c;
    first.stop_after = 3;
    const TrainState half = train(data, initial_train_state(tiny_model()), first, tiny_solver());
    const auto path = std::filesystem::temp_directory_path() / "sps_test_ckpt.json";
    save_checkpoint(path.string(), half, c);
    TrainConfig loaded_cfg;
    TrainState resumed = load_checkpoint(path.string(), &loaded_cfg);
    std::filesystem::remove(path);
    CHECK(loaded_cfg.seed == c.seed);
    CHECK(resumed.next_batch == 3);
    resumed = train(data, std::move(resumed), loaded_cfg, tiny_solver());
    REQUIRE(resumed.history.size() == a.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(std::abs(resumed.history[i].loss - a.history[i].loss) <= 1e-10);
    }
    CHECK((pack_trainable(resumed.params) - pack_trainable(a.params)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("training rejects bad input") {
    TrainConfig c = tiny_config();
    CHECK_THROWS_AS(train(CropDataset{}, initial_train_state(tiny_model()), c, tiny_solver()), InputError);
    c.crop_width = 9;
    CHECK_THROWS_AS(train(tiny_dataset(), initial_train_state(tiny_model()), c, tiny_solver()), InputError);
    c = tiny_config();
    c.crop_height = 64;
    CHECK_THROWS_AS(train(tiny_dataset(), initial_train_state(tiny_model()), c, tiny_solver()), InputError);
}

TEST_CASE("training aborts when most solves fail") {
    TrainConfig c = tiny_config();
    c.batches_per_epoch = 12;
    SolverConfig s = tiny_solver();
    s.max_iters = 1;
    CHECK_THROWS_AS(train(tiny_dataset(), initial_train_state(tiny_model()), c, s), TrainingAborted);
}
