#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "sps/image_io.hpp"
#include "sps/metrics.hpp"
#include "sps/model_io.hpp"
#include "sps/trainer.hpp"
#include "support.hpp"

using namespace sps;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / ("sps_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(root / "data");
        for (int i = 0; i < 4; ++i) {
            save_png((root / "data" / ("img" + std::to_string(i) + ".png")).string(), procedural_image(24, 24, 70 + i));
        }
    }
    ~Workspace() { fs::remove_all(root); }
    std::string operator/(const std::string& name) const { return (root / name).string(); }
};

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run sps_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = cli::run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> tiny_train(const Workspace& ws, const std::string& out) {
    return {"train", "--profile", "desk", "--data", ws / "data", "--out", ws / out, "--batches-per-epoch", "6",
            "--batch-size", "3", "--checkpoint-every", "2", "--seed", "5"};
}

} // namespace

TEST_CASE("operator specs") {
    const auto sr = cli::parse_operator_spec("sr");
    CHECK(sr.kind == OperatorKind::BlurStride);
    CHECK(sr.sigma == 2.0);
    CHECK(sr.size == 16);
    CHECK(sr.stride == 4);
    const auto sr2 = cli::parse_operator_spec("sr:sigma=1.5,stride=2");
    CHECK(sr2.sigma == 1.5);
    CHECK(sr2.stride == 2);
    for (int acc : {8, 16}) {
        const auto m = cli::parse_operator_spec("mri:acc=" + std::to_string(acc) + ",seed=3");
        CHECK(m.acc == acc);
        CHECK(cli::build_operator(m, 64, 64).mask().kept() >= 64 / acc);
        CHECK(cli::parse_operator_spec(cli::format_operator_spec(m)).acc == acc);
    }
    CHECK(cli::parse_operator_spec("identity").kind == OperatorKind::Identity);
    CHECK_THROWS_AS(cli::parse_operator_spec("blur"), cli::ConfigError);
    CHECK_THROWS_AS(cli::parse_operator_spec("sr:sigma=x"), cli::ConfigError);
    CHECK_THROWS_AS(cli::parse_operator_spec("mri:speed=2"), cli::ConfigError);
    CHECK_THROWS_AS(cli::profile_tokens("nope"), cli::ConfigError);
    CHECK(cli::profile_tokens("paper-denoise-5").at(1) == "0.0196078431372549");
}

TEST_CASE("train emits a loadable model, a history and a snapshot") {
    Workspace ws;
    const Run r = sps_run(tiny_train(ws, "run"));
    INFO(r.err);
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.find("mean loss") != std::string::npos);
    const ModelParams m = load_model(ws / "run/model.json");
    CHECK(m.p1() == 8);
    CHECK(m.kind == RegularizerKind::NCPR);
    CHECK(fs::exists(ws / "run/config.json"));
    CHECK(fs::exists(ws / "run/checkpoint.json"));
    const std::string csv = slurp(ws / "run/history.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

    // rerunning from the snapshot reproduces the history
    const Run again = sps_run({"train", "--config", ws / "run/config.json", "--out", ws / "run2"});
    REQUIRE(again.code == cli::kExitOk);
    CHECK(slurp(ws / "run2/history.csv") == csv);

    // interrupted and resumed
    auto first = tiny_train(ws, "run3");
    first.insert(first.end(), {"--stop-after", "3"});
    REQUIRE(sps_run(first).code == cli::kExitOk);
    auto rest = tiny_train(ws, "run3");
    rest.push_back("--resume");
    const Run resumed = sps_run(rest);
    REQUIRE(resumed.code == cli::kExitOk);
    CHECK(resumed.out.find("resuming at batch 3") != std::string::npos);
    CHECK(slurp(ws / "run3/history.csv") == csv);
}

TEST_CASE("train with zero learning rates keeps the initial model") {
    Workspace ws;
    auto args = tiny_train(ws, "run");
    args.insert(args.end(), {"--lr-dict", "0", "--lr-reg", "0"});
    REQUIRE(sps_run(args).code == cli::kExitOk);
    ModelInit init;
    init.side = 3;
    init.p1 = 8;
    init.p2 = 3;
    init.kind = RegularizerKind::NCPR;
    init.tau = 0.05;
    init.beta = 1.0;
    init.seed = 5;
    const ModelParams ref = initialize_model(init);
    const ModelParams got = load_model(ws / "run/model.json");
    CHECK(pack_trainable(got) == pack_trainable(ref));
}

TEST_CASE("reconstruct a noiseless flat image") {
    Workspace ws;
    REQUIRE(sps_run(tiny_train(ws, "run")).code == cli::kExitOk);
    save_float_container(ws / "flat.spsf", {Image(16, 16, 0.6)});
    const Run r = sps_run({"reconstruct", "--model", ws / "run/model.json", "--truth", ws / "flat.spsf", "--out",
                           ws / "flat_rec.spsf"});
    INFO(r.err);
    REQUIRE(r.code == cli::kExitOk);
    CHECK(psnr(load_image(ws / "flat_rec.spsf"), Image(16, 16, 0.6)) >= 60.0);
    const auto side = read_json(ws / "flat_rec.spsf.json");
    CHECK(side["converged"].get<bool>());
    CHECK(side["config"]["command"] == "reconstruct");

    // simulated MRI data saved, then reconstructed from the file alone
    const std::string img = ws / "data/img0.png";
    REQUIRE(sps_run({"reconstruct", "--model", ws / "run/model.json", "--truth", img, "--operator", "mri:acc=4",
                     "--noise", "0.01", "--save-measurement", ws / "y.spsf", "--out", ws / "a.spsf"})
                .code == cli::kExitOk);
    REQUIRE(sps_run({"reconstruct", "--model", ws / "run/model.json", "--measurement", ws / "y.spsf", "--operator",
                     "mri:acc=4", "--out", ws / "b.spsf"})
                .code == cli::kExitOk);
    CHECK(load_image(ws / "a.spsf").data == load_image(ws / "b.spsf").data);

    // replay from the sidecar
    REQUIRE(sps_run({"reconstruct", "--config", ws / "a.spsf.json", "--out", ws / "c.spsf"}).code == cli::kExitOk);
    CHECK(load_image(ws / "a.spsf").data == load_image(ws / "c.spsf").data);
}

TEST_CASE("decompose writes images, atoms and a sidecar") {
    Workspace ws;
    REQUIRE(sps_run(tiny_train(ws, "run")).code == cli::kExitOk);
    const Run r = sps_run({"decompose", "--model", ws / "run/model.json", "--truth", ws / "data/img1.png", "--noise",
                           "0.05", "--out", ws / "dec"});
    INFO(r.err);
    REQUIRE(r.code == cli::kExitOk);
    for (const char* f : {"x_star.spsf", "x_smooth.spsf", "x_sparse.spsf", "cost_map.spsf", "atoms_d.png",
                          "atoms_q.png", "decomposition.json"}) {
        CHECK(fs::exists(ws / (std::string("dec/") + f)));
    }
    const Image xs = load_image(ws / "dec/x_star.spsf");
    Image sum = load_image(ws / "dec/x_smooth.spsf");
    sum.data += load_image(ws / "dec/x_sparse.spsf").data;
    CHECK((sum.data - xs.data).norm() / xs.data.norm() <= 1e-5);
    // 8 atoms of side 3 -> 3 x 3 tiles of 4 pixels plus a border
    const Image sheet = load_image(ws / "dec/atoms_d.png");
    CHECK(sheet.height == 3 * 4 + 1);
    CHECK(sheet.width == 3 * 4 + 1);
}

TEST_CASE("gridsearch, metrics and inspect-model") {
    Workspace ws;
    REQUIRE(sps_run(tiny_train(ws, "run")).code == cli::kExitOk);
    const Run g = sps_run({"gridsearch", "--model", ws / "run/model.json", "--val", ws / "data", "--points", "3",
                           "--out", ws / "gs"});
    INFO(g.err);
    REQUIRE(g.code == cli::kExitOk);
    const auto best = read_json(ws / "gs/best.json");
    CHECK(best.contains("tau_scale"));
    CHECK(load_model(ws / "gs/model.json").tau_multiplier == best["tau_scale"].get<double>());

    fs::create_directories(ws / "empty");
    CHECK(sps_run({"gridsearch", "--model", ws / "run/model.json", "--val", ws / "empty", "--out", ws / "gs2"}).code ==
          cli::kExitData);

    const Run m = sps_run({"metrics", "--image", ws / "data/img0.png", "--ref", ws / "data/img0.png"});
    REQUIRE(m.code == cli::kExitOk);
    CHECK(m.out.find("\"psnr\": 99.0") != std::string::npos);

    const Run i = sps_run({"inspect-model", "--model", ws / "run/model.json"});
    REQUIRE(i.code == cli::kExitOk);
    CHECK(i.out.find("\"passed\": true") != std::string::npos);
}

TEST_CASE("exit codes") {
    Workspace ws;
    CHECK(sps_run({}).code == cli::kExitConfig);
    CHECK(sps_run({"frobnicate"}).code == cli::kExitConfig);
    CHECK(sps_run({"train", "--bogus-flag", "1"}).code == cli::kExitConfig);
    CHECK(sps_run({"train", "--profile", "nope", "--data", ws / "data", "--out", ws / "x"}).code == cli::kExitConfig);
    CHECK(sps_run({"train", "--data", ws / "missing", "--out", ws / "x"}).code == cli::kExitData);
    CHECK(sps_run({"metrics", "--image", ws / "nope.png", "--ref", ws / "data/img0.png"}).code == cli::kExitData);
    CHECK(sps_run({"reconstruct", "--model", ws / "nope.json", "--truth", ws / "data/img0.png", "--out",
                   ws / "x.png"})
              .code == cli::kExitData);
    CHECK(sps_run({"train", "--config", ws / "missing.json"}).code == cli::kExitConfig);
    CHECK(sps_run({"--help"}).code == cli::kExitOk);

    auto abort = tiny_train(ws, "run");
    abort.insert(abort.end(), {"--max-iters", "1", "--batches-per-epoch", "12"});
    const Run a = sps_run(abort);
    CHECK(a.code == cli::kExitAbort);
    CHECK(a.err.find("aborted") != std::string::npos);
}
