#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "sps/analysis.hpp"
#include "sps/dictionary.hpp"
#include "sps/gridsearch.hpp"
#include "sps/image_io.hpp"
#include "sps/metrics.hpp"
#include "sps/model_io.hpp"
#include "sps/parallel.hpp"
#include "sps/solver.hpp"
#include "sps/trainer.hpp"

namespace sps::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double parse_number(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception&) {
        throw ConfigError("operator option '" + key + "' needs a number, got '" + v + "'");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    const double d = parse_number(key, v);
    if (d != std::floor(d)) {
        throw ConfigError("operator option '" + key + "' needs an integer, got '" + v + "'");
    }
    return static_cast<int>(d);
}

std::pair<int, int> parse_size(const std::string& text) {
    const auto x = text.find('x');
    try {
        if (x == std::string::npos) {
            const int s = std::stoi(text);
            return {s, s};
        }
        return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError("expected a size like 64x64, got '" + text + "'");
    }
}

std::pair<double, double> parse_range(const std::string& text) {
    const auto c = text.find(':');
    if (c == std::string::npos) {
        throw ConfigError("expected a range lo:hi, got '" + text + "'");
    }
    return {parse_number("range", text.substr(0, c)), parse_number("range", text.substr(c + 1))};
}

} // namespace

OperatorSpec parse_operator_spec(const std::string& text) {
    OperatorSpec spec;
    const auto colon = text.find(':');
    const std::string name = text.substr(0, colon);
    std::map<std::string, std::string> kv;
    if (colon != std::string::npos) {
        std::stringstream ss(text.substr(colon + 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto eq = item.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw ConfigError("operator option '" + item + "' is not key=value");
            }
            kv[item.substr(0, eq)] = item.substr(eq + 1);
        }
    }
    auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) {
            return std::nullopt;
        }
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    if (name == "identity") {
        spec.kind = OperatorKind::Identity;
    } else if (name == "sr") {
        spec.kind = OperatorKind::BlurStride;
        if (auto v = take("sigma")) spec.sigma = parse_number("sigma", *v);
        if (auto v = take("size")) spec.size = parse_int("size", *v);
        if (auto v = take("stride")) spec.stride = parse_int("stride", *v);
        if (!(spec.sigma > 0.0) || spec.size < 1 || spec.stride < 1) {
            throw ConfigError("sr operator needs sigma > 0, size >= 1, stride >= 1");
        }
    } else if (name == "mri") {
        spec.kind = OperatorKind::MaskedFourier;
        if (auto v = take("acc")) spec.acc = parse_int("acc", *v);
        if (auto v = take("seed")) spec.seed = static_cast<std::uint64_t>(parse_int("seed", *v));
        if (auto v = take("center")) spec.center = parse_number("center", *v);
        if (spec.acc < 1 || spec.center > 1.0) {
            throw ConfigError("mri operator needs acc >= 1 and center <= 1");
        }
    } else {
        throw ConfigError("unknown operator '" + name + "' (use identity, sr or mri)");
    }
    if (!kv.empty()) {
        throw ConfigError("unknown option '" + kv.begin()->first + "' for operator " + name);
    }
    return spec;
}

std::string format_operator_spec(const OperatorSpec& spec) {
    std::ostringstream os;
    os << std::setprecision(17);
    switch (spec.kind) {
    case OperatorKind::Identity:
        os << "identity";
        break;
    case OperatorKind::BlurStride:
        os << "sr:sigma=" << spec.sigma << ",size=" << spec.size << ",stride=" << spec.stride;
        break;
    case OperatorKind::MaskedFourier:
        os << "mri:acc=" << spec.acc << ",seed=" << spec.seed;
        if (spec.center >= 0.0) {
            os << ",center=" << spec.center;
        }
        break;
    }
    return os.str();
}

ForwardOperator build_operator(const OperatorSpec& spec, int height, int width) {
    switch (spec.kind) {
    case OperatorKind::Identity:
        return ForwardOperator::identity();
    case OperatorKind::BlurStride:
        return ForwardOperator::blur_stride(spec.sigma, spec.size, spec.stride);
    case OperatorKind::MaskedFourier: {
        const double center = spec.center >= 0.0 ? spec.center : default_center_fraction(spec.acc);
        return ForwardOperator::masked_fourier(generate_column_mask(height, width, spec.acc, center, spec.seed));
    }
    }
    throw ConfigError("unknown operator kind");
}

std::vector<std::string> profile_names() { return {"paper-denoise-5", "paper-denoise-25", "desk"}; }

std::vector<std::string> profile_tokens(const std::string& name) {
    // the built-in defaults are the paper's training setup; profiles only differ where noted
    if (name == "paper-denoise-5") {
        return {"--sigma", "0.0196078431372549"};
    }
    if (name == "paper-denoise-25") {
        return {"--sigma", "0.0980392156862745"};
    }
    if (name == "desk") {
        return {"--sigma", "0.0980392156862745", "--kind", "ncpr", "--side", "3", "--p1", "8", "--p2", "3",
                "--crop", "9", "--epochs", "1", "--batches-per-epoch", "200", "--lr-dict", "5e-3",
                "--lr-reg", "2e-2", "--tau0", "0.05", "--beta0", "1"};
    }
    throw ConfigError("unknown profile '" + name + "'");
}

namespace {

// ---------------------------------------------------------------- options

struct Common {
    std::string config;
    std::uint64_t seed = 0;
};

struct TrainOpts {
    std::string profile = "paper-denoise-25";
    std::string data;
    std::string out;
    std::string init_model;
    std::string kind = "cpr";
    double gamma = 2.0;
    int side = 13;
    int p1 = 200;
    int p2 = 120;
    double tau0 = 0.05;
    double beta0 = 1.0;
    double sigma = 25.0 / 255.0;
    int crop = 40;
    int batch_size = 16;
    int epochs = 2;
    int batches_per_epoch = 238400 / 16;
    double lr_dict = 2e-4;
    double lr_reg = 1e-3;
    int decay_points = 10;
    double decay_factor = -1.0; // 0.75 for CPR, 0.9 for NCPR
    std::string backward = "broyden";
    int backward_iters = -1;    // 50 for Broyden, 75 for Anderson
    double backward_tol = 1e-6;
    double tol = kTrainingTol;
    int max_iters = 2000;
    int checkpoint_every = 100;
    long stop_after = -1;
    double max_skip = 0.1;
    bool resume = false;
};

struct SolveOpts {
    std::string model;
    std::string truth;
    std::string measurement;
    std::string save_measurement;
    std::string op = "identity";
    std::string size;
    double noise = 0.0;
    double tol = kInferenceTol;
    int max_iters = 20000;
    std::string out;
};

struct GridOpts {
    std::string model;
    std::string val;
    std::string op = "identity";
    double noise = 25.0 / 255.0;
    std::string beta_range;
    std::string second_range = "0.1:10";
    int points = 5;
    int stages = 2;
    double tol = kInferenceTol;
    int max_iters = 20000;
    std::string out;
};

struct MetricsOpts {
    std::string image;
    std::string ref;
    double peak = 1.0;
    std::string crop;
};

struct InspectOpts {
    std::string model;
    std::string atoms;
};

// ---------------------------------------------------------------- helpers

// captured defaults are printed with 6 digits; snapshots must replay exactly
std::string exact(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

json snapshot(const std::string& command, const CLI::App& sub) {
    json opts = json::object();
    for (const CLI::Option* opt : sub.get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name.rfind("help", 0) == 0 || name == "config") {
            continue;
        }
        if (opt->get_expected_min() == 0) {
            opts[name] = opt->count() > 0;
        } else if (opt->count() > 0) {
            opts[name] = opt->results().back();
        } else {
            opts[name] = opt->get_default_str();
        }
    }
    return json{{"command", command}, {"options", opts}};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) {
        throw DataError("cannot write " + path);
    }
    f << text;
}

void write_history_csv(const std::string& path, const std::vector<HistoryEntry>& history) {
    std::ostringstream os;
    os << std::setprecision(17) << "batch,loss,lr_dict,lr_reg,beta,used,skipped_total\n";
    for (const auto& e : history) {
        os << e.batch << ',' << e.loss << ',' << e.lr_dict << ',' << e.lr_reg << ',' << e.beta << ',' << e.used << ','
           << e.skipped_total << '\n';
    }
    write_text(path, os.str());
}

Image require_image(const std::string& path, const char* what) {
    if (path.empty()) {
        throw ConfigError(std::string("missing ") + what);
    }
    if (!fs::exists(path)) {
        throw DataError(std::string(what) + " not found: " + path);
    }
    return load_image(path);
}

ModelParams require_model(const std::string& path) {
    if (!fs::exists(path)) {
        throw DataError("model not found: " + path);
    }
    return load_model(path);
}

void ensure_parent(const std::string& path) {
    const fs::path p = fs::path(path).parent_path();
    if (!p.empty()) {
        fs::create_directories(p);
    }
}

// MRI data lives in a two-plane float container (real, imaginary) on the full grid.
void save_measurement(const std::string& path, const Measurement& y) {
    ensure_parent(path);
    if (!y.complex) {
        save_image(path, y.as_image());
        return;
    }
    if (fs::path(path).extension() != ".spsf") {
        throw ConfigError("complex measurements can only be saved as .spsf");
    }
    Image re(y.height, y.width), im(y.height, y.width);
    for (Eigen::Index k = 0; k < re.data.size(); ++k) {
        re.data[k] = y.values[2 * k];
        im.data[k] = y.values[2 * k + 1];
    }
    save_float_container(path, {re, im});
}

Measurement load_measurement(const std::string& path, const ForwardOperator& h, double noise_sigma) {
    if (!fs::exists(path)) {
        throw DataError("measurement not found: " + path);
    }
    Measurement y;
    y.kind = h.kind();
    y.noise_sigma = noise_sigma;
    if (h.kind() == OperatorKind::MaskedFourier) {
        const auto planes = load_float_container(path);
        if (planes.size() != 2) {
            throw DataError("MRI measurements need two planes (real, imaginary): " + path);
        }
        y.height = planes[0].height;
        y.width = planes[0].width;
        y.complex = true;
        y.values = Eigen::VectorXd::Zero(2 * planes[0].data.size());
        for (Eigen::Index k = 0; k < planes[0].data.size(); ++k) {
            y.values[2 * k] = planes[0].data[k];
            y.values[2 * k + 1] = planes[1].data[k];
        }
        return y;
    }
    const Image img = load_image(path);
    y.height = img.height;
    y.width = img.width;
    y.values = img.data;
    return y;
}

struct Problem {
    ModelParams params;
    ForwardOperator h;
    Measurement y;
    std::optional<Image> truth;
    int height = 0;
    int width = 0;
};

Problem prepare(const SolveOpts& o, std::uint64_t seed) {
    Problem p;
    p.params = require_model(o.model);
    const OperatorSpec spec = parse_operator_spec(o.op);
    if (!o.truth.empty()) {
        p.truth = require_image(o.truth, "ground truth");
        p.height = p.truth->height;
        p.width = p.truth->width;
    }
    if (!o.measurement.empty()) {
        if (o.measurement.size() && !fs::exists(o.measurement)) {
            throw DataError("measurement not found: " + o.measurement);
        }
        if (!p.truth) {
            if (!o.size.empty()) {
                std::tie(p.height, p.width) = parse_size(o.size);
            } else if (spec.kind == OperatorKind::BlurStride) {
                const Image m = load_image(o.measurement);
                p.height = m.height * spec.stride;
                p.width = m.width * spec.stride;
            } else if (spec.kind == OperatorKind::MaskedFourier) {
                const auto planes = load_float_container(o.measurement);
                p.height = planes.at(0).height;
                p.width = planes.at(0).width;
            } else {
                const Image m = load_image(o.measurement);
                p.height = m.height;
                p.width = m.width;
            }
        }
        p.h = build_operator(spec, p.height, p.width);
        p.y = load_measurement(o.measurement, p.h, o.noise);
    } else if (p.truth) {
        p.h = build_operator(spec, p.height, p.width);
        p.y = simulate_measurements(p.h, *p.truth, o.noise, seed);
    } else {
        throw ConfigError("give --truth (to simulate data) or --measurement");
    }
    if (!o.save_measurement.empty()) {
        save_measurement(o.save_measurement, p.y);
    }
    return p;
}

json solve_report(const SolveResult& r, const InnerProblem& prob) {
    return json{{"converged", r.state.converged},
                {"iterations", r.iterations},
                {"residual", r.state.residual},
                {"objective", objective_value(prob, r.state.x, r.state.alpha)},
                {"operator", prob.op().describe()}};
}

void add_quality(json& report, const Image& x, const Image& truth, const Image& baseline, std::ostream& out) {
    const double p = psnr(x, truth);
    const double s = ssim(x, truth);
    const double p0 = psnr(baseline, truth);
    report["psnr"] = psnr_for_table(p);
    report["ssim"] = s;
    report["psnr_adjoint"] = psnr_for_table(p0);
    out << std::fixed << std::setprecision(2) << "PSNR " << psnr_for_table(p) << " dB (adjoint "
        << psnr_for_table(p0) << " dB), SSIM " << std::setprecision(4) << s << "\n"
        << std::defaultfloat;
}

// ---------------------------------------------------------------- commands

int decay_index(const TrainConfig& c, long batch) {
    const long within = batch % c.batches_per_epoch;
    int idx = 0;
    for (int j = 1; j < c.decay_points_per_epoch; ++j) {
        if (static_cast<long>(j) * c.batches_per_epoch / c.decay_points_per_epoch <= within) {
            ++idx;
        }
    }
    return static_cast<int>(batch / c.batches_per_epoch) * c.decay_points_per_epoch + idx;
}

int cmd_train(const TrainOpts& o, const Common& common, const json& snap, std::ostream& out) {
    if (o.out.empty()) {
        throw ConfigError("train needs --out");
    }
    if (o.data.empty() || !fs::is_directory(o.data)) {
        throw DataError("dataset directory not found: " + o.data);
    }
    const RegularizerKind kind = regularizer_kind_from_string(o.kind);
    TrainConfig tcfg;
    tcfg.batch_size = o.batch_size;
    tcfg.lr_dict = o.lr_dict;
    tcfg.lr_reg = o.lr_reg;
    tcfg.epochs = o.epochs;
    tcfg.batches_per_epoch = o.batches_per_epoch;
    tcfg.decay_points_per_epoch = o.decay_points;
    tcfg.decay_factor = o.decay_factor > 0.0 ? o.decay_factor : (kind == RegularizerKind::CPR ? 0.75 : 0.9);
    tcfg.backward.solver = backward_solver_from_string(o.backward);
    tcfg.backward.iters =
        o.backward_iters > 0 ? o.backward_iters : (tcfg.backward.solver == BackwardSolver::Anderson ? 75 : 50);
    tcfg.backward.tol = o.backward_tol;
    tcfg.seed = common.seed;
    tcfg.noise_sigma = o.sigma;
    tcfg.crop_height = tcfg.crop_width = o.crop;
    tcfg.checkpoint_every = o.checkpoint_every;
    tcfg.max_skip_fraction = o.max_skip;
    SolverConfig scfg;
    scfg.tol = o.tol;
    scfg.max_iters = o.max_iters;

    fs::create_directories(o.out);
    const std::string ckpt = (fs::path(o.out) / "checkpoint.json").string();
    const std::string history_csv = (fs::path(o.out) / "history.csv").string();
    TrainState state;
    if (o.resume) {
        if (!fs::exists(ckpt)) {
            throw DataError("nothing to resume: " + ckpt + " does not exist");
        }
        state = load_checkpoint(ckpt, &tcfg);
        out << "resuming at batch " << state.next_batch << "\n";
    } else {
        ModelParams params;
        if (!o.init_model.empty()) {
            params = require_model(o.init_model);
        } else {
            ModelInit init;
            init.side = o.side;
            init.p1 = o.p1;
            init.p2 = o.p2;
            init.kind = kind;
            init.gamma = o.gamma;
            init.tau = o.tau0;
            init.beta = o.beta0;
            init.seed = common.seed;
            params = initialize_model(init);
        }
        state = initial_train_state(std::move(params));
    }
    tcfg.stop_after = o.stop_after;
    write_json((fs::path(o.out) / "config.json").string(), snap);

    const CropDataset data = CropDataset::from_directory(o.data);
    out << "training on " << data.size() << " images, " << tcfg.epochs * static_cast<long>(tcfg.batches_per_epoch)
        << " batches of " << tcfg.batch_size << ", " << configured_threads() << " thread(s)\n";

    double sum = 0.0;
    int count = 0;
    const long total = static_cast<long>(tcfg.epochs) * tcfg.batches_per_epoch;
    TrainCallbacks cb;
    cb.on_batch = [&](const HistoryEntry& e) {
        if (std::isfinite(e.loss)) {
            sum += e.loss;
            ++count;
        }
        if (e.batch + 1 == total || decay_index(tcfg, e.batch + 1) != decay_index(tcfg, e.batch)) {
            out << "batch " << e.batch + 1 << "/" << total << "  mean loss " << std::setprecision(6)
                << (count ? sum / count : std::nan("")) << "  lr " << e.lr_dict << "/" << e.lr_reg << "  beta "
                << e.beta << "\n";
            sum = 0.0;
            count = 0;
        }
    };
    cb.on_checkpoint = [&](const TrainState& s) {
        save_checkpoint(ckpt, s, tcfg);
        write_history_csv(history_csv, s.history);
    };
    state = train(data, std::move(state), tcfg, scfg, cb);
    save_checkpoint(ckpt, state, tcfg);
    write_history_csv(history_csv, state.history);
    save_model((fs::path(o.out) / "model.json").string(), state.params);
    out << "wrote " << (fs::path(o.out) / "model.json").string() << " after " << state.next_batch << " batches ("
        << state.skipped << " skipped solves)\n";
    return kExitOk;
}

SolveResult run_solver(const InnerProblem& prob, const SolveOpts& o) {
    SolverConfig cfg;
    cfg.tol = o.tol;
    cfg.max_iters = o.max_iters;
    return solve_inner(prob, cfg);
}

int cmd_reconstruct(const SolveOpts& o, const Common& common, const json& snap, std::ostream& out) {
    if (o.out.empty()) {
        throw ConfigError("reconstruct needs --out");
    }
    const Problem p = prepare(o, common.seed);
    const InnerProblem prob(p.params.model(), p.h, p.y);
    const SolveResult r = run_solver(prob, o);
    ensure_parent(o.out);
    save_image(o.out, r.state.x);
    json report = solve_report(r, prob);
    if (!r.state.converged) {
        out << "warning: solver stopped at max_iters (residual " << r.state.residual << ")\n";
    }
    if (p.truth) {
        add_quality(report, r.state.x, *p.truth, prob.adjoint_data(), out);
    }
    report["config"] = snap;
    write_json(o.out + ".json", report);
    out << "wrote " << o.out << "\n";
    return kExitOk;
}

int cmd_decompose(const SolveOpts& o, const Common& common, const json& snap, std::ostream& out) {
    if (o.out.empty()) {
        throw ConfigError("decompose needs --out (a directory)");
    }
    const Problem p = prepare(o, common.seed);
    const InnerProblem prob(p.params.model(), p.h, p.y);
    const SolveResult r = run_solver(prob, o);
    const Decomposition d = decompose(r.state, prob);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    auto both = [&](const std::string& stem, const Image& img, const Image& preview) {
        save_float_container((dir / (stem + ".spsf")).string(), {img});
        save_png((dir / (stem + ".png")).string(), preview);
    };
    Image sparse_preview = d.x_sparse;
    sparse_preview.data.array() += 0.5;
    Image cost_preview = d.cost_map;
    const double cmax = cost_preview.data.maxCoeff();
    if (cmax > 0.0) {
        cost_preview.data /= cmax;
    }
    both("x_star", d.x_star, d.x_star);
    both("x_smooth", d.x_smooth, d.x_smooth);
    both("x_sparse", d.x_sparse, sparse_preview);
    both("cost_map", d.cost_map, cost_preview);

    const DictionaryPair& dict = p.params.dict;
    const Eigen::VectorXd tau = p.params.tau();
    std::vector<int> order(tau.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return tau[a] < tau[b]; });
    Eigen::MatrixXd sorted_d(dict.d.taps.rows(), dict.d.taps.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
        sorted_d.col(static_cast<Eigen::Index>(i)) = dict.d.taps.col(order[i]);
    }
    save_png((dir / "atoms_d.png").string(), atom_sheet(sorted_d, dict.side()));
    Eigen::MatrixXd q = dict.q.taps;
    if (dict.p2() > 1) {
        q = sort_free_atoms(dict, {d.x_star}).rotated_q;
    }
    save_png((dir / "atoms_q.png").string(), atom_sheet(q, dict.side()));

    Image sum = d.x_smooth;
    sum.data += d.x_sparse.data;
    const double split = (sum.data - d.x_star.data).norm() / std::max(d.x_star.data.norm(), 1e-300);
    json report = solve_report(r, prob);
    report["split_residual"] = split;
    report["normal_residual"] = d.normal_residual;
    report["cg_residual"] = d.cg_residual;
    report["damped"] = d.damped;
    report["atoms_d_order"] = order;
    report["notes"] = {"x_sparse.png is offset by 0.5; cost_map.png is scaled to its maximum",
                       "CPR group costs are split equally over the four pixels of each group",
                       "atoms_q.png rotates the free atoms by a PCA of their coefficients on x_star"};
    if (p.truth) {
        add_quality(report, r.state.x, *p.truth, prob.adjoint_data(), out);
    }
    report["config"] = snap;
    write_json((dir / "decomposition.json").string(), report);
    out << "split residual " << split << ", normal-equation residual " << d.normal_residual
        << (d.damped ? " (damped)" : "") << "\nwrote " << dir.string() << "\n";
    return kExitOk;
}

int cmd_gridsearch(const GridOpts& o, const Common& common, const json& snap, std::ostream& out) {
    if (o.out.empty()) {
        throw ConfigError("gridsearch needs --out (a directory)");
    }
    const ModelParams base = require_model(o.model);
    if (o.val.empty() || !fs::is_directory(o.val)) {
        throw DataError("validation directory not found: " + o.val);
    }
    const CropDataset val = CropDataset::from_directory(o.val);
    if (val.size() == 0) {
        throw DataError("validation directory has no images: " + o.val);
    }
    const OperatorSpec spec = parse_operator_spec(o.op);
    const int h0 = val.images().front().height;
    const int w0 = val.images().front().width;
    for (const auto& img : val.images()) {
        if (img.height != h0 || img.width != w0) {
            throw DataError("validation images must share one size");
        }
    }
    const ForwardOperator h = build_operator(spec, h0, w0);
    std::vector<ValidationItem> items;
    for (std::size_t i = 0; i < val.size(); ++i) {
        items.push_back({val.images()[i], simulate_measurements(h, val.images()[i], o.noise, common.seed + i)});
    }
    SolverConfig cfg;
    cfg.tol = o.tol;
    cfg.max_iters = o.max_iters;

    const double beta = base.beta();
    GridAxis a{"beta", beta / 10.0, beta * 10.0, o.points};
    if (!o.beta_range.empty()) {
        std::tie(a.lo, a.hi) = parse_range(o.beta_range);
    }
    GridAxis b{tuning_axis_name(base.kind), 0.1, 10.0, o.points};
    std::tie(b.lo, b.hi) = parse_range(o.second_range);
    const auto result = coarse_to_fine(
        a, b, [&](double x, double y) { return validation_score(base, x, y, h, items, cfg); }, o.stages);

    const fs::path dir(o.out);
    fs::create_directories(dir);
    std::ostringstream csv;
    csv << std::setprecision(17) << "beta," << b.name << ",mean_psnr,stage\n";
    for (const auto& e : result.table) {
        csv << e.a << ',' << e.b << ',' << e.score << ',' << e.stage << '\n';
    }
    write_text((dir / "table.csv").string(), csv.str());
    const ModelParams tuned = apply_tuning(base, result.best_a, result.best_b);
    save_model((dir / "model.json").string(), tuned);
    write_json((dir / "best.json").string(), json{{"beta", result.best_a},
                                                  {b.name, result.best_b},
                                                  {"mean_psnr", result.best_score},
                                                  {"evaluations", result.table.size()},
                                                  {"operator", h.describe()},
                                                  {"config", snap}});
    out << "best beta " << result.best_a << ", " << b.name << " " << result.best_b << ": mean PSNR "
        << result.best_score << " dB over " << items.size() << " images (" << result.table.size()
        << " evaluations)\n";
    return kExitOk;
}

int cmd_metrics(const MetricsOpts& o, const json& snap, std::ostream& out) {
    const Image x = require_image(o.image, "image");
    const Image ref = require_image(o.ref, "reference");
    std::optional<CenterCrop> crop;
    if (!o.crop.empty()) {
        const auto [ch, cw] = parse_size(o.crop);
        crop = CenterCrop{ch, cw};
    }
    const double p = psnr(x, ref, o.peak, crop);
    const Image xs = crop ? center_crop(x, *crop) : x;
    const Image rs = crop ? center_crop(ref, *crop) : ref;
    const json report{{"psnr", psnr_for_table(p)}, {"ssim", ssim(xs, rs, o.peak)}, {"config", snap}};
    out << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_inspect(const InspectOpts& o, const json& snap, std::ostream& out) {
    const ModelParams p = require_model(o.model);
    const FeasibilityReport f = validate_feasible_set(p.dict, 1e-5);
    const Eigen::VectorXd tau = p.tau();
    json report{{"kind", to_string(p.kind)},
                {"patch_side", p.patch_side()},
                {"p1", p.p1()},
                {"p2", p.p2()},
                {"beta", p.beta()},
                {"lambda", p.lambda},
                {"gamma", p.gamma},
                {"tau_multiplier", p.tau_multiplier},
                {"tau", std::vector<double>(tau.data(), tau.data() + tau.size())},
                {"feasibility",
                 {{"orthonormality", f.orthonormality},
                  {"cross", f.cross},
                  {"spectral_error", f.spectral_error},
                  {"norm_spread", f.norm_spread},
                  {"constant_atom", f.constant_atom},
                  {"passed", f.passed}}},
                {"config", snap}};
    if (!o.atoms.empty()) {
        ensure_parent(o.atoms);
        save_png(o.atoms, atom_sheet(p.dict.d.taps, p.patch_side()));
    }
    out << report.dump(2) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- argv assembly

std::optional<std::string> scan_value(const std::vector<std::string>& args, const std::string& flag) {
    std::optional<std::string> found;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == flag && i + 1 < args.size()) {
            found = args[i + 1];
        } else if (args[i].rfind(flag + "=", 0) == 0) {
            found = args[i].substr(flag.size() + 1);
        }
    }
    return found;
}

std::vector<std::string> config_tokens(const std::string& path, const std::string& command) {
    if (!fs::exists(path)) {
        throw ConfigError("config file not found: " + path);
    }
    json j;
    try {
        j = read_json(path);
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
    if (j.is_object() && j.contains("config") && j["config"].is_object() && j["config"].contains("options")) {
        j = j["config"]; // a result sidecar carries its snapshot
    }
    if (j.contains("options")) {
        if (j.contains("command") && j["command"] != command) {
            throw ConfigError(path + " is a snapshot of '" + j["command"].get<std::string>() + "', not '" + command +
                              "'");
        }
        j = j["options"];
    }
    if (!j.is_object()) {
        throw ConfigError(path + " must hold a JSON object of options");
    }
    std::vector<std::string> tokens;
    for (const auto& [key, value] : j.items()) {
        if (key == "config") {
            continue;
        }
        if (value.is_boolean()) {
            if (value.get<bool>()) {
                tokens.push_back("--" + key);
            }
        } else if (value.is_string()) {
            if (!value.get<std::string>().empty()) {
                tokens.push_back("--" + key);
                tokens.push_back(value.get<std::string>());
            }
        } else if (value.is_number()) {
            tokens.push_back("--" + key);
            tokens.push_back(value.is_number_float() ? exact(value.get<double>()) : value.dump());
        } else if (!value.is_null()) {
            throw ConfigError("config option '" + key + "' must be a string, number or boolean");
        }
    }
    return tokens;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Smooth-plus-sparse patch dictionary models: training, reconstruction and analysis", "sps"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every command");

    Common common;
    TrainOpts topt;
    SolveOpts ropt, dopt;
    GridOpts gopt;
    MetricsOpts mopt;
    InspectOpts iopt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "JSON file of option values (flags given here win)");
        sub->add_option("--seed", common.seed, "Seed for initialization, crops and simulated noise");
    };

    CLI::App* train = app.add_subcommand("train", "Learn a model on noisy crops of a directory of images");
    add_common(train);
    train->add_option("--profile", topt.profile, "paper-denoise-5, paper-denoise-25 (defaults) or desk");
    train->add_option("--data", topt.data, "Directory of grayscale training images");
    train->add_option("--out", topt.out, "Output directory (model, checkpoint, history, config)");
    train->add_option("--init-model", topt.init_model, "Start from this model instead of a random one");
    train->add_option("--kind", topt.kind, "Regularizer: cpr or ncpr");
    train->add_option("--gamma", topt.gamma, "NCPR exponent");
    train->add_option("--side", topt.side, "Atom side length");
    train->add_option("--p1", topt.p1, "Number of sparse atoms");
    train->add_option("--p2", topt.p2, "Number of free atoms, constant atom included");
    train->add_option("--tau0", topt.tau0, "Initial threshold");
    train->add_option("--beta0", topt.beta0, "Initial patch weight");
    train->add_option("--sigma", topt.sigma, "Training noise level on the [0, 1] scale")->default_str(exact(topt.sigma));
    train->add_option("--crop", topt.crop, "Crop side length");
    train->add_option("--batch-size", topt.batch_size);
    train->add_option("--epochs", topt.epochs);
    train->add_option("--batches-per-epoch", topt.batches_per_epoch);
    train->add_option("--lr-dict", topt.lr_dict, "Learning rate of the dictionaries");
    train->add_option("--lr-reg", topt.lr_reg, "Learning rate of tau and beta");
    train->add_option("--decay-points", topt.decay_points, "Learning-rate decays per epoch");
    train->add_option("--decay-factor", topt.decay_factor, "Decay factor; <= 0 picks 0.75 (cpr) or 0.9 (ncpr)");
    train->add_option("--backward", topt.backward, "Adjoint solver: broyden or anderson");
    train->add_option("--backward-iters", topt.backward_iters, "<= 0 picks 50 (broyden) or 75 (anderson)");
    train->add_option("--backward-tol", topt.backward_tol);
    train->add_option("--tol", topt.tol, "Inner solver tolerance");
    train->add_option("--max-iters", topt.max_iters, "Inner solver iteration cap");
    train->add_option("--checkpoint-every", topt.checkpoint_every, "Batches between checkpoints (0: only at the end)");
    train->add_option("--stop-after", topt.stop_after, "Stop after this many batches in this run");
    train->add_option("--max-skip", topt.max_skip, "Abort when this fraction of solves fails");
    train->add_flag("--resume", topt.resume, "Continue from <out>/checkpoint.json");

    auto add_solve = [&](CLI::App* sub, SolveOpts& o) {
        add_common(sub);
        sub->add_option("--model", o.model, "Model file")->required();
        sub->add_option("--truth", o.truth, "Ground truth; measurements are simulated from it unless given");
        sub->add_option("--measurement", o.measurement, "Measured data (MRI: two-plane .spsf)");
        sub->add_option("--save-measurement", o.save_measurement, "Write the (simulated) measurement here");
        sub->add_option("--operator", o.op, "identity | sr[:sigma=2,size=16,stride=4] | mri[:acc=8,seed=0,center=]");
        sub->add_option("--size", o.size, "Image size HxW when only a measurement is given");
        sub->add_option("--noise", o.noise, "Noise level for simulated measurements");
        sub->add_option("--tol", o.tol, "Solver tolerance");
        sub->add_option("--max-iters", o.max_iters, "Solver iteration cap");
    };
    CLI::App* recon = app.add_subcommand("reconstruct", "Solve the inverse problem with a trained model");
    add_solve(recon, ropt);
    recon->add_option("--out", ropt.out, "Output image (.png or .spsf)");
    CLI::App* decomp = app.add_subcommand("decompose", "Reconstruct and split into smooth and sparse parts");
    add_solve(decomp, dopt);
    decomp->add_option("--out", dopt.out, "Output directory");

    CLI::App* grid = app.add_subcommand("gridsearch", "Tune beta and lambda (cpr) or the tau scale (ncpr)");
    add_common(grid);
    grid->add_option("--model", gopt.model, "Model file")->required();
    grid->add_option("--val", gopt.val, "Directory of validation images (one size)");
    grid->add_option("--operator", gopt.op, "Forward operator, as for reconstruct");
    grid->add_option("--noise", gopt.noise, "Noise level of the simulated validation data")->default_str(exact(gopt.noise));
    grid->add_option("--beta-range", gopt.beta_range, "lo:hi (default: model beta / 10 .. * 10)");
    grid->add_option("--second-range", gopt.second_range, "lo:hi of lambda or the tau scale");
    grid->add_option("--points", gopt.points, "Grid points per axis and stage");
    grid->add_option("--stages", gopt.stages, "Coarse stage plus refinements");
    grid->add_option("--tol", gopt.tol, "Solver tolerance");
    grid->add_option("--max-iters", gopt.max_iters, "Solver iteration cap");
    grid->add_option("--out", gopt.out, "Output directory");

    CLI::App* metrics = app.add_subcommand("metrics", "PSNR and SSIM of an image against a reference");
    add_common(metrics);
    metrics->add_option("--image", mopt.image)->required();
    metrics->add_option("--ref", mopt.ref)->required();
    metrics->add_option("--peak", mopt.peak);
    metrics->add_option("--crop", mopt.crop, "Centered crop HxW");

    CLI::App* inspect = app.add_subcommand("inspect-model", "Print a model summary and its feasibility");
    add_common(inspect);
    inspect->add_option("--model", iopt.model)->required();
    inspect->add_option("--atoms", iopt.atoms, "Write an atom sheet of D here");

    try {
        std::vector<std::string> tokens;
        if (!args.empty()) {
            tokens.push_back(args[0]);
            const bool known = app.get_subcommand_no_throw(args[0]) != nullptr;
            if (known && args[0] == "train") {
                const auto prof = scan_value(args, "--profile");
                if (prof) {
                    const auto extra = profile_tokens(*prof);
                    tokens.insert(tokens.end(), extra.begin(), extra.end());
                }
            }
            if (known) {
                if (const auto cfg = scan_value(args, "--config")) {
                    const auto extra = config_tokens(*cfg, args[0]);
                    tokens.insert(tokens.end(), extra.begin(), extra.end());
                }
            }
            tokens.insert(tokens.end(), args.begin() + 1, args.end());
        }
        std::reverse(tokens.begin(), tokens.end());
        app.parse(tokens);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (train->parsed()) {
            return cmd_train(topt, common, snapshot("train", *train), out);
        }
        if (recon->parsed()) {
            return cmd_reconstruct(ropt, common, snapshot("reconstruct", *recon), out);
        }
        if (decomp->parsed()) {
            return cmd_decompose(dopt, common, snapshot("decompose", *decomp), out);
        }
        if (grid->parsed()) {
            return cmd_gridsearch(gopt, common, snapshot("gridsearch", *grid), out);
        }
        if (metrics->parsed()) {
            return cmd_metrics(mopt, snapshot("metrics", *metrics), out);
        }
        if (inspect->parsed()) {
            return cmd_inspect(iopt, snapshot("inspect-model", *inspect), out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const FormatError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const TrainingAborted& e) {
        err << "aborted: " << e.what() << "\n";
        return kExitAbort;
    } catch (const DivergenceError& e) {
        err << "aborted: " << e.what() << "\n";
        return kExitAbort;
    } catch (const InputError& e) {
        err << "invalid input: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}

} // namespace sps::cli
