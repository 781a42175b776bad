#include "sps/model_io.hpp"

#include <fstream>
#include <set>

namespace sps {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    // column-major
    j["data"] = std::vector<double>(m.data(), m.data() + m.size());
    return j;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw FormatError("matrix entry has inconsistent size");
    }
    Eigen::MatrixXd m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

json model_to_json(const ModelParams& p) {
    json j;
    j["magic"] = kModelMagic;
    j["version"] = kModelVersion;
    j["kind"] = to_string(p.kind);
    j["patch_side"] = p.raw.side;
    j["raw_d"] = matrix_to_json(p.raw.d);
    j["raw_q"] = matrix_to_json(p.raw.q);
    j["tau_raw"] = std::vector<double>(p.tau_raw.data(), p.tau_raw.data() + p.tau_raw.size());
    j["tau_multiplier"] = p.tau_multiplier;
    j["beta_raw"] = p.beta_raw;
    j["lambda"] = p.lambda;
    j["gamma"] = p.gamma;
    const Eigen::VectorXd tau = p.tau();
    j["derived"] = {{"D", matrix_to_json(p.dict.d.taps)},
                    {"Q", matrix_to_json(p.dict.q.taps)},
                    {"tau", std::vector<double>(tau.data(), tau.data() + tau.size())},
                    {"beta", p.beta()}};
    return j;
}

ModelParams model_from_json(const json& j) {
    try {
        if (j.at("magic").get<std::string>() != kModelMagic) {
            throw FormatError("not a model file (bad magic)");
        }
        const int version = j.at("version").get<int>();
        if (version != kModelVersion) {
            throw FormatError("unsupported model version " + std::to_string(version));
        }
        ModelParams p;
        p.kind = regularizer_kind_from_string(j.at("kind").get<std::string>());
        p.raw.side = j.at("patch_side").get<int>();
        p.raw.d = matrix_from_json(j.at("raw_d"));
        p.raw.q = matrix_from_json(j.at("raw_q"));
        const auto tau = j.at("tau_raw").get<std::vector<double>>();
        p.tau_raw = Eigen::Map<const Eigen::VectorXd>(tau.data(), static_cast<Eigen::Index>(tau.size()));
        p.tau_multiplier = j.at("tau_multiplier").get<double>();
        p.beta_raw = j.at("beta_raw").get<double>();
        p.lambda = j.at("lambda").get<double>();
        p.gamma = j.at("gamma").get<double>();
        if (p.raw.side < 1 || p.raw.side % 2 == 0 || p.raw.d.rows() != p.raw.side * p.raw.side ||
            p.raw.q.rows() != p.raw.d.rows() || p.tau_raw.size() != p.raw.d.cols()) {
            throw FormatError("model dimensions are inconsistent");
        }
        p.reparameterize();
        if (j.contains("derived")) {
            const Eigen::MatrixXd d = matrix_from_json(j["derived"].at("D"));
            if (d.rows() != p.dict.d.taps.rows() || d.cols() != p.dict.d.taps.cols() ||
                (d - p.dict.d.taps).cwiseAbs().maxCoeff() > 1e-8) {
                throw FormatError("stored dictionary does not match its raw parameters");
            }
        }
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model file: ") + e.what());
    }
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write " + path);
    }
    out << j.dump(2) << '\n';
    if (!out) {
        throw FormatError("failed writing " + path);
    }
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void save_model(const std::string& path, const ModelParams& p) { write_json(path, model_to_json(p)); }

ModelParams load_model(const std::string& path) { return model_from_json(read_json(path)); }

json train_config_to_json(const TrainConfig& c) {
    return json{{"batch_size", c.batch_size},
                {"lr_dict", c.lr_dict},
                {"lr_reg", c.lr_reg},
                {"epochs", c.epochs},
                {"batches_per_epoch", c.batches_per_epoch},
                {"decay_points_per_epoch", c.decay_points_per_epoch},
                {"decay_factor", c.decay_factor},
                {"backward_solver", to_string(c.backward.solver)},
                {"backward_iters", c.backward.iters},
                {"backward_memory", c.backward.memory},
                {"backward_tol", c.backward.tol},
                {"seed", c.seed},
                {"noise_sigma", c.noise_sigma},
                {"crop_height", c.crop_height},
                {"crop_width", c.crop_width},
                {"checkpoint_every", c.checkpoint_every},
                {"max_skip_fraction", c.max_skip_fraction}};
}

void train_config_from_json(const json& j, TrainConfig& c) {
    if (!j.is_object()) {
        throw InputError("training config must be a JSON object");
    }
    const json known = train_config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw InputError("unknown training option '" + key + "'");
        }
    }
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) {
                field = j.at(key).get<std::decay_t<decltype(field)>>();
            }
        };
        get("batch_size", c.batch_size);
        get("lr_dict", c.lr_dict);
        get("lr_reg", c.lr_reg);
        get("epochs", c.epochs);
        get("batches_per_epoch", c.batches_per_epoch);
        get("decay_points_per_epoch", c.decay_points_per_epoch);
        get("decay_factor", c.decay_factor);
        if (j.contains("backward_solver")) {
            c.backward.solver = backward_solver_from_string(j.at("backward_solver").get<std::string>());
        }
        get("backward_iters", c.backward.iters);
        get("backward_memory", c.backward.memory);
        get("backward_tol", c.backward.tol);
        get("seed", c.seed);
        get("noise_sigma", c.noise_sigma);
        get("crop_height", c.crop_height);
        get("crop_width", c.crop_width);
        get("checkpoint_every", c.checkpoint_every);
        get("max_skip_fraction", c.max_skip_fraction);
    } catch (const json::exception& e) {
        throw InputError(std::string("bad training option: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const TrainState& s, const TrainConfig& cfg) {
    json j;
    j["magic"] = kCheckpointMagic;
    j["version"] = kCheckpointVersion;
    j["model"] = model_to_json(s.params);
    j["adam"] = {{"m", std::vector<double>(s.moments.m.data(), s.moments.m.data() + s.moments.m.size())},
                 {"v", std::vector<double>(s.moments.v.data(), s.moments.v.data() + s.moments.v.size())},
                 {"step", s.moments.step}};
    j["next_batch"] = s.next_batch;
    j["skipped"] = s.skipped;
    j["processed"] = s.processed;
    json hist = json::array();
    for (const auto& h : s.history) {
        hist.push_back({h.batch, h.loss, h.lr_dict, h.lr_reg, h.beta, h.used, h.skipped_total});
    }
    j["history"] = hist;
    j["train_config"] = train_config_to_json(cfg);
    write_json(path, j);
}

TrainState load_checkpoint(const std::string& path, TrainConfig* cfg) {
    const json j = read_json(path);
    try {
        if (j.at("magic").get<std::string>() != kCheckpointMagic || j.at("version").get<int>() != kCheckpointVersion) {
            throw FormatError(path + " is not a supported checkpoint");
        }
        TrainState s;
        s.params = model_from_json(j.at("model"));
        const auto m = j["adam"].at("m").get<std::vector<double>>();
        const auto v = j["adam"].at("v").get<std::vector<double>>();
        s.moments.m = Eigen::Map<const Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
        s.moments.v = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
        s.moments.step = j["adam"].at("step").get<long>();
        s.next_batch = j.at("next_batch").get<long>();
        s.skipped = j.at("skipped").get<long>();
        s.processed = j.at("processed").get<long>();
        for (const auto& h : j.at("history")) {
            HistoryEntry e;
            e.batch = h.at(0).get<long>();
            e.loss = h.at(1).is_null() ? std::nan("") : h.at(1).get<double>();
            e.lr_dict = h.at(2).get<double>();
            e.lr_reg = h.at(3).get<double>();
            e.beta = h.at(4).get<double>();
            e.used = h.at(5).get<int>();
            e.skipped_total = h.at(6).get<long>();
            s.history.push_back(e);
        }
        if (cfg) {
            train_config_from_json(j.at("train_config"), *cfg);
        }
        return s;
    } catch (const json::exception& e) {
        throw FormatError(path + ": malformed checkpoint: " + e.what());
    }
}

} // namespace sps
