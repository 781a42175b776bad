#pragma once

#include <string>

#include <json.hpp>

#include "sps/model.hpp"
#include "sps/trainer.hpp"

namespace sps {

inline constexpr const char* kModelMagic = "SPS-MODEL";
inline constexpr int kModelVersion = 1;
inline constexpr const char* kCheckpointMagic = "SPS-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

/// Raw matrices are the source of truth; the derived pair is stored for
/// inspection and recomputed (and cross-checked) on load.
nlohmann::json model_to_json(const ModelParams& p);
ModelParams model_from_json(const nlohmann::json& j);

void save_model(const std::string& path, const ModelParams& p);
ModelParams load_model(const std::string& path);

/// Model, ADAM moments, batch counters, history, and the training config.
void save_checkpoint(const std::string& path, const TrainState& state, const TrainConfig& cfg);
TrainState load_checkpoint(const std::string& path, TrainConfig* cfg = nullptr);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
/// Overrides fields of `cfg` present in `j`; unknown keys are rejected.
void train_config_from_json(const nlohmann::json& j, TrainConfig& cfg);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

} // namespace sps
