#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include <json.hpp>

#include "tpl/config.hpp"
#include "tpl/data.hpp"
#include "tpl/hat_mlp.hpp"
#include "tpl/run.hpp"

namespace tpl {

inline constexpr int kRunConfigSchema = 1;
inline constexpr std::uint32_t kModelFormatVersion = 1;

struct DatasetSpec {
  enum class Kind { synthetic, manifest };
  Kind kind = Kind::synthetic;
  GaussianStreamSpec synthetic;
  std::filesystem::path manifest;  // absolute once resolved
};

struct RunConfig {
  TrainConfig train;
  DatasetSpec dataset;
  std::filesystem::path output_dir = "run";
};

// Strict parse: unknown keys and wrong types raise ConfigError. Relative
// paths are resolved against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully resolved form, every field present.
nlohmann::json to_json(const RunConfig& config);

TaskStream load_dataset(const RunConfig& config);

// Binary checkpoint: "TPLMODEL", u32 version, then little-endian u64 counts and
// IEEE-754 f64 values for widths, weights, embeddings, masks and heads.
void write_model(std::ostream& out, const HatMlp& net, const std::vector<TaskHead>& heads);
void read_model(std::istream& in, HatMlp& net, std::vector<TaskHead>& heads);

nlohmann::json to_json(const TaskStats& stats, int task_id, const std::vector<int>& classes);
TaskStats task_stats_from_json(const nlohmann::json& j, std::vector<int>* classes = nullptr);
nlohmann::json to_json(const Checkpoint& cp);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
nlohmann::json calibration_json(const CalibrationParams& params);
CalibrationParams calibration_from_json(const nlohmann::json& j);

void write_buffer_csv(const std::filesystem::path& path, const ReplayBuffer& buffer);
ReplayBuffer read_buffer_csv(const std::filesystem::path& path, std::size_t capacity);

// config.json, model.bin, stats/task_{t}.json, buffer.csv, calibration.json,
// trajectory.json, losses.json.
void save_run(const std::filesystem::path& dir, const RunConfig& config, const RunArtifacts& run);

struct LoadedRun {
  RunConfig config;
  RunArtifacts artifacts;
};

LoadedRun load_run(const std::filesystem::path& dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace tpl
