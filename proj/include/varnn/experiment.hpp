// Experiment configuration, checkpoints, and the CLI command layer.
//
// Configs are single JSON documents; unknown keys are rejected at every
// level, CLI flags override config fields, and the merged effective config
// is echoed into every output directory. Exit codes: 0 success, 1 runtime
// failure, 2 usage/validation.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "varnn/cells.hpp"
#include "varnn/constraints.hpp"
#include "varnn/datasets.hpp"
#include "varnn/measurement.hpp"
#include "varnn/training.hpp"

namespace varnn {

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_dir;
  ModelConfig model;
  StabilityMargin margins;
  TrainConfig train;
  // dataset: manifest paths (relative to the config file) or synthetic grab bag
  std::string train_manifest;
  std::string eval_manifest;
  std::optional<SynthDatasetConfig> synthetic;
  NoiseProtocolConfig measurement;

  // directory the config file was loaded from; manifest paths resolve
  // against it (not serialized)
  std::filesystem::path base_dir = ".";
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::filesystem::path& base_dir);
std::string experiment_config_json(const ExperimentConfig& cfg);

constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  ExperimentConfig config;
  FreeParams params;
  AdamState adam;
  NormalizationStats norm;
  uint64_t rng_seed = 0;
  std::array<uint64_t, 4> rng_state{};
  SpectralState spectral;
  double best_eval_mae = 0.0;
  int best_epoch = -1;
};

// Deterministic bytes; save -> load -> save round-trips identically.
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Materializes the stored free parameters into a runnable model.
Model checkpoint_model(const Checkpoint& ck);

// temp-file + rename
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

struct CliOverrides {
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<bool> stable;
  std::optional<std::string> cell;  // "gru" | "lstm"
};

ExperimentConfig apply_overrides(ExperimentConfig cfg, const CliOverrides& ov);

int cmd_synth_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, bool force,
                   std::ostream& log);
int cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int runs,
              std::ostream& log);
int cmd_eval(const std::filesystem::path& checkpoint_path,
             const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
             std::ostream& log);
int cmd_measure(const std::filesystem::path& checkpoint_path, const std::string& scenario,
                bool trace, const std::filesystem::path& out_dir, std::ostream& log);
int cmd_verify(const std::filesystem::path& checkpoint_path, const std::filesystem::path& out_dir,
               std::ostream& log);

// Full argv-style entry point (without argv[0]); returns the process exit
// code and never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace varnn
