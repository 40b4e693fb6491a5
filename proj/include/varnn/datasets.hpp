// Dataset manifest format, max-abs normalization, and a deterministic
// synthetic conditioned device (drive -> tanh gain stage, tone -> first-order
// lowpass, fixed 0.5 output level) that generates desk-scale training data.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "varnn/numerics.hpp"

namespace varnn {

struct Sample {
  std::vector<double> input;
  std::vector<double> target;
  Vector controls;  // values in [0, 1], constant per sample
};

struct ManifestEntry {
  std::string input_path;   // relative to the manifest directory
  std::string target_path;
  Vector controls;
};

struct DatasetManifest {
  int sample_rate = 48000;
  std::vector<std::string> control_names;
  std::vector<ManifestEntry> entries;
  std::string split;  // "train" or "eval"
};

struct NormalizationStats {
  double max_abs = 1.0;
};

struct SyntheticDeviceConfig {
  double drive_db_max = 30.0;     // g(p1) = 10^(p1 * drive_db_max / 20)
  double cutoff_min_hz = 500.0;   // f_c(p2) = min * (max/min)^p2
  double cutoff_max_hz = 20000.0;
  double output_level = 0.5;
};

// y = level * lowpass(tanh(g(p1) * x), f_c(p2)); one-pole (prewarped
// bilinear) filter state starts at 0; output hard-limited at full scale so
// |y| <= level always holds.
std::vector<double> synth_device_render(std::span<const double> x, const Vector& controls,
                                        double sample_rate,
                                        const SyntheticDeviceConfig& cfg = {});

struct SynthDatasetConfig {
  int n_train = 64;
  int n_eval = 16;
  double sample_seconds = 1.0;
  int sample_rate = 48000;
  double control_jitter = 0.25;   // fraction of the grid cell, corners stay exact
  double silence_seconds = 0.0;   // optional leading/trailing silence
  SyntheticDeviceConfig device;
};

// Writes train/eval WAV pairs plus train_manifest.json / eval_manifest.json
// under out_dir. Deterministic per seed; train and eval draw from disjoint
// generator streams. Train controls cover a jittered grid whose corners are
// exact; eval controls are uniform random.
void generate_synthetic_dataset(const SynthDatasetConfig& cfg,
                                const std::filesystem::path& out_dir, uint64_t seed);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// Loads every entry; if stats is empty, computes max_abs jointly over inputs
// and targets (training split) and divides both by it; otherwise applies the
// given training stats unchanged.
std::pair<std::vector<Sample>, NormalizationStats> load_and_normalize(
    const DatasetManifest& manifest, const std::filesystem::path& base_dir,
    std::optional<NormalizationStats> stats);

}  // namespace varnn
