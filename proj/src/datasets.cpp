#include "varnn/datasets.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json_util.hpp"
#include "varnn/wav.hpp"

namespace varnn {

using nlohmann::json;
using detail::check_keys;

static constexpr double kPi = 3.14159265358979323846;

std::vector<double> synth_device_render(std::span<const double> x, const Vector& controls,
                                        double sample_rate, const SyntheticDeviceConfig& cfg) {
  if (controls.size() != 2) {
    throw std::invalid_argument("synth_device_render: expected 2 controls (drive, tone)");
  }
  for (double c : controls) {
    if (!(c >= 0.0 && c <= 1.0)) {
      throw std::invalid_argument("synth_device_render: control value " + std::to_string(c) +
                                  " outside [0, 1]");
    }
  }
  if (!(sample_rate > 2.0 * cfg.cutoff_max_hz)) {
    throw std::invalid_argument("synth_device_render: sample rate too low for tone range");
  }
  const double gain = std::pow(10.0, controls[0] * cfg.drive_db_max / 20.0);
  const double fc = cfg.cutoff_min_hz * std::pow(cfg.cutoff_max_hz / cfg.cutoff_min_hz, controls[1]);
  // Prewarped bilinear one-pole: -3 dB lands on fc across the whole range.
  const double k = std::tan(kPi * fc / sample_rate);
  const double b0 = k / (1.0 + k);
  const double a1 = (1.0 - k) / (1.0 + k);

  std::vector<double> y(x.size());
  double u_prev = 0.0, y_prev = 0.0;
  for (size_t t = 0; t < x.size(); ++t) {
    const double u = std::tanh(gain * x[t]);
    double v = b0 * (u + u_prev) + a1 * y_prev;
    u_prev = u;
    y_prev = v;
    // limiter: the filter can overshoot full scale near Nyquist
    if (v > 1.0) v = 1.0;
    if (v < -1.0) v = -1.0;
    y[t] = cfg.output_level * v;
  }
  return y;
}

namespace {

// Source material: alternating filtered-noise bursts and exponential tone
// sweeps under a Hann envelope, peak about 0.9.
std::vector<double> render_source_audio(int length, double sample_rate, SeededRng rng) {
  std::vector<double> x(static_cast<size_t>(length), 0.0);
  const bool tone = (rng.next_u64() & 1) != 0;
  if (tone) {
    const double f0 = 80.0 * std::pow(5.0, rng.uniform());     // 80..400 Hz
    const double f1 = 800.0 * std::pow(10.0, rng.uniform());   // 800..8000 Hz
    double phase = 0.0;
    for (int t = 0; t < length; ++t) {
      const double frac = static_cast<double>(t) / static_cast<double>(length);
      const double f = f0 * std::pow(f1 / f0, frac);
      phase += 2.0 * kPi * f / sample_rate;
      const double env = 0.5 - 0.5 * std::cos(2.0 * kPi * frac);
      x[static_cast<size_t>(t)] = 0.9 * env * std::sin(phase);
    }
  } else {
    const double fc = 200.0 * std::pow(40.0, rng.uniform());   // 200..8000 Hz
    const double a = std::exp(-2.0 * kPi * fc / sample_rate);
    double y = 0.0;
    for (int t = 0; t < length; ++t) {
      const double frac = static_cast<double>(t) / static_cast<double>(length);
      const double env = 0.5 - 0.5 * std::cos(2.0 * kPi * frac);
      y = a * y + (1.0 - a) * rng.uniform(-1.0, 1.0);
      x[static_cast<size_t>(t)] = 2.5 * env * y;  // one-pole noise sits well below unity
    }
  }
  for (auto& v : x) v = std::clamp(v, -0.95, 0.95);
  return x;
}

// Grid over [0,1]^2 with exact corners first, remaining points jittered.
std::vector<Vector> train_control_grid(int n, double jitter, SeededRng& rng) {
  std::vector<Vector> out;
  out.reserve(static_cast<size_t>(n));
  out.push_back({0.0, 0.0});
  out.push_back({0.0, 1.0});
  out.push_back({1.0, 0.0});
  out.push_back({1.0, 1.0});
  const int m = std::max(2, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
  const double cell = 1.0 / static_cast<double>(m - 1);
  for (int i = 0; i < m && static_cast<int>(out.size()) < n; ++i) {
    for (int j = 0; j < m && static_cast<int>(out.size()) < n; ++j) {
      const bool corner = (i == 0 || i == m - 1) && (j == 0 || j == m - 1);
      if (corner) continue;
      double a = static_cast<double>(i) * cell + rng.uniform(-jitter, jitter) * cell;
      double b = static_cast<double>(j) * cell + rng.uniform(-jitter, jitter) * cell;
      out.push_back({std::clamp(a, 0.0, 1.0), std::clamp(b, 0.0, 1.0)});
    }
  }
  // tiny n: fall back to random interior points
  while (static_cast<int>(out.size()) < n) {
    out.push_back({rng.uniform(), rng.uniform()});
  }
  out.resize(static_cast<size_t>(n));
  return out;
}

std::string index_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03d.wav", prefix, i);
  return buf;
}

}  // namespace

void generate_synthetic_dataset(const SynthDatasetConfig& cfg,
                                const std::filesystem::path& out_dir, uint64_t seed) {
  if (cfg.n_train < 1 || cfg.n_eval < 1) {
    throw std::invalid_argument("generate_synthetic_dataset: counts must be >= 1");
  }
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "train");
  fs::create_directories(out_dir / "eval");

  SeededRng base(seed);
  const int body = static_cast<int>(std::lround(cfg.sample_seconds * cfg.sample_rate));
  const int pad = static_cast<int>(std::lround(cfg.silence_seconds * cfg.sample_rate));

  auto emit_split = [&](const char* split, int count, uint64_t stream,
                        const std::vector<Vector>& controls) {
    DatasetManifest man;
    man.sample_rate = cfg.sample_rate;
    man.control_names = {"drive", "tone"};
    man.split = split;
    SeededRng split_rng = base.split(stream);
    for (int i = 0; i < count; ++i) {
      std::vector<double> x = render_source_audio(body, cfg.sample_rate,
                                                  split_rng.split(static_cast<uint64_t>(i)));
      if (pad > 0) {
        std::vector<double> padded(static_cast<size_t>(pad), 0.0);
        padded.insert(padded.end(), x.begin(), x.end());
        padded.insert(padded.end(), static_cast<size_t>(pad), 0.0);
        x = std::move(padded);
      }
      // Quantize the source to float32 before rendering so a re-render of the
      // stored input reproduces the stored target exactly.
      for (auto& v : x) v = static_cast<double>(static_cast<float>(v));
      std::vector<double> y = synth_device_render(x, controls[static_cast<size_t>(i)],
                                                  cfg.sample_rate, cfg.device);
      const std::string in_name = index_name("input", i);
      const std::string out_name = index_name("target", i);
      wav_write(out_dir / split / in_name, x, cfg.sample_rate);
      wav_write(out_dir / split / out_name, y, cfg.sample_rate);
      ManifestEntry e;
      e.input_path = std::string(split) + "/" + in_name;
      e.target_path = std::string(split) + "/" + out_name;
      e.controls = controls[static_cast<size_t>(i)];
      man.entries.push_back(std::move(e));
    }
    save_manifest(man, out_dir / (std::string(split) + "_manifest.json"));
  };

  SeededRng grid_rng = base.split(10);
  emit_split("train", cfg.n_train, 11, train_control_grid(cfg.n_train, cfg.control_jitter, grid_rng));

  std::vector<Vector> eval_controls;
  SeededRng eval_rng = base.split(20);
  for (int i = 0; i < cfg.n_eval; ++i) {
    eval_controls.push_back({eval_rng.uniform(), eval_rng.uniform()});
  }
  emit_split("eval", cfg.n_eval, 21, eval_controls);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_manifest: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("load_manifest: " + path.string() + ": " + e.what());
  }
  check_keys(j, {"sample_rate", "controls", "samples", "split"}, "manifest");
  DatasetManifest m;
  m.sample_rate = j.at("sample_rate").get<int>();
  m.control_names = j.at("controls").get<std::vector<std::string>>();
  m.split = j.value("split", "");
  for (const auto& js : j.at("samples")) {
    check_keys(js, {"input", "target", "controls"}, "manifest sample");
    ManifestEntry e;
    e.input_path = js.at("input").get<std::string>();
    e.target_path = js.at("target").get<std::string>();
    e.controls = js.at("controls").get<Vector>();
    if (e.controls.size() != m.control_names.size()) {
      throw std::runtime_error("load_manifest: sample control count mismatch in " + path.string());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json j;
  j["sample_rate"] = m.sample_rate;
  j["controls"] = m.control_names;
  if (!m.split.empty()) j["split"] = m.split;
  j["samples"] = json::array();
  for (const auto& e : m.entries) {
    j["samples"].push_back({{"input", e.input_path}, {"target", e.target_path},
                            {"controls", e.controls}});
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

std::pair<std::vector<Sample>, NormalizationStats> load_and_normalize(
    const DatasetManifest& manifest, const std::filesystem::path& base_dir,
    std::optional<NormalizationStats> stats) {
  std::vector<Sample> samples;
  samples.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    WavData in = wav_read(base_dir / e.input_path);
    WavData tgt = wav_read(base_dir / e.target_path);
    if (in.sample_rate != manifest.sample_rate || tgt.sample_rate != manifest.sample_rate) {
      throw std::runtime_error("load_and_normalize: sample rate mismatch for " + e.input_path);
    }
    if (in.samples.size() != tgt.samples.size()) {
      throw std::runtime_error("load_and_normalize: input/target length mismatch for " +
                               e.input_path);
    }
    Sample s;
    s.input = std::move(in.samples);
    s.target = std::move(tgt.samples);
    s.controls = e.controls;
    samples.push_back(std::move(s));
  }

  NormalizationStats st;
  if (stats.has_value()) {
    st = *stats;
  } else {
    double peak = 0.0;
    for (const auto& s : samples) {
      for (double v : s.input) peak = std::max(peak, std::fabs(v));
      for (double v : s.target) peak = std::max(peak, std::fabs(v));
    }
    if (peak == 0.0) {
      throw std::invalid_argument("load_and_normalize: silent dataset (max_abs = 0)");
    }
    st.max_abs = peak;
  }
  const double inv = 1.0 / st.max_abs;
  for (auto& s : samples) {
    for (auto& v : s.input) v *= inv;
    for (auto& v : s.target) v *= inv;
  }
  return {std::move(samples), st};
}

}  // namespace varnn
