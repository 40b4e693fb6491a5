#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "support/tmpdir.hpp"
#include "varnn/datasets.hpp"
#include "varnn/wav.hpp"

using namespace varnn;
using testsupport::TempDir;

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// DTFT magnitude of a recorded impulse response at one frequency (Goertzel
// style direct evaluation); the test-side spectrum oracle.
double dtft_mag(const std::vector<double>& h, double freq_hz, double sr) {
  const double w = 2.0 * 3.14159265358979323846 * freq_hz / sr;
  double re = 0.0, im = 0.0;
  for (size_t n = 0; n < h.size(); ++n) {
    re += h[n] * std::cos(w * static_cast<double>(n));
    im -= h[n] * std::sin(w * static_cast<double>(n));
  }
  return std::sqrt(re * re + im * im);
}

double minus3db_point(const std::vector<double>& impulse_response, double sr) {
  const double dc = dtft_mag(impulse_response, 0.0, sr);
  const double target = dc / std::sqrt(2.0);
  double lo = 10.0, hi = sr / 2.0 - 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (dtft_mag(impulse_response, mid, sr) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("synth device: zero input gives zero output") {
  std::vector<double> x(1000, 0.0);
  auto y = synth_device_render(x, {0.7, 0.3}, 48000.0);
  for (double v : y) CHECK(v == 0.0);
}

TEST_CASE("synth device: control validation") {
  std::vector<double> x(10, 0.1);
  CHECK_THROWS_AS(synth_device_render(x, {1.2, 0.0}, 48000.0), std::invalid_argument);
  CHECK_THROWS_AS(synth_device_render(x, {0.0, -0.1}, 48000.0), std::invalid_argument);
  CHECK_THROWS_AS(synth_device_render(x, {0.5}, 48000.0), std::invalid_argument);
}

TEST_CASE("synth device: small-signal linearity at unity gain") {
  SeededRng rng(2);
  std::vector<double> x(2000);
  for (auto& v : x) v = 1e-4 * rng.uniform(-1.0, 1.0);
  auto y = synth_device_render(x, {0.0, 0.5}, 48000.0);

  // independent linear filter of the raw input
  SyntheticDeviceConfig cfg;
  const double fc = cfg.cutoff_min_hz * std::pow(cfg.cutoff_max_hz / cfg.cutoff_min_hz, 0.5);
  const double k = std::tan(3.14159265358979323846 * fc / 48000.0);
  const double b0 = k / (1.0 + k);
  const double a1 = (1.0 - k) / (1.0 + k);
  double xp = 0.0, yp = 0.0;
  for (size_t t = 0; t < x.size(); ++t) {
    const double v = b0 * (x[t] + xp) + a1 * yp;
    xp = x[t];
    yp = v;
    CHECK(std::fabs(y[t] - 0.5 * v) < 1e-9);
  }
}

TEST_CASE("synth device: lowpass -3 dB point tracks the tone control within 5%") {
  const double sr = 48000.0;
  std::vector<double> impulse(32768, 0.0);
  impulse[0] = 1e-3;  // small enough that tanh is linear

  for (double tone : {0.0, 1.0, 0.5}) {
    auto y = synth_device_render(impulse, {0.0, tone}, sr);
    SyntheticDeviceConfig cfg;
    const double fc = cfg.cutoff_min_hz * std::pow(cfg.cutoff_max_hz / cfg.cutoff_min_hz, tone);
    const double measured = minus3db_point(y, sr);
    CHECK(std::fabs(measured - fc) / fc < 0.05);
  }
}

TEST_CASE("synth device: output bounded by the output level") {
  SeededRng rng(5);
  std::vector<double> x(48000);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  for (double tone : {0.0, 0.9, 1.0}) {
    auto y = synth_device_render(x, {1.0, tone}, 48000.0);
    for (double v : y) CHECK(std::fabs(v) <= 0.5);
  }
}

TEST_CASE("synthetic dataset generation is deterministic and grid-cornered") {
  TempDir td1("synth1"), td2("synth2");
  SynthDatasetConfig cfg;
  cfg.n_train = 64;
  cfg.n_eval = 4;
  cfg.sample_seconds = 0.05;
  generate_synthetic_dataset(cfg, td1.path(), 123);
  generate_synthetic_dataset(cfg, td2.path(), 123);

  DatasetManifest man = load_manifest(td1.path() / "train_manifest.json");
  REQUIRE(man.entries.size() == 64);
  CHECK(man.control_names == std::vector<std::string>{"drive", "tone"});

  // the four exact corners are present
  int corners = 0;
  for (const auto& e : man.entries) {
    if ((e.controls[0] == 0.0 || e.controls[0] == 1.0) &&
        (e.controls[1] == 0.0 || e.controls[1] == 1.0)) {
      ++corners;
    }
    CHECK(e.controls[0] >= 0.0);
    CHECK(e.controls[0] <= 1.0);
  }
  CHECK(corners >= 4);

  // byte-identical across reruns with the same seed
  for (const auto& e : man.entries) {
    CHECK(slurp(td1.path() / e.input_path) == slurp(td2.path() / e.input_path));
    CHECK(slurp(td1.path() / e.target_path) == slurp(td2.path() / e.target_path));
  }

  SUBCASE("stored targets re-render exactly from stored inputs") {
    for (size_t i = 0; i < 6; ++i) {
      const auto& e = man.entries[i];
      WavData in = wav_read(td1.path() / e.input_path);
      WavData tgt = wav_read(td1.path() / e.target_path);
      auto again = synth_device_render(in.samples, e.controls, 48000.0, cfg.device);
      REQUIRE(again.size() == tgt.samples.size());
      for (size_t t = 0; t < again.size(); ++t) {
        REQUIRE(static_cast<double>(static_cast<float>(again[t])) == tgt.samples[t]);
      }
    }
  }
}

TEST_CASE("load_and_normalize pools the training max and reuses it for eval") {
  TempDir td("norm");
  // two tiny hand-made samples with known peaks
  std::vector<double> in1{0.5, -2.0, 1.0};
  std::vector<double> tg1{0.25, 0.5, -0.5};
  std::vector<double> in2{0.125, 0.25, -0.25};
  std::vector<double> tg2{3.0, -1.5, 0.75};  // eval peak exceeds the train peak
  wav_write(td.path() / "in1.wav", in1, 48000);
  wav_write(td.path() / "tg1.wav", tg1, 48000);
  wav_write(td.path() / "in2.wav", in2, 48000);
  wav_write(td.path() / "tg2.wav", tg2, 48000);

  DatasetManifest train_man;
  train_man.sample_rate = 48000;
  train_man.control_names = {"a"};
  train_man.split = "train";
  train_man.entries.push_back({"in1.wav", "tg1.wav", {0.5}});
  save_manifest(train_man, td.path() / "train.json");

  DatasetManifest eval_man = train_man;
  eval_man.split = "eval";
  eval_man.entries[0] = {"in2.wav", "tg2.wav", {0.5}};

  auto [train_samples, stats] =
      load_and_normalize(load_manifest(td.path() / "train.json"), td.path(), std::nullopt);
  CHECK(stats.max_abs == 2.0);
  CHECK(train_samples[0].input[1] == -1.0);
  CHECK(train_samples[0].target[0] == 0.125);

  auto [eval_samples, stats2] = load_and_normalize(eval_man, td.path(), stats);
  CHECK(stats2.max_abs == 2.0);
  CHECK(eval_samples[0].target[0] == 1.5);  // may exceed 1: stats come from the train split

  SUBCASE("normalizing an already-normalized split is a no-op") {
    // peak is exactly 1 after the first pass, so stats come out at 1.0
    wav_write(td.path() / "in1.wav", train_samples[0].input, 48000);
    wav_write(td.path() / "tg1.wav", train_samples[0].target, 48000);
    auto [second, stats3] =
        load_and_normalize(load_manifest(td.path() / "train.json"), td.path(), std::nullopt);
    CHECK(stats3.max_abs == 1.0);
    CHECK(second[0].input == train_samples[0].input);
    CHECK(second[0].target == train_samples[0].target);
  }

  SUBCASE("silent dataset is rejected") {
    std::vector<double> silence(8, 0.0);
    wav_write(td.path() / "in1.wav", silence, 48000);
    wav_write(td.path() / "tg1.wav", silence, 48000);
    CHECK_THROWS_AS(
        load_and_normalize(load_manifest(td.path() / "train.json"), td.path(), std::nullopt),
        std::invalid_argument);
  }
}

TEST_CASE("wav float32 round trip is exact") {
  TempDir td("wav");
  SeededRng rng(9);
  std::vector<double> x(1000);
  for (auto& v : x) v = static_cast<double>(static_cast<float>(rng.uniform(-1.0, 1.0)));
  wav_write(td.path() / "a.wav", x, 48000);
  WavData back = wav_read(td.path() / "a.wav");
  CHECK(back.sample_rate == 48000);
  CHECK(back.samples == x);

  // write what was read: bytes must match
  wav_write(td.path() / "b.wav", back.samples, back.sample_rate);
  CHECK(slurp(td.path() / "a.wav") == slurp(td.path() / "b.wav"));
}

TEST_CASE("wav 16-bit PCM reads with the /32768 convention") {
  TempDir td("wav16");
  // hand-build a minimal 16-bit PCM mono file
  std::vector<unsigned char> b;
  auto u32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
  };
  auto u16 = [&](uint16_t v) {
    b.push_back(static_cast<unsigned char>(v & 0xff));
    b.push_back(static_cast<unsigned char>(v >> 8));
  };
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  const int16_t samples[4] = {0, 16384, -32768, 32767};
  tag("RIFF");
  u32(4 + 24 + 8 + 8);
  tag("WAVE");
  tag("fmt ");
  u32(16);
  u16(1);
  u16(1);
  u32(48000);
  u32(96000);
  u16(2);
  u16(16);
  tag("data");
  u32(8);
  for (int16_t s : samples) u16(static_cast<uint16_t>(s));
  {
    std::ofstream out(td.path() / "pcm16.wav", std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }
  WavData w = wav_read(td.path() / "pcm16.wav");
  REQUIRE(w.samples.size() == 4);
  CHECK(w.samples[0] == 0.0);
  CHECK(w.samples[1] == 0.5);
  CHECK(w.samples[2] == -1.0);
  CHECK(w.samples[3] == doctest::Approx(32767.0 / 32768.0).epsilon(1e-15));
}

TEST_CASE("wav error paths") {
  TempDir td("waverr");
  std::vector<double> x(100, 0.25);
  wav_write(td.path() / "ok.wav", x, 48000);

  SUBCASE("truncated file names the offset") {
    auto bytes = slurp(td.path() / "ok.wav");
    bytes.resize(bytes.size() / 2);
    std::ofstream out(td.path() / "trunc.wav", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    try {
      wav_read(td.path() / "trunc.wav");
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
  }

  SUBCASE("non-RIFF file is rejected with offset 0") {
    std::ofstream out(td.path() / "bogus.wav", std::ios::binary);
    out << "this is not a wav file at all";
    out.close();
    try {
      wav_read(td.path() / "bogus.wav");
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
  }

  SUBCASE("stereo is unsupported") {
    std::vector<unsigned char> b = slurp(td.path() / "ok.wav");
    b[22] = 2;  // channel count lives at offset 22 in this fixed layout
    std::ofstream out(td.path() / "stereo.wav", std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    out.close();
    CHECK_THROWS_AS(wav_read(td.path() / "stereo.wav"), std::runtime_error);
  }
}

TEST_CASE("manifest schema round trip and validation") {
  TempDir td("man");
  DatasetManifest m;
  m.sample_rate = 48000;
  m.control_names = {"drive", "tone"};
  m.split = "train";
  m.entries.push_back({"a.wav", "b.wav", {0.25, 0.75}});
  save_manifest(m, td.path() / "m.json");
  DatasetManifest back = load_manifest(td.path() / "m.json");
  CHECK(back.sample_rate == 48000);
  CHECK(back.control_names == m.control_names);
  CHECK(back.split == "train");
  REQUIRE(back.entries.size() == 1);
  CHECK(back.entries[0].input_path == "a.wav");
  CHECK(back.entries[0].controls == Vector{0.25, 0.75});

  SUBCASE("unknown keys are rejected") {
    std::ofstream out(td.path() / "bad.json");
    out << R"({"sample_rate": 48000, "controls": [], "samples": [], "bogus": 1})";
    out.close();
    CHECK_THROWS_AS(load_manifest(td.path() / "bad.json"), std::invalid_argument);
  }

  SUBCASE("missing file is a validation error") {
    CHECK_THROWS_AS(load_manifest(td.path() / "nope.json"), std::invalid_argument);
  }
}
