// Mono RIFF/WAVE I/O: float32 written, float32 and 16/24-bit PCM read.
// Integer samples scale to [-1, 1) by 1/32768 and 1/8388608.
#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace varnn {

struct WavData {
  std::vector<double> samples;
  int sample_rate = 0;
};

// Throws std::runtime_error naming the byte offset on malformed or truncated
// files; std::runtime_error on unsupported layouts (multi-channel, other
// codecs).
WavData wav_read(const std::filesystem::path& path);

// IEEE float32 mono.
void wav_write(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate);

}  // namespace varnn
