#include "varnn/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace varnn {

namespace {

uint32_t rd_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
void wr_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}
void wr_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
}
void wr_tag(std::vector<uint8_t>& b, const char* tag) {
  b.insert(b.end(), tag, tag + 4);
}

[[noreturn]] void malformed(const std::filesystem::path& path, size_t offset,
                            const std::string& what) {
  throw std::runtime_error("wav_read: " + path.string() + ": " + what + " at offset " +
                           std::to_string(offset));
}

}  // namespace

WavData wav_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("wav_read: cannot open " + path.string());
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 12) malformed(path, buf.size(), "truncated RIFF header");
  if (std::memcmp(buf.data(), "RIFF", 4) != 0) malformed(path, 0, "expected 'RIFF' tag");
  if (std::memcmp(buf.data() + 8, "WAVE", 4) != 0) malformed(path, 8, "expected 'WAVE' tag");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  bool have_fmt = false;
  size_t data_off = 0, data_len = 0;
  bool have_data = false;

  size_t off = 12;
  while (off + 8 <= buf.size()) {
    const uint8_t* hdr = buf.data() + off;
    const uint32_t chunk_len = rd_u32(hdr + 4);
    const size_t body = off + 8;
    if (body + chunk_len > buf.size()) {
      malformed(path, off,
                "truncated chunk '" + std::string(hdr, hdr + 4) + "' declaring " +
                    std::to_string(chunk_len) + " bytes");
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (chunk_len < 16) malformed(path, off, "fmt chunk too small");
      format = rd_u16(buf.data() + body);
      channels = rd_u16(buf.data() + body + 2);
      sample_rate = rd_u32(buf.data() + body + 4);
      bits = rd_u16(buf.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_off = body;
      data_len = chunk_len;
      have_data = true;
    }
    off = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (off != buf.size() && off + 8 > buf.size() && off < buf.size()) {
    malformed(path, off, "dangling bytes after last chunk");
  }
  if (!have_fmt) malformed(path, buf.size(), "missing fmt chunk");
  if (!have_data) malformed(path, buf.size(), "missing data chunk");
  if (channels != 1) {
    throw std::runtime_error("wav_read: " + path.string() + ": unsupported channel count " +
                             std::to_string(channels) + " (mono only)");
  }

  WavData w;
  w.sample_rate = static_cast<int>(sample_rate);
  const uint8_t* d = buf.data() + data_off;

  if (format == 3 && bits == 32) {
    const size_t count = data_len / 4;
    w.samples.resize(count);
    for (size_t i = 0; i < count; ++i) {
      uint32_t u = rd_u32(d + i * 4);
      float f;
      std::memcpy(&f, &u, 4);
      w.samples[i] = static_cast<double>(f);
    }
  } else if (format == 1 && bits == 16) {
    const size_t count = data_len / 2;
    w.samples.resize(count);
    for (size_t i = 0; i < count; ++i) {
      const int16_t v = static_cast<int16_t>(rd_u16(d + i * 2));
      w.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 1 && bits == 24) {
    const size_t count = data_len / 3;
    w.samples.resize(count);
    for (size_t i = 0; i < count; ++i) {
      int32_t v = static_cast<int32_t>(d[i * 3]) | (static_cast<int32_t>(d[i * 3 + 1]) << 8) |
                  (static_cast<int32_t>(d[i * 3 + 2]) << 16);
      if (v & 0x800000) v |= ~0xFFFFFF;  // sign extend
      w.samples[i] = static_cast<double>(v) / 8388608.0;
    }
  } else {
    throw std::runtime_error("wav_read: " + path.string() + ": unsupported format (tag " +
                             std::to_string(format) + ", " + std::to_string(bits) + "-bit)");
  }
  return w;
}

void wav_write(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate) {
  const uint32_t n = static_cast<uint32_t>(samples.size());
  const uint32_t data_bytes = n * 4;
  std::vector<uint8_t> b;
  b.reserve(58 + data_bytes);
  wr_tag(b, "RIFF");
  wr_u32(b, 4 + (8 + 16) + (8 + 4) + (8 + data_bytes));
  wr_tag(b, "WAVE");
  wr_tag(b, "fmt ");
  wr_u32(b, 16);
  wr_u16(b, 3);  // IEEE float
  wr_u16(b, 1);  // mono
  wr_u32(b, static_cast<uint32_t>(sample_rate));
  wr_u32(b, static_cast<uint32_t>(sample_rate) * 4);
  wr_u16(b, 4);
  wr_u16(b, 32);
  wr_tag(b, "fact");
  wr_u32(b, 4);
  wr_u32(b, n);
  wr_tag(b, "data");
  wr_u32(b, data_bytes);
  for (double s : samples) {
    const float f = static_cast<float>(s);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    wr_u32(b, u);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("wav_write: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw std::runtime_error("wav_write: write failed for " + path.string());
}

}  // namespace varnn
