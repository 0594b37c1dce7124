// SPDX-License-Identifier: Apache-2.0
//
// 16-bit PCM mono WAV input/output and fixed-length normalization.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "rawnet/error.hpp"

namespace rawnet {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kDefaultSamples = 64000;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

inline std::int16_t quantize_pcm16(float x) {
  const double v = std::nearbyint(static_cast<double>(x) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

inline float dequantize_pcm16(std::int16_t v) { return static_cast<float>(v) / 32768.0f; }

namespace detail {

inline std::uint32_t read_le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_le16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put_le32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_le16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

/// Decodes an in-memory RIFF/WAVE image. Only 16-bit PCM, mono, 16 kHz is
/// accepted; anything else raises FormatError naming the constraint.
inline Waveform decode_wav(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
  auto fail = [&](const std::string& what) { throw FormatError(origin + ": " + what); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t len = detail::read_le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (len > bytes.size() - body) fail("chunk '" + std::string(reinterpret_cast<const char*>(chunk), 4) + "' truncated");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) fail("fmt chunk too short");
      const unsigned char* f = bytes.data() + body;
      const auto format = detail::read_le16(f);
      const auto channels = detail::read_le16(f + 2);
      const auto rate = detail::read_le32(f + 4);
      const auto bits = detail::read_le16(f + 14);
      if (format != 1) fail("format: expected PCM (1), got " + std::to_string(format));
      if (channels != 1) fail("channels: expected 1 (mono), got " + std::to_string(channels));
      if (rate != kSampleRate) fail("sample rate: expected 16000 Hz, got " + std::to_string(rate));
      if (bits != 16) fail("bits per sample: expected 16, got " + std::to_string(bits));
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt) fail("missing fmt chunk");
  if (!data) fail("missing data chunk");
  if (data_len % 2) fail("data chunk has odd byte count");
  if (data_len == 0) fail("no samples");

  Waveform w;
  w.samples.resize(data_len / 2);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = dequantize_pcm16(static_cast<std::int16_t>(detail::read_le16(data + 2 * i)));
  return w;
}

inline std::vector<unsigned char> encode_wav(const Waveform& w) {
  if (w.sample_rate != kSampleRate) throw ValueError("encode_wav: sample rate must be 16000 Hz");
  const std::uint32_t data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_le32(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_le32(out, 16);
  detail::put_le16(out, 1);
  detail::put_le16(out, 1);
  detail::put_le32(out, kSampleRate);
  detail::put_le32(out, kSampleRate * 2);
  detail::put_le16(out, 2);
  detail::put_le16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_le32(out, data_len);
  for (float x : w.samples) detail::put_le16(out, static_cast<std::uint16_t>(quantize_pcm16(x)));
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline Waveform load_wav(const std::filesystem::path& path) { return decode_wav(read_file_bytes(path), path.string()); }

inline void save_wav(const std::filesystem::path& path, const Waveform& w) { write_file_bytes(path, encode_wav(w)); }

/// Crops from sample 0 when too long; repeats the whole utterance end to end
/// and then crops when too short.
inline std::vector<float> fix_length(const std::vector<float>& samples, std::size_t target = kDefaultSamples) {
  if (samples.empty()) throw ValueError("fix_length: empty waveform");
  if (target == 0) throw ValueError("fix_length: target length must be positive");
  std::vector<float> out(target);
  for (std::size_t i = 0; i < target; i += samples.size()) {
    const std::size_t n = std::min(samples.size(), target - i);
    std::copy_n(samples.begin(), n, out.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return out;
}

inline Waveform fix_length(const Waveform& w, std::size_t target = kDefaultSamples) {
  return Waveform{fix_length(w.samples, target), w.sample_rate};
}

}  // namespace rawnet
