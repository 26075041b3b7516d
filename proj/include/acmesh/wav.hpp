#pragma once

// RIFF/WAVE, PCM 16-bit signed little-endian, mono. Samples are scaled by
// 32767 and rounded to nearest; values outside [-1, 1] are clipped.

#include <acmesh/dsp.hpp>
#include <acmesh/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace acmesh::wav {

namespace detail {
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}
inline std::uint16_t get_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | b[at + 1] << 8);
}
}  // namespace detail

inline std::int16_t quantize(double v) {
  const double c = std::clamp(v, -1.0, 1.0);
  return static_cast<std::int16_t>(std::lround(c * 32767.0));
}

inline std::vector<std::uint8_t> encode(const dsp::SampleBuffer& buf) {
  const auto rate = static_cast<std::uint32_t>(std::lround(buf.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(buf.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, rate);
  detail::put_u32(out, rate * 2);
  detail::put_u16(out, 2);
  detail::put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32(out, data_bytes);
  for (double v : buf.samples) detail::put_u16(out, static_cast<std::uint16_t>(quantize(v)));
  return out;
}

inline dsp::SampleBuffer decode(const std::vector<std::uint8_t>& b) {
  if (b.size() < 12 || std::string(b.begin(), b.begin() + 4) != "RIFF" ||
      std::string(b.begin() + 8, b.begin() + 12) != "WAVE") {
    throw WavError("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= b.size()) {
    const std::string id(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + 4));
    const std::uint32_t size = detail::get_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16 || body + 16 > b.size()) throw WavError("short fmt chunk");
      format = detail::get_u16(b, body);
      channels = detail::get_u16(b, body + 2);
      rate = detail::get_u32(b, body + 4);
      bits = detail::get_u16(b, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw WavError("data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw WavError("only 16-bit PCM is supported");
      if (channels == 0) throw WavError("zero channels");
      const std::size_t avail = std::min<std::size_t>(size, b.size() - body);
      const std::size_t frames = avail / (2u * channels);
      dsp::SampleBuffer out;
      out.sample_rate = rate;
      out.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        const auto raw = static_cast<std::int16_t>(detail::get_u16(b, body + 2 * channels * i));
        out.samples[i] = raw / 32767.0;
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw WavError("no data chunk");
}

inline void write_file(const std::string& path, const dsp::SampleBuffer& buf) {
  const auto bytes = encode(buf);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw WavError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw WavError("write failed for '" + path + "'");
}

inline dsp::SampleBuffer read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw WavError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace acmesh::wav
