// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nsvae/common.hpp"
#include "nsvae/spectral.hpp"

namespace nsvae {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(static_cast<std::uint16_t>(p[0]) |
                                    (static_cast<std::uint16_t>(p[1]) << 8));
}

void wr_u32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void wr_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

TimeSignal read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "read_wav: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  require(bytes.size() >= 44, "read_wav: truncated file " + path);
  require(std::memcmp(bytes.data(), "RIFF", 4) == 0 && std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          "read_wav: not a RIFF/WAVE file: " + path);

  std::uint16_t fmt = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* tag = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t len = rd_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) break;
    if (std::memcmp(tag, "fmt ", 4) == 0 && len >= 16) {
      fmt = rd_u16(bytes.data() + body);
      channels = rd_u16(bytes.data() + body + 2);
      rate = rd_u32(bytes.data() + body + 4);
      bits = rd_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data_off = body;
      data_len = len;
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }
  require(have_fmt && data_off != 0, "read_wav: missing fmt/data chunk in " + path);
  require(channels == 1, "read_wav: only mono supported: " + path);
  require(rate == 16000, "read_wav: only 16 kHz supported: " + path);

  TimeSignal out;
  out.sample_rate_hz = static_cast<int>(rate);
  if (fmt == kFormatPcm && bits == 16) {
    const std::size_t n = data_len / 2;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint16_t u = rd_u16(bytes.data() + data_off + 2 * i);
      const std::int16_t s = static_cast<std::int16_t>(u);
      out.samples[i] = static_cast<double>(s) / 32768.0;
    }
  } else if (fmt == kFormatFloat && bits == 32) {
    const std::size_t n = data_len / 4;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t u = rd_u32(bytes.data() + data_off + 4 * i);
      float x;
      std::memcpy(&x, &u, 4);
      out.samples[i] = static_cast<double>(x);
    }
  } else {
    throw InvalidInput("read_wav: unsupported format (want PCM16 or float32): " + path);
  }
  require(!out.samples.empty(), "read_wav: empty data chunk in " + path);
  return out;
}

void write_wav(const std::string& path, const TimeSignal& signal, bool as_float) {
  require(!signal.samples.empty(), "write_wav: empty signal for " + path);
  require(signal.sample_rate_hz == 16000, "write_wav: only 16 kHz supported: " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(signal.samples.size());
  const std::uint16_t bytes_per = as_float ? 4 : 2;
  const std::uint32_t data_len = n * bytes_per;

  std::string s;
  s.reserve(64 + data_len);
  s += "RIFF";
  const std::uint32_t fact_len = as_float ? 12 : 0;
  wr_u32(s, 4 + 24 + fact_len + 8 + data_len);
  s += "WAVE";
  s += "fmt ";
  wr_u32(s, 16);
  wr_u16(s, as_float ? kFormatFloat : kFormatPcm);
  wr_u16(s, 1);
  wr_u32(s, 16000);
  wr_u32(s, 16000u * bytes_per);
  wr_u16(s, bytes_per);
  wr_u16(s, static_cast<std::uint16_t>(8 * bytes_per));
  if (as_float) {
    s += "fact";
    wr_u32(s, 4);
    wr_u32(s, n);
  }
  s += "data";
  wr_u32(s, data_len);
  if (as_float) {
    for (double x : signal.samples) {
      const float fx = static_cast<float>(x);
      std::uint32_t u;
      std::memcpy(&u, &fx, 4);
      wr_u32(s, u);
    }
  } else {
    for (double x : signal.samples) {
      const long q = std::clamp(std::lrint(x * 32768.0), -32768L, 32767L);
      wr_u16(s, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "write_wav: cannot open " + path);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  require(f.good(), "write_wav: write failed for " + path);
}

}  // namespace nsvae
