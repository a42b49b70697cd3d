#include "ctsnet/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "ctsnet/common.hpp"

namespace ctsnet {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

uint16_t read_u16(const uint8_t* p) {
  return uint16_t(p[0]) | uint16_t(uint32_t(p[1]) << 8);
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 24));
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
}

}  // namespace

Waveform wav_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw IoError(path + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* hdr = bytes.data() + pos;
    const uint32_t len = read_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (pos + 8 + len > bytes.size())
      throw IoError(path + ": truncated chunk '" +
                    std::string(reinterpret_cast<const char*>(hdr), 4) + "'");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (len < 16) throw IoError(path + ": fmt chunk too short");
      format = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len % 2);  // chunks are word-aligned
  }

  if (!have_fmt) throw IoError(path + ": missing fmt chunk");
  if (data == nullptr) throw IoError(path + ": missing data chunk");
  if (format != 1)
    throw IoError(path + ": unsupported format code " + std::to_string(format) +
                  " (need PCM)");
  if (channels != 1)
    throw IoError(path + ": unsupported channel count " +
                  std::to_string(channels) + " (need mono)");
  if (rate != uint32_t(kSampleRate))
    throw IoError(path + ": unsupported sample rate " + std::to_string(rate) +
                  " Hz (need " + std::to_string(kSampleRate) + " Hz)");
  if (bits != 16)
    throw IoError(path + ": unsupported bit depth " + std::to_string(bits) +
                  " (need 16)");

  Waveform w;
  w.sample_rate = kSampleRate;
  const int64_t n = data_len / 2;
  w.samples.resize(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    const int16_t s = int16_t(read_u16(data + 2 * i));
    w.samples[size_t(i)] = double(s) / 32768.0;
  }
  return w;
}

int64_t wav_write(const std::string& path, const Waveform& w) {
  const uint32_t n = uint32_t(w.samples.size());
  std::vector<uint8_t> out;
  out.reserve(44 + 2 * n);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E'});
  out.insert(out.end(), {'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, uint32_t(w.sample_rate));
  put_u32(out, uint32_t(w.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, 2 * n);

  int64_t clipped = 0;
  for (double v : w.samples) {
    if (!std::isfinite(v)) throw NumericError(path + ": non-finite sample");
    if (v > 1.0) {
      v = 1.0;
      ++clipped;
    } else if (v < -1.0) {
      v = -1.0;
      ++clipped;
    }
    long q = std::lround(v * 32768.0);
    if (q > 32767) q = 32767;
    if (q < -32768) q = -32768;
    put_u16(out, uint16_t(int16_t(q)));
  }
  if (clipped > 0)
    std::fprintf(stderr, "warning: %s: clipped %lld samples to [-1,1]\n",
                 path.c_str(), static_cast<long long>(clipped));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write WAV file: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          std::streamsize(out.size()));
  if (!f) throw IoError("short write to WAV file: " + path);
  return clipped;
}

}  // namespace ctsnet
