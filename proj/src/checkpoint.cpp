#include "ctsnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "ctsnet/common.hpp"

namespace ctsnet {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'S', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a(const uint8_t* p, size_t n) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
  const uint8_t* b = static_cast<const uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

void put_str(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  put_bytes(out, s.data(), s.size());
}

void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::vector<uint8_t>& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  void skip(size_t n) {
    need(n);
    pos_ += n;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(buf_[pos_ + size_t(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  size_t pos() const { return pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size())
      throw IoError(path_ + ": checkpoint is corrupt (truncated body)");
  }
  const std::vector<uint8_t>& buf_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

void raw_checkpoint_write(const std::string& path, const RawCheckpoint& ck) {
  std::vector<uint8_t> out;
  put_bytes(out, kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_str(out, ck.kind);
  put_str(out, ck.config_text);
  put_str(out, ck.provenance_text);
  put_u32(out, uint32_t(ck.params.size()));
  for (const auto& p : ck.params) {
    put_str(out, p.name);
    put_u32(out, uint32_t(p.dims.size()));
    for (uint32_t d : p.dims) put_u32(out, d);
    put_u32(out, uint32_t(p.values.size()));
    for (float v : p.values) put_f32(out, v);
  }
  put_u64(out, fnv1a(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          std::streamsize(out.size()));
  if (!f) throw IoError("short write to checkpoint: " + path);
}

RawCheckpoint raw_checkpoint_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < sizeof kMagic + 4 + 8)
    throw IoError(path + ": checkpoint is corrupt (too short)");
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    throw IoError(path + ": not a checkpoint file (bad magic)");

  uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= uint64_t(buf[buf.size() - 8 + size_t(i)]) << (8 * i);
  if (fnv1a(buf.data(), buf.size() - 8) != stored)
    throw IoError(path + ": checkpoint is corrupt (digest mismatch)");

  Reader r(buf, path);
  r.skip(sizeof kMagic);
  const uint32_t version = r.u32();
  if (version != kVersion)
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version) + " (this build reads " +
                  std::to_string(kVersion) + ")");

  RawCheckpoint ck;
  ck.kind = r.str();
  ck.config_text = r.str();
  ck.provenance_text = r.str();
  const uint32_t nparams = r.u32();
  ck.params.reserve(nparams);
  for (uint32_t i = 0; i < nparams; ++i) {
    RawCheckpoint::Param p;
    p.name = r.str();
    const uint32_t ndim = r.u32();
    p.dims.reserve(ndim);
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      p.dims.push_back(r.u32());
      numel *= p.dims.back();
    }
    const uint32_t count = r.u32();
    if (int64_t(count) != numel)
      throw IoError(path + ": parameter '" + p.name +
                    "' value count does not match its shape");
    p.values.resize(count);
    for (uint32_t v = 0; v < count; ++v) p.values[v] = r.f32();
    ck.params.push_back(std::move(p));
  }
  if (r.pos() != buf.size() - 8)
    throw IoError(path + ": checkpoint has trailing garbage");
  return ck;
}

}  // namespace ctsnet
