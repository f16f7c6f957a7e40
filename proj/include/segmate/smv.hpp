#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segmate/volume.hpp"

namespace segmate {
namespace smv {

// SMV container, bit-exact little-endian layout:
//   magic "SMV1" | u8 kind (0=HU, 1=mask) | u8 reserved | u16 K (masks, else 0)
//   u32 Z, H, W | f32 sz, sy, sx | u32 patient-id length | id bytes
//   payload: i16 voxels (HU) or u8 labels (mask)

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& b, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(b, u);
}

class Cursor {
 public:
  Cursor(const std::vector<std::uint8_t>& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  [[noreturn]] void error(const std::string& msg) const {
    fail(ErrorKind::Format, path_ + " at offset " + std::to_string(pos_) + ": " + msg);
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size())
      fail(ErrorKind::Format, path_ + " at offset " + std::to_string(pos_) + ": truncated, need " +
                                  std::to_string(n) + " bytes, have " +
                                  std::to_string(buf_.size() - pos_));
  }
  const std::vector<std::uint8_t>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Data, "cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& buf) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::Data, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) fail(ErrorKind::Data, "short write to " + path);
}

inline void put_header(std::vector<std::uint8_t>& b, std::uint8_t kind, std::uint16_t k, int z,
                       int h, int w, double sz, double sy, double sx, const std::string& pid) {
  b.insert(b.end(), {'S', 'M', 'V', '1'});
  b.push_back(kind);
  b.push_back(0);
  put_u16(b, k);
  put_u32(b, static_cast<std::uint32_t>(z));
  put_u32(b, static_cast<std::uint32_t>(h));
  put_u32(b, static_cast<std::uint32_t>(w));
  put_f32(b, static_cast<float>(sz));
  put_f32(b, static_cast<float>(sy));
  put_f32(b, static_cast<float>(sx));
  put_u32(b, static_cast<std::uint32_t>(pid.size()));
  b.insert(b.end(), pid.begin(), pid.end());
}

struct Header {
  std::uint8_t kind = 0;
  std::uint16_t k = 0;
  std::uint32_t z = 0, h = 0, w = 0;
  float sz = 0, sy = 0, sx = 0;
  std::string pid;
  std::uint64_t count = 0;
};

inline Header parse_header(Cursor& c) {
  char magic[4];
  c.bytes(magic, 4);
  if (std::memcmp(magic, "SMV1", 4) != 0) c.error("bad magic, not an SMV file");
  Header h;
  h.kind = c.u8();
  if (h.kind > 1) c.error("unknown kind " + std::to_string(h.kind));
  c.u8();  // reserved
  h.k = c.u16();
  h.z = c.u32();
  h.h = c.u32();
  h.w = c.u32();
  if (h.z == 0 || h.h == 0 || h.w == 0) c.error("zero dimension in header");
  h.count = static_cast<std::uint64_t>(h.z) * h.h * h.w;
  if (h.count > (1ull << 31)) c.error("implausible volume size");
  h.sz = c.f32();
  h.sy = c.f32();
  h.sx = c.f32();
  for (float s : {h.sz, h.sy, h.sx})
    if (!(s > 0.0f) || !std::isfinite(s)) c.error("non-positive spacing");
  const std::uint32_t pid_len = c.u32();
  if (pid_len > c.remaining()) c.error("patient id overruns file");
  h.pid.resize(pid_len);
  if (pid_len) c.bytes(h.pid.data(), pid_len);
  return h;
}

}  // namespace detail

inline void write_volume(const std::string& path, const Volume& v) {
  std::vector<std::uint8_t> b;
  detail::put_header(b, 0, 0, v.z, v.h, v.w, v.sz, v.sy, v.sx, v.patient_id);
  const std::size_t n = v.voxels.size();
  b.reserve(b.size() + n * 2);
  for (std::int16_t x : v.voxels) {
    const std::uint16_t u = static_cast<std::uint16_t>(x);
    b.push_back(static_cast<std::uint8_t>(u & 0xff));
    b.push_back(static_cast<std::uint8_t>(u >> 8));
  }
  detail::write_file(path, b);
}

inline void write_mask(const std::string& path, const MaskVolume& m) {
  if (m.num_classes < 1 || m.num_classes > 65535)
    fail(ErrorKind::Data, "mask num_classes out of range");
  std::vector<std::uint8_t> b;
  detail::put_header(b, 1, static_cast<std::uint16_t>(m.num_classes), m.z, m.h, m.w, m.sz, m.sy,
                     m.sx, "");
  b.insert(b.end(), m.labels.begin(), m.labels.end());
  detail::write_file(path, b);
}

inline bool is_mask_file(const std::string& path) {
  auto buf = detail::read_file(path);
  detail::Cursor c(buf, path);
  auto h = detail::parse_header(c);
  return h.kind == 1;
}

inline Volume read_volume(const std::string& path) {
  auto buf = detail::read_file(path);
  detail::Cursor c(buf, path);
  auto h = detail::parse_header(c);
  if (h.kind != 0) c.error("expected an HU volume (kind 0), found kind 1");
  if (h.k != 0) c.error("HU volume must have K=0");
  Volume v;
  v.z = static_cast<int>(h.z);
  v.h = static_cast<int>(h.h);
  v.w = static_cast<int>(h.w);
  v.sz = h.sz;
  v.sy = h.sy;
  v.sx = h.sx;
  v.patient_id = h.pid;
  if (c.remaining() != h.count * 2)
    c.error("payload size mismatch: header claims " + std::to_string(h.count * 2) +
            " bytes, file has " + std::to_string(c.remaining()));
  v.voxels.resize(h.count);
  for (std::uint64_t i = 0; i < h.count; ++i) {
    const std::uint8_t lo = c.u8(), hi = c.u8();
    v.voxels[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo) |
                                            (static_cast<std::uint16_t>(hi) << 8));
  }
  return v;
}

inline MaskVolume read_mask(const std::string& path) {
  auto buf = detail::read_file(path);
  detail::Cursor c(buf, path);
  auto h = detail::parse_header(c);
  if (h.kind != 1) c.error("expected a mask (kind 1), found kind 0");
  if (h.k == 0) c.error("mask must declare K > 0");
  MaskVolume m;
  m.z = static_cast<int>(h.z);
  m.h = static_cast<int>(h.h);
  m.w = static_cast<int>(h.w);
  m.num_classes = h.k;
  m.sz = h.sz;
  m.sy = h.sy;
  m.sx = h.sx;
  if (c.remaining() != h.count)
    c.error("payload size mismatch: header claims " + std::to_string(h.count) +
            " bytes, file has " + std::to_string(c.remaining()));
  m.labels.resize(h.count);
  c.bytes(m.labels.data(), h.count);
  for (std::uint64_t i = 0; i < h.count; ++i)
    if (m.labels[i] >= h.k)
      fail(ErrorKind::Format, path + ": label " + std::to_string(m.labels[i]) +
                                  " >= K=" + std::to_string(h.k) + " at voxel " +
                                  std::to_string(i));
  return m;
}

}  // namespace smv
}  // namespace segmate
