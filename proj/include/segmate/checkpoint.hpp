#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "segmate/model.hpp"

namespace segmate {
namespace checkpoint {

// Checkpoint container, little-endian:
//   magic "SMC1" | u32 config length | config JSON | u32 tensor count
//   per tensor: u32 name length | name | u32 ndim | u32 dims... | f32 payload
//   trailing u64 FNV-1a checksum over everything before it

namespace detail {

inline std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct Cursor {
  const std::vector<std::uint8_t>& buf;
  std::string path;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      fail(ErrorKind::Format,
           path + " at offset " + std::to_string(pos) + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  }
};

}  // namespace detail

struct NamedTensorData {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Contents {
  std::string config_json;
  std::vector<NamedTensorData> tensors;
};

inline void save(const std::string& path, const std::string& config_json,
                 const ParamList<float>& tensors) {
  std::vector<std::uint8_t> b;
  b.insert(b.end(), {'S', 'M', 'C', '1'});
  detail::put_u32(b, static_cast<std::uint32_t>(config_json.size()));
  b.insert(b.end(), config_json.begin(), config_json.end());
  detail::put_u32(b, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(b, static_cast<std::uint32_t>(t.name.size()));
    b.insert(b.end(), t.name.begin(), t.name.end());
    detail::put_u32(b, static_cast<std::uint32_t>(t.tensor.ndim()));
    for (int d : t.tensor.shape()) detail::put_u32(b, static_cast<std::uint32_t>(d));
    const auto data = t.tensor.data();
    const std::size_t off = b.size();
    b.resize(off + data.size() * 4);
    std::memcpy(b.data() + off, data.data(), data.size() * 4);
  }
  detail::put_u64(b, detail::fnv1a(b.data(), b.size()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::Data, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) fail(ErrorKind::Data, "short write to " + path);
}

inline Contents load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Data, "cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  if (buf.size() < 12) fail(ErrorKind::Format, path + ": truncated checkpoint");
  const std::uint64_t stored = [&] {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(buf[buf.size() - 8 + i]) << (8 * i);
    return v;
  }();
  if (detail::fnv1a(buf.data(), buf.size() - 8) != stored)
    fail(ErrorKind::Format, path + ": checksum mismatch, checkpoint corrupted");

  detail::Cursor c{buf, path};
  char magic[4];
  c.bytes(magic, 4);
  if (std::memcmp(magic, "SMC1", 4) != 0) fail(ErrorKind::Format, path + ": bad magic");
  Contents out;
  const std::uint32_t clen = c.u32();
  c.need(clen);
  out.config_json.assign(reinterpret_cast<const char*>(buf.data() + c.pos), clen);
  c.pos += clen;
  const std::uint32_t count = c.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensorData t;
    const std::uint32_t nlen = c.u32();
    c.need(nlen);
    t.name.assign(reinterpret_cast<const char*>(buf.data() + c.pos), nlen);
    c.pos += nlen;
    const std::uint32_t nd = c.u32();
    if (nd > 8) fail(ErrorKind::Format, path + ": implausible tensor rank");
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
      const std::uint32_t dim = c.u32();
      if (dim == 0 || dim > (1u << 28)) fail(ErrorKind::Format, path + ": bad dimension");
      t.shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    t.data.resize(static_cast<std::size_t>(n));
    c.bytes(t.data.data(), static_cast<std::size_t>(n) * 4);
    out.tensors.push_back(std::move(t));
  }
  return out;
}

// Copy checkpoint tensors into a built network; every network tensor must be
// present with a matching shape. Reports the first mismatch by name.
inline void apply(const Contents& ckpt, Network<float>& net) {
  for (auto& p : net.named_tensors()) {
    const NamedTensorData* found = nullptr;
    for (const auto& t : ckpt.tensors)
      if (t.name == p.name) {
        found = &t;
        break;
      }
    if (!found)
      fail(ErrorKind::Data, "checkpoint missing tensor '" + p.name + "'");
    if (found->shape != p.tensor.shape())
      fail(ErrorKind::Data, "checkpoint tensor '" + p.name + "' has shape " +
                                shape_str(found->shape) + ", network expects " +
                                shape_str(p.tensor.shape()));
    std::copy(found->data.begin(), found->data.end(), p.tensor.data().begin());
  }
}

}  // namespace checkpoint
}  // namespace segmate
