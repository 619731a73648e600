#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgquant/tensor.hpp"

namespace dgquant {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
constexpr uint8_t dtype_tag() {
  if constexpr (std::is_same_v<T, float>) return 1;
  else if constexpr (std::is_same_v<T, double>) return 2;
  else if constexpr (std::is_same_v<T, int32_t>) return 3;
  else if constexpr (std::is_same_v<T, int64_t>) return 4;
  else if constexpr (std::is_same_v<T, uint8_t>) return 5;
  else static_assert(sizeof(T) == 0, "unsupported dtype");
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

inline uint32_t get_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void encode_le(const T* src, int64_t n, std::vector<uint8_t>& out) {
  out.resize(static_cast<size_t>(n) * sizeof(T));
  for (int64_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    std::memcpy(&bits, &src[i], sizeof(T));
    for (size_t b = 0; b < sizeof(T); ++b)
      out[static_cast<size_t>(i) * sizeof(T) + b] = static_cast<uint8_t>(bits >> (8 * b));
  }
}

template <typename T>
void decode_le(const uint8_t* src, int64_t n, T* dst) {
  for (int64_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (size_t b = 0; b < sizeof(T); ++b)
      bits |= static_cast<uint64_t>(src[static_cast<size_t>(i) * sizeof(T) + b]) << (8 * b);
    std::memcpy(&dst[i], &bits, sizeof(T));
  }
}

}  // namespace detail

/// One tensor in a DGQ1 container.
struct ContainerEntry {
  std::string name;
  uint8_t dtype = 0;
  std::vector<int64_t> dims;
  std::vector<uint8_t> payload;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
  }
};

/// Versioned binary tensor container: magic "DGQ1", manifest of
/// (name, dtype, shape, byte offset) per tensor, then raw little-endian
/// payloads. Used for checkpoints and codebook dumps.
class Container {
 public:
  template <typename T>
  void add_tensor(const std::string& name, const Tensor<T>& t) {
    ContainerEntry e;
    e.name = name;
    e.dtype = detail::dtype_tag<T>();
    e.dims = t.dims();
    detail::encode_le(t.data(), t.numel(), e.payload);
    entries_.push_back(std::move(e));
  }

  void add_string(const std::string& name, const std::string& text) {
    ContainerEntry e;
    e.name = name;
    e.dtype = detail::dtype_tag<uint8_t>();
    e.dims = {static_cast<int64_t>(text.size())};
    e.payload.assign(text.begin(), text.end());
    entries_.push_back(std::move(e));
  }

  bool has(const std::string& name) const { return find(name) != nullptr; }

  template <typename T>
  Tensor<T> get_tensor(const std::string& name) const {
    const ContainerEntry* e = find(name);
    if (!e) throw CheckpointError("container: missing tensor '" + name + "'");
    if (e->dtype != detail::dtype_tag<T>())
      throw CheckpointError("container: dtype mismatch for '" + name + "'");
    Tensor<T> t(e->dims);
    detail::decode_le(e->payload.data(), t.numel(), t.data());
    return t;
  }

  std::string get_string(const std::string& name) const {
    const ContainerEntry* e = find(name);
    if (!e) throw CheckpointError("container: missing entry '" + name + "'");
    return std::string(e->payload.begin(), e->payload.end());
  }

  const std::vector<ContainerEntry>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::vector<uint8_t> manifest;
    size_t manifest_size = 0;
    for (const ContainerEntry& e : entries_)
      manifest_size += 4 + e.name.size() + 1 + 1 + 8 * e.dims.size() + 8;
    uint64_t offset = 4 + 8 + manifest_size;
    for (const ContainerEntry& e : entries_) {
      detail::put_u32(manifest, static_cast<uint32_t>(e.name.size()));
      manifest.insert(manifest.end(), e.name.begin(), e.name.end());
      manifest.push_back(e.dtype);
      manifest.push_back(static_cast<uint8_t>(e.dims.size()));
      for (int64_t d : e.dims) detail::put_u64(manifest, static_cast<uint64_t>(d));
      detail::put_u64(manifest, offset);
      offset += e.payload.size();
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("container: cannot write " + path);
    out.write("DGQ1", 4);
    std::vector<uint8_t> count;
    detail::put_u64(count, entries_.size());
    out.write(reinterpret_cast<const char*>(count.data()), 8);
    out.write(reinterpret_cast<const char*>(manifest.data()),
              static_cast<std::streamsize>(manifest.size()));
    for (const ContainerEntry& e : entries_)
      out.write(reinterpret_cast<const char*>(e.payload.data()),
                static_cast<std::streamsize>(e.payload.size()));
    if (!out) throw CheckpointError("container: write failed for " + path);
  }

  static Container load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("container: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "DGQ1", 4) != 0)
      throw CheckpointError("container: " + path + " is not a DGQ1 file");
    const uint64_t count = detail::get_u64(bytes.data() + 4);
    size_t pos = 12;
    Container c;
    struct Pending {
      ContainerEntry entry;
      uint64_t offset;
    };
    std::vector<Pending> pending;
    for (uint64_t i = 0; i < count; ++i) {
      if (pos + 4 > bytes.size()) throw CheckpointError("container: truncated manifest");
      const uint32_t name_len = detail::get_u32(bytes.data() + pos);
      pos += 4;
      if (pos + name_len + 2 > bytes.size()) throw CheckpointError("container: truncated manifest");
      ContainerEntry e;
      e.name.assign(bytes.begin() + pos, bytes.begin() + pos + name_len);
      pos += name_len;
      e.dtype = bytes[pos++];
      const uint8_t rank = bytes[pos++];
      if (pos + 8 * rank + 8 > bytes.size()) throw CheckpointError("container: truncated manifest");
      for (uint8_t r = 0; r < rank; ++r) {
        e.dims.push_back(static_cast<int64_t>(detail::get_u64(bytes.data() + pos)));
        pos += 8;
      }
      const uint64_t offset = detail::get_u64(bytes.data() + pos);
      pos += 8;
      pending.push_back({std::move(e), offset});
    }
    for (Pending& p : pending) {
      const size_t elem = p.entry.dtype == 2 || p.entry.dtype == 4 ? 8
                          : p.entry.dtype == 5                     ? 1
                                                                   : 4;
      const size_t len = static_cast<size_t>(p.entry.numel()) * elem;
      if (p.offset + len > bytes.size())
        throw CheckpointError("container: payload for '" + p.entry.name + "' out of bounds");
      p.entry.payload.assign(bytes.begin() + p.offset, bytes.begin() + p.offset + len);
      c.entries_.push_back(std::move(p.entry));
    }
    return c;
  }

 private:
  const ContainerEntry* find(const std::string& name) const {
    for (const ContainerEntry& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::vector<ContainerEntry> entries_;
};

}  // namespace dgquant
