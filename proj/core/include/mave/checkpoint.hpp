#pragma once

// Checkpoint container: named float32 tensors in a flat binary file.
//
// Layout (all integers little-endian):
//   8 bytes  magic "MAVECKPT"
//   u32      format version (1)
//   u32      tensor count
//   per tensor:
//     u32      name length, then that many name bytes
//     u32      rank, then rank u32 dims
//     f32[...] row-major data

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mave/errors.hpp"
#include "mave/tensor.hpp"

namespace mave {

namespace ckpt_detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw io_error("checkpoint: truncated file");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

inline float get_f32(std::istream& is) {
  uint32_t u = get_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace ckpt_detail

inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'V', 'E', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("checkpoint: cannot open for write: " + path);
  os.write(kCheckpointMagic, 8);
  ckpt_detail::put_u32(os, kCheckpointVersion);
  ckpt_detail::put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    ckpt_detail::put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    ckpt_detail::put_u32(os, static_cast<uint32_t>(t->rank()));
    for (int i = 0; i < t->rank(); ++i)
      ckpt_detail::put_u32(os, static_cast<uint32_t>(t->dim(i)));
    const T* p = t->ptr();
    for (int64_t i = 0; i < t->numel(); ++i)
      ckpt_detail::put_f32(os, static_cast<float>(p[i]));
  }
  if (!os) throw io_error("checkpoint: write failed: " + path);
}

inline std::map<std::string, Tensor<float>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw io_error("checkpoint: bad magic: " + path);
  uint32_t version = ckpt_detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw io_error("checkpoint: unsupported version " + std::to_string(version));
  uint32_t count = ckpt_detail::get_u32(is);
  std::map<std::string, Tensor<float>> out;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = ckpt_detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw io_error("checkpoint: truncated name");
    uint32_t rank = ckpt_detail::get_u32(is);
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r)
      shape[r] = static_cast<int64_t>(ckpt_detail::get_u32(is));
    Tensor<float> t(shape);
    float* p = t.mut();
    for (int64_t j = 0; j < t.numel(); ++j) p[j] = ckpt_detail::get_f32(is);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

// Copy checkpoint contents into live parameter tensors, validating that every
// parameter is present with a matching shape.
template <typename T>
void assign_from_checkpoint(const std::map<std::string, Tensor<float>>& loaded,
                            const std::vector<std::pair<std::string, Tensor<T>*>>& params) {
  for (const auto& [name, t] : params) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw data_error("checkpoint: missing tensor: " + name);
    if (it->second.shape != t->shape)
      throw data_error("checkpoint: shape mismatch for " + name);
    const float* src = it->second.ptr();
    T* dst = t->mut();
    for (int64_t i = 0; i < t->numel(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

}  // namespace mave
