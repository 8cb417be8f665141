// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <utility>

#include "vsr/tensor.hpp"

namespace vsr {

// Self-describing binary tensor container.
//
// Layout (all integers little-endian):
//   magic   u32  'VSRT'
//   version u32  currently 1
//   count   u64  number of tensor records
// then per record:
//   name_len u32, name bytes (UTF-8)
//   dtype    u8  (0 = f32, 1 = f64)
//   ndim     u32, dims i64[ndim]
//   payload  IEEE-754 values, little-endian, row-major
//
// Round trips are bit-exact: payload bytes are copied verbatim.
namespace ckpt {

constexpr std::uint32_t kMagic = 0x54525356;  // "VSRT"
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated while reading header field");
  return v;
}

template <typename S>
constexpr std::uint8_t dtype_tag() {
  if constexpr (std::is_same_v<S, float>) return 0;
  else return 1;
}

}  // namespace ckpt

template <typename S>
using NamedTensors = std::vector<std::pair<std::string, TensorPtr<S>>>;

template <typename S>
void save_checkpoint(const std::string& path, const NamedTensors<S>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  ckpt::write_pod<std::uint32_t>(os, ckpt::kMagic);
  ckpt::write_pod<std::uint32_t>(os, ckpt::kVersion);
  ckpt::write_pod<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    ckpt::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    ckpt::write_pod<std::uint8_t>(os, ckpt::dtype_tag<S>());
    ckpt::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t->shape.size()));
    for (auto d : t->shape) ckpt::write_pod<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t->data.data()),
             static_cast<std::streamsize>(t->data.size() * sizeof(S)));
  }
  if (!os) throw IoError("write failure on checkpoint: " + path);
}

template <typename S>
NamedTensors<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint for reading: " + path);
  if (ckpt::read_pod<std::uint32_t>(is) != ckpt::kMagic)
    throw IoError("not a checkpoint file (bad magic): " + path);
  const auto version = ckpt::read_pod<std::uint32_t>(is);
  if (version != ckpt::kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " in " + path);
  const auto count = ckpt::read_pod<std::uint64_t>(is);
  NamedTensors<S> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = ckpt::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto tag = ckpt::read_pod<std::uint8_t>(is);
    if (tag != ckpt::dtype_tag<S>())
      throw IoError("checkpoint dtype tag " + std::to_string(int(tag)) +
                    " does not match requested scalar type in " + path);
    const auto ndim = ckpt::read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = ckpt::read_pod<std::int64_t>(is);
    auto t = make_tensor<S>(shape);
    is.read(reinterpret_cast<char*>(t->data.data()),
            static_cast<std::streamsize>(t->data.size() * sizeof(S)));
    if (!is) throw IoError("checkpoint truncated inside tensor '" + name + "'");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace vsr
