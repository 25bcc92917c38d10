// Copyright 2026 The MAVL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary checkpoint container. All integers little-endian.
//
//   "MAVLCKPT"            8 bytes
//   version               u32 (= 1)
//   meta length, meta     u64, UTF-8 JSON (config echo and scalar state)
//   array count           u32
//   per array:
//     name length, name   u32, bytes
//     dtype               u32 (0 = f32, 1 = f64)
//     rows, cols          u64, u64
//     data                rows·cols values, row-major
//   checksum              u64 FNV-1a over every preceding byte
//
// A file that fails any structural check, or whose checksum disagrees, is
// reported as CorruptCheckpoint.

#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mavl/common.hpp"

namespace mavl {

struct NamedArray {
  std::string name;
  uint32_t dtype = 0;
  uint64_t rows = 0, cols = 0;
  std::string bytes;

  bool operator==(const NamedArray&) const = default;
};

template <typename T>
constexpr uint32_t array_dtype() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0u : 1u;
}

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  template <typename T>
  void put(const std::string& name, const Matrix<T>& m) {
    NamedArray a;
    a.name = name;
    a.dtype = array_dtype<T>();
    a.rows = static_cast<uint64_t>(m.rows());
    a.cols = static_cast<uint64_t>(m.cols());
    a.bytes.assign(reinterpret_cast<const char*>(m.data()), sizeof(T) * static_cast<size_t>(m.size()));
    arrays.push_back(std::move(a));
  }

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }

  template <typename T>
  Matrix<T> get(const std::string& name) const {
    const auto* a = find(name);
    if (!a) throw CorruptCheckpoint("checkpoint has no array \"" + name + "\"");
    const auto rows = static_cast<Eigen::Index>(a->rows), cols = static_cast<Eigen::Index>(a->cols);
    if (a->dtype == array_dtype<T>()) {
      Matrix<T> m(rows, cols);
      std::memcpy(m.data(), a->bytes.data(), a->bytes.size());
      return m;
    }
    using Other = std::conditional_t<std::is_same_v<T, float>, double, float>;
    Matrix<Other> m(rows, cols);
    std::memcpy(m.data(), a->bytes.data(), a->bytes.size());
    return m.template cast<T>();
  }

  // Copies into an existing matrix, insisting on the stored shape.
  template <typename T>
  void get_into(const std::string& name, Matrix<T>& m) const {
    auto v = get<T>(name);
    if (v.rows() != m.rows() || v.cols() != m.cols())
      throw CorruptCheckpoint("array \"" + name + "\" has shape " + std::to_string(v.rows()) + "x" +
                              std::to_string(v.cols()) + ", expected " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()));
    m = std::move(v);
  }
};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  static_assert(std::endian::native == std::endian::little);
  out.append(reinterpret_cast<const char*>(&v), sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view s) : s_(s) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, s_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(uint64_t n) {
    need(n);
    std::string out(s_.substr(pos_, n));
    pos_ += n;
    return out;
  }
  size_t pos() const { return pos_; }

 private:
  void need(uint64_t n) const {
    if (n > s_.size() - pos_) throw CorruptCheckpoint("checkpoint truncated");
  }
  std::string_view s_;
  size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "MAVLCKPT";
inline constexpr uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, 8);
  detail::put_le<uint32_t>(out, kCheckpointVersion);
  const std::string meta = ck.meta.dump();
  detail::put_le<uint64_t>(out, meta.size());
  out += meta;
  detail::put_le<uint32_t>(out, static_cast<uint32_t>(ck.arrays.size()));
  for (const auto& a : ck.arrays) {
    detail::put_le<uint32_t>(out, static_cast<uint32_t>(a.name.size()));
    out += a.name;
    detail::put_le<uint32_t>(out, a.dtype);
    detail::put_le<uint64_t>(out, a.rows);
    detail::put_le<uint64_t>(out, a.cols);
    out += a.bytes;
  }
  detail::put_le<uint64_t>(out, fnv1a(out));
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8 + 4 + 8 + 4 + 8 || bytes.substr(0, 8) != std::string_view(kCheckpointMagic, 8))
    throw CorruptCheckpoint("not a checkpoint file");
  uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a(bytes.substr(0, bytes.size() - 8))) throw CorruptCheckpoint("checkpoint checksum mismatch");
  detail::Reader r(bytes.substr(0, bytes.size() - 8));
  r.bytes(8);
  const auto version = r.get<uint32_t>();
  if (version != kCheckpointVersion)
    throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(r.bytes(r.get<uint64_t>()));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = r.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.bytes(r.get<uint32_t>());
    a.dtype = r.get<uint32_t>();
    if (a.dtype > 1) throw CorruptCheckpoint("array \"" + a.name + "\" has unknown dtype");
    a.rows = r.get<uint64_t>();
    a.cols = r.get<uint64_t>();
    const uint64_t width = a.dtype == 0 ? 4 : 8;
    if (a.cols != 0 && a.rows > (uint64_t{1} << 40) / a.cols) throw CorruptCheckpoint("array too large");
    a.bytes = r.bytes(a.rows * a.cols * width);
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no checkpoint at " + path.string());
  return decode_checkpoint(read_file(path));
}

}  // namespace mavl
