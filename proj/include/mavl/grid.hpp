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

// Portable 2-D grids on disk.
//
//   "MAVLGRID 1 <H> <W> <dtype>\n" followed by H*W little-endian values in
//   row-major order. dtype is one of u8, i32, f32, f64.

#pragma once

#include <algorithm>
#include <bit>
#include <cstring>
#include <type_traits>
#include <string>
#include <vector>

#include "mavl/common.hpp"

namespace mavl {

template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<size_t>(h) * static_cast<size_t>(w), fill) {}

  T& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
  const T& at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return data.size(); }

  bool operator==(const Grid&) const = default;
};

namespace detail {

template <typename T>
constexpr const char* grid_dtype() {
  if constexpr (std::is_same_v<T, uint8_t>) return "u8";
  else if constexpr (std::is_same_v<T, int32_t>) return "i32";
  else if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else static_assert(sizeof(T) == 0, "unsupported grid dtype");
}

static_assert(std::endian::native == std::endian::little,
              "grid and checkpoint I/O assume a little-endian host");

}  // namespace detail

template <typename T>
std::string encode_grid(const Grid<T>& g) {
  std::string out = "MAVLGRID 1 " + std::to_string(g.height) + " " + std::to_string(g.width) +
                    " " + detail::grid_dtype<T>() + "\n";
  const size_t header = out.size();
  out.resize(header + g.data.size() * sizeof(T));
  if (!g.data.empty()) std::memcpy(out.data() + header, g.data.data(), g.data.size() * sizeof(T));
  return out;
}

template <typename T>
Grid<T> decode_grid(std::string_view bytes, const std::string& where = "grid") {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw ParseError(where + ": missing grid header");
  std::istringstream hs{std::string(bytes.substr(0, nl))};
  std::string magic, dtype;
  int version = 0, h = -1, w = -1;
  hs >> magic >> version >> h >> w >> dtype;
  if (magic != "MAVLGRID" || version != 1) throw ParseError(where + ": bad grid magic");
  if (dtype != detail::grid_dtype<T>())
    throw ParseError(where + ": dtype " + dtype + ", expected " + detail::grid_dtype<T>());
  if (h < 0 || w < 0) throw ParseError(where + ": bad grid shape");
  Grid<T> g(h, w);
  const size_t need = g.data.size() * sizeof(T);
  if (bytes.size() - nl - 1 != need) throw ParseError(where + ": grid payload size mismatch");
  if (need) std::memcpy(g.data.data(), bytes.data() + nl + 1, need);
  return g;
}

template <typename T>
void save_grid(const Grid<T>& g, const std::filesystem::path& path) {
  write_file_atomic(path, encode_grid(g));
}

template <typename T>
Grid<T> load_grid(const std::filesystem::path& path) {
  return decode_grid<T>(read_file(path), path.string());
}

// Binary greyscale PGM, values clamped from [0, 1].
inline std::string encode_pgm(const Grid<float>& g) {
  std::string out = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n255\n";
  for (float v : g.data) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  return out;
}

}  // namespace mavl
