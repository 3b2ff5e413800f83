/*
 * Copyright 2026 The PCA Pipeline Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// "PCAK" tensor container: magic bytes 'PCAK', u32 little-endian version (1),
// u8 rank, rank x u32 little-endian dims, then row-major IEEE-754 32-bit
// little-endian floats. Used for clips, masks, features and checkpointed
// matrices.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pca/errors.hpp"
#include "pca/matrix.hpp"

namespace pca {

struct PcakTensor {
  std::vector<uint32_t> dims;
  std::vector<float> data;

  size_t element_count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u32_le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void put_f32_le(std::string& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32_le(out, bits);
}

inline float get_f32_le(const unsigned char* p) {
  uint32_t bits = get_u32_le(p);
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return f;
}

}  // namespace detail

inline constexpr uint32_t kPcakVersion = 1;

/// Serializes a tensor into the container byte layout.
inline std::string pcak_encode(const PcakTensor& t) {
  if (t.dims.empty() || t.dims.size() > 255) {
    throw InvalidInputError("pcak: rank must be in [1, 255]");
  }
  if (t.data.size() != t.element_count()) {
    throw ShapeError("pcak: data size does not match dims");
  }
  std::string out;
  out.reserve(9 + 4 * t.dims.size() + 4 * t.data.size());
  out += "PCAK";
  detail::put_u32_le(out, kPcakVersion);
  out.push_back(static_cast<char>(t.dims.size()));
  for (uint32_t d : t.dims) detail::put_u32_le(out, d);
  for (float f : t.data) detail::put_f32_le(out, f);
  return out;
}

inline PcakTensor pcak_decode(const std::string& bytes, const std::string& what) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 9 || std::memcmp(p, "PCAK", 4) != 0) {
    throw InvalidInputError("pcak: bad magic in " + what);
  }
  uint32_t version = detail::get_u32_le(p + 4);
  if (version != kPcakVersion) {
    throw InvalidInputError("pcak: unsupported version " + std::to_string(version) +
                            " in " + what);
  }
  uint8_t rank = p[8];
  size_t offset = 9;
  if (bytes.size() < offset + 4ull * rank) {
    throw InvalidInputError("pcak: truncated header in " + what);
  }
  PcakTensor t;
  for (uint8_t i = 0; i < rank; ++i) {
    t.dims.push_back(detail::get_u32_le(p + offset));
    offset += 4;
  }
  size_t n = t.element_count();
  if (bytes.size() != offset + 4 * n) {
    throw InvalidInputError("pcak: payload size mismatch in " + what);
  }
  t.data.resize(n);
  for (size_t i = 0; i < n; ++i) {
    t.data[i] = detail::get_f32_le(p + offset + 4 * i);
  }
  return t;
}

inline void pcak_write(const std::filesystem::path& path, const PcakTensor& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw MissingAssetError("pcak: cannot open for write: " + path.string());
  std::string bytes = pcak_encode(t);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw MissingAssetError("pcak: write failed: " + path.string());
}

inline PcakTensor pcak_read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingAssetError("pcak: cannot open: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return pcak_decode(bytes, path.string());
}

/// Rank-2 tensor from a matrix (cast to 32-bit floats).
template <typename T>
PcakTensor pcak_from_matrix(const Mat<T>& m) {
  PcakTensor t;
  t.dims = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
  t.data.reserve(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      t.data.push_back(static_cast<float>(m(i, j)));
    }
  }
  return t;
}

template <typename T>
Mat<T> pcak_to_matrix(const PcakTensor& t, const std::string& what) {
  if (t.dims.size() != 2) {
    throw ShapeError("pcak: expected rank-2 tensor for " + what);
  }
  Mat<T> m(t.dims[0], t.dims[1]);
  for (uint32_t i = 0; i < t.dims[0]; ++i) {
    for (uint32_t j = 0; j < t.dims[1]; ++j) {
      m(i, j) = static_cast<T>(t.data[static_cast<size_t>(i) * t.dims[1] + j]);
    }
  }
  return m;
}

inline PcakTensor pcak_from_vector(const std::vector<float>& v) {
  PcakTensor t;
  t.dims = {static_cast<uint32_t>(v.size())};
  t.data = v;
  return t;
}

inline std::vector<float> pcak_to_vector(const PcakTensor& t, const std::string& what) {
  if (t.dims.size() != 1) {
    throw ShapeError("pcak: expected rank-1 tensor for " + what);
  }
  return t.data;
}

}  // namespace pca
