#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "echomap/autodiff/tensor.hpp"

// Array persistence shared by the dataset and checkpoint containers: each
// array is a little-endian blob of [dtype u32][rank u32][dims u32...] followed
// by the payload. Datasets store f32, checkpoints f64 (bit-exact round trips).

static_assert(std::endian::native == std::endian::little,
              "archive containers assume a little-endian host");

namespace echomap::pipeline {

inline constexpr std::uint32_t kDtypeF32 = 0;
inline constexpr std::uint32_t kDtypeF64 = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw std::runtime_error("blob: truncated header");
  return v;
}

}  // namespace detail

inline void write_blob(std::ostream& os, const ad::NdArray& a, std::uint32_t dtype) {
  if (dtype != kDtypeF32 && dtype != kDtypeF64) throw std::invalid_argument("blob: bad dtype");
  detail::put_u32(os, dtype);
  detail::put_u32(os, static_cast<std::uint32_t>(a.shape.size()));
  for (int d : a.shape) {
    if (d < 0) throw std::invalid_argument("blob: negative dim");
    detail::put_u32(os, static_cast<std::uint32_t>(d));
  }
  if (dtype == kDtypeF64) {
    os.write(reinterpret_cast<const char*>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  } else {
    for (double v : a.data) {
      const float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!os) throw std::runtime_error("blob: write failure");
}

inline ad::NdArray read_blob(std::istream& is, std::uint32_t expect_dtype) {
  const std::uint32_t dtype = detail::get_u32(is);
  if (dtype != expect_dtype) throw std::runtime_error("blob: unexpected dtype");
  const std::uint32_t rank = detail::get_u32(is);
  if (rank < 1 || rank > 8) throw std::runtime_error("blob: implausible rank");
  ad::Shape shape;
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t d = detail::get_u32(is);
    if (d > (1u << 28)) throw std::runtime_error("blob: implausible dim");
    shape.push_back(static_cast<int>(d));
    numel *= d;
  }
  ad::NdArray a(shape, std::vector<double>(numel, 0.0));
  if (dtype == kDtypeF64) {
    is.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(numel * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < numel; ++i) {
      float f = 0.0f;
      is.read(reinterpret_cast<char*>(&f), 4);
      a.data[i] = static_cast<double>(f);
    }
  }
  if (!is) throw std::runtime_error("blob: truncated payload");
  return a;
}

}  // namespace echomap::pipeline
