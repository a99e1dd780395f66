#pragma once

// TNSR container:
//   "TNSR" | u32 LE rank | u8 width flag (0x20 = f32, 0x40 = f64)
//   | rank x u32 LE extents | elements, LE IEEE-754 of the flagged width.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "mrunet/tensor.hpp"

namespace mrunet {

inline constexpr std::array<char, 4> tnsr_magic{'T', 'N', 'S', 'R'};
inline constexpr std::uint8_t tnsr_f32 = 0x20;
inline constexpr std::uint8_t tnsr_f64 = 0x40;

namespace detail {

template <std::unsigned_integral U>
void put_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> b{};
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), b.size());
}

template <std::unsigned_integral U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size()))
    throw format_error("TNSR: unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Number of bytes write_tnsr produces for a tensor.
template <Real T>
std::size_t tnsr_size(const Tensor<T>& t) {
  return 4 + 4 + 1 + 4 * t.rank() + sizeof(T) * t.size();
}

template <Real T>
void write_tnsr(std::ostream& os, const Tensor<T>& t) {
  os.write(tnsr_magic.data(), tnsr_magic.size());
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  const std::uint8_t flag = sizeof(T) == 4 ? tnsr_f32 : tnsr_f64;
  os.put(static_cast<char>(flag));
  for (auto e : t.shape()) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : t.values()) detail::put_le<Bits>(os, std::bit_cast<Bits>(v));
}

/// Reads one tensor stored at either width and converts it to T.
template <Real T>
Tensor<T> read_tnsr(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != tnsr_magic) throw format_error("TNSR: bad magic");
  const auto rank = detail::get_le<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw format_error("TNSR: unsupported rank " + std::to_string(rank));
  const int flag = is.get();
  if (flag != tnsr_f32 && flag != tnsr_f64) throw format_error("TNSR: bad width flag");
  Shape shape(rank);
  for (auto& e : shape) {
    e = detail::get_le<std::uint32_t>(is);
    if (e == 0) throw format_error("TNSR: zero extent");
  }
  std::vector<T> data(shape_numel(shape));
  if (flag == tnsr_f32) {
    for (auto& v : data) v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(is)));
  } else {
    for (auto& v : data) v = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(is)));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <Real T>
void save_tnsr(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  write_tnsr(os, t);
  if (!os) throw io_error("write failed: " + path);
}

template <Real T>
Tensor<T> load_tnsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  return read_tnsr<T>(is);
}

}  // namespace mrunet
