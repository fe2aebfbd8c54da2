#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace geomerge {

enum class DType : std::uint8_t { F64, F32, F16, BF16 };

constexpr std::size_t byte_width(DType t) {
  switch (t) {
    case DType::F64: return 8;
    case DType::F32: return 4;
    case DType::F16: return 2;
    case DType::BF16: return 2;
  }
  return 0;
}

std::string_view to_string(DType t);
std::optional<DType> parse_dtype(std::string_view s);

// Bit-level codecs. Decoding is exact; encoding rounds to nearest even and
// saturates finite overflow to the largest finite value. Infinities stay
// infinite and NaN payloads are carried over as far as the target allows.
double f16_to_double(std::uint16_t bits);
double bf16_to_double(std::uint16_t bits);
double f32_to_double(std::uint32_t bits);
std::uint16_t double_to_f16(double x);
std::uint16_t double_to_bf16(double x);
std::uint32_t double_to_f32(double x);

// Little-endian raw buffer <-> working precision.
std::vector<double> decode(DType t, std::span<const std::byte> raw);
void decode_into(DType t, std::span<const std::byte> raw, std::span<double> out);
std::vector<std::byte> encode(DType t, std::span<const double> values);

}  // namespace geomerge
