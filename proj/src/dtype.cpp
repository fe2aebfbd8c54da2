#include "geomerge/dtype.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace geomerge {

namespace {

// IEEE-style binary format with `ExpBits` exponent bits and `ManBits`
// explicit mantissa bits, stored in the low bits of a uint64.
template <int ExpBits, int ManBits>
struct Format {
  static constexpr int bias = (1 << (ExpBits - 1)) - 1;
  static constexpr std::uint64_t exp_mask = (std::uint64_t{1} << ExpBits) - 1;
  static constexpr std::uint64_t man_mask = (std::uint64_t{1} << ManBits) - 1;
  static constexpr int sign_shift = ExpBits + ManBits;

  static double decode(std::uint64_t bits) {
    const bool neg = (bits >> sign_shift) & 1;
    const std::uint64_t e = (bits >> ManBits) & exp_mask;
    const std::uint64_t m = bits & man_mask;
    if (e == exp_mask) {
      std::uint64_t d = (std::uint64_t{neg} << 63) | (std::uint64_t{0x7FF} << 52);
      // Shifting the payload up keeps the quiet bit in the quiet position.
      d |= m << (52 - ManBits);
      return std::bit_cast<double>(d);
    }
    double mag;
    if (e == 0) {
      mag = std::ldexp(static_cast<double>(m), 1 - bias - ManBits);
    } else {
      mag = std::ldexp(static_cast<double>(m | (std::uint64_t{1} << ManBits)),
                       static_cast<int>(e) - bias - ManBits);
    }
    return neg ? -mag : mag;
  }

  static std::uint64_t encode(double x) {
    const std::uint64_t d = std::bit_cast<std::uint64_t>(x);
    const std::uint64_t sign = (d >> 63) << sign_shift;
    const int de = static_cast<int>((d >> 52) & 0x7FF);
    std::uint64_t dm = d & ((std::uint64_t{1} << 52) - 1);

    if (de == 0x7FF) {
      if (dm == 0) return sign | (exp_mask << ManBits);
      std::uint64_t m = dm >> (52 - ManBits);
      if (m == 0) m = std::uint64_t{1} << (ManBits - 1);
      return sign | (exp_mask << ManBits) | m;
    }
    if (de == 0 && dm == 0) return sign;

    // Normalise to sig in [2^52, 2^53) with value = sig * 2^(e - 52).
    int e;
    std::uint64_t sig;
    if (de == 0) {
      const int lz = std::countl_zero(dm) - 11;
      sig = dm << lz;
      e = -1022 - lz;
    } else {
      sig = dm | (std::uint64_t{1} << 52);
      e = de - 1023;
    }

    constexpr int min_exp = 1 - bias;
    int base = e < min_exp ? min_exp : e;
    int shift = 52 - ManBits + (base - e);
    std::uint64_t n;
    if (shift >= 63) {
      n = 0;  // below a quarter of the smallest subnormal
    } else {
      n = sig >> shift;
      const std::uint64_t rem = sig & ((std::uint64_t{1} << shift) - 1);
      const std::uint64_t half = std::uint64_t{1} << (shift - 1);
      if (rem > half || (rem == half && (n & 1))) ++n;
    }
    if (n == 0) return sign;
    if (n >> (ManBits + 1)) {
      n >>= 1;
      ++base;
    }
    if (base == min_exp && n < (std::uint64_t{1} << ManBits)) return sign | n;

    const std::uint64_t field = static_cast<std::uint64_t>(base + bias);
    if (field >= exp_mask) return sign | ((exp_mask - 1) << ManBits) | man_mask;
    return sign | (field << ManBits) | (n & man_mask);
  }
};

using F16Format = Format<5, 10>;
using BF16Format = Format<8, 7>;
using F32Format = Format<8, 23>;

static_assert(std::endian::native == std::endian::little,
              "the container format is little-endian; big-endian hosts are not supported");

template <class T>
T load_le(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void store_le(std::byte* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

}  // namespace

std::string_view to_string(DType t) {
  switch (t) {
    case DType::F64: return "F64";
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
  }
  return "?";
}

std::optional<DType> parse_dtype(std::string_view s) {
  if (s == "F64") return DType::F64;
  if (s == "F32") return DType::F32;
  if (s == "F16") return DType::F16;
  if (s == "BF16") return DType::BF16;
  return std::nullopt;
}

double f16_to_double(std::uint16_t bits) { return F16Format::decode(bits); }
double bf16_to_double(std::uint16_t bits) { return BF16Format::decode(bits); }
double f32_to_double(std::uint32_t bits) { return F32Format::decode(bits); }
std::uint16_t double_to_f16(double x) { return static_cast<std::uint16_t>(F16Format::encode(x)); }
std::uint16_t double_to_bf16(double x) { return static_cast<std::uint16_t>(BF16Format::encode(x)); }
std::uint32_t double_to_f32(double x) { return static_cast<std::uint32_t>(F32Format::encode(x)); }

void decode_into(DType t, std::span<const std::byte> raw, std::span<double> out) {
  const std::size_t w = byte_width(t);
  const std::size_t n = raw.size() / w;
  const std::byte* p = raw.data();
  switch (t) {
    case DType::F64:
      for (std::size_t i = 0; i < n; ++i)
        out[i] = std::bit_cast<double>(load_le<std::uint64_t>(p + 8 * i));
      break;
    case DType::F32:
      for (std::size_t i = 0; i < n; ++i) out[i] = f32_to_double(load_le<std::uint32_t>(p + 4 * i));
      break;
    case DType::F16:
      for (std::size_t i = 0; i < n; ++i) out[i] = f16_to_double(load_le<std::uint16_t>(p + 2 * i));
      break;
    case DType::BF16:
      for (std::size_t i = 0; i < n; ++i) out[i] = bf16_to_double(load_le<std::uint16_t>(p + 2 * i));
      break;
  }
}

std::vector<double> decode(DType t, std::span<const std::byte> raw) {
  std::vector<double> out(raw.size() / byte_width(t));
  decode_into(t, raw, out);
  return out;
}

std::vector<std::byte> encode(DType t, std::span<const double> values) {
  const std::size_t w = byte_width(t);
  std::vector<std::byte> raw(values.size() * w);
  std::byte* p = raw.data();
  switch (t) {
    case DType::F64:
      for (std::size_t i = 0; i < values.size(); ++i)
        store_le(p + 8 * i, std::bit_cast<std::uint64_t>(values[i]));
      break;
    case DType::F32:
      for (std::size_t i = 0; i < values.size(); ++i) store_le(p + 4 * i, double_to_f32(values[i]));
      break;
    case DType::F16:
      for (std::size_t i = 0; i < values.size(); ++i) store_le(p + 2 * i, double_to_f16(values[i]));
      break;
    case DType::BF16:
      for (std::size_t i = 0; i < values.size(); ++i) store_le(p + 2 * i, double_to_bf16(values[i]));
      break;
  }
  return raw;
}

}  // namespace geomerge
