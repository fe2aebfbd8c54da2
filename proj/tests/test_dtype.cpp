#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "geomerge/dtype.hpp"
#include "synth.hpp"

using namespace geomerge;

namespace {

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

TEST_CASE("byte widths") {
  CHECK(byte_width(DType::F64) == 8);
  CHECK(byte_width(DType::F32) == 4);
  CHECK(byte_width(DType::F16) == 2);
  CHECK(byte_width(DType::BF16) == 2);
  CHECK(parse_dtype("BF16") == DType::BF16);
  CHECK_FALSE(parse_dtype("I8").has_value());
}

TEST_CASE("f16 known values") {
  CHECK(double_to_f16(1.0) == 0x3C00);
  CHECK(f16_to_double(0x3C00) == 1.0);
  CHECK(f16_to_double(0x7BFF) == 65504.0);
  CHECK(f16_to_double(0x0001) == std::ldexp(1.0, -24));
  CHECK(double_to_f16(-2.0) == 0xC000);
  CHECK(double_to_f16(0.0) == 0x0000);
  CHECK(double_to_f16(-0.0) == 0x8000);
}

TEST_CASE("narrowing saturates finite overflow and keeps infinities") {
  CHECK(f16_to_double(double_to_f16(65520.0)) == 65504.0);
  CHECK(f16_to_double(double_to_f16(1e10)) == 65504.0);
  CHECK(f16_to_double(double_to_f16(-1e10)) == -65504.0);
  CHECK(std::isinf(f16_to_double(double_to_f16(INFINITY))));
  CHECK(f32_to_double(double_to_f32(1e300)) == static_cast<double>(std::numeric_limits<float>::max()));
  CHECK(bf16_to_double(double_to_bf16(1e300)) == bf16_to_double(0x7F7F));
  CHECK(std::isnan(f16_to_double(double_to_f16(NAN))));
  CHECK(std::isnan(bf16_to_double(double_to_bf16(NAN))));
}

TEST_CASE("round to nearest even") {
  // 1 + 2^-11 is halfway between 1 and the next f16; ties go to the even 1.
  CHECK(double_to_f16(1.0 + std::ldexp(1.0, -11)) == 0x3C00);
  // 1 + 3*2^-11 is halfway between 0x3C01 and 0x3C02; ties go to 0x3C02.
  CHECK(double_to_f16(1.0 + 3 * std::ldexp(1.0, -11)) == 0x3C02);
  CHECK(double_to_f16(1.0 + std::ldexp(1.0, -11) + std::ldexp(1.0, -30)) == 0x3C01);
  // Subnormal halfway case rounds to even zero.
  CHECK(double_to_f16(std::ldexp(1.0, -25)) == 0x0000);
  CHECK(double_to_f16(std::ldexp(1.5, -25)) == 0x0001);
  CHECK(double_to_bf16(1.0 + std::ldexp(1.0, -8)) == 0x3F80);
  CHECK(double_to_bf16(1.5) == 0x3FC0);
  CHECK(bf16_to_double(0x3FC0) == 1.5);
}

TEST_CASE("f32 narrowing agrees with the hardware conversion") {
  testkit::SynthRng rng(7);
  for (int i = 0; i < 200000; ++i) {
    const double x = std::ldexp(rng.uniform(-1, 1), static_cast<int>(rng.index(300)) - 150);
    const float hw = static_cast<float>(x);
    if (std::isinf(hw)) continue;
    REQUIRE(double_to_f32(x) == std::bit_cast<std::uint32_t>(hw));
  }
}

TEST_CASE("f16 and bf16 widen/narrow round-trip over all bit patterns") {
  for (std::uint32_t bits = 0; bits <= 0xFFFF; ++bits) {
    const auto b = static_cast<std::uint16_t>(bits);
    REQUIRE(double_to_f16(f16_to_double(b)) == b);
    REQUIRE(double_to_bf16(bf16_to_double(b)) == b);
    // Through F32 storage as well.
    REQUIRE(double_to_f16(f32_to_double(double_to_f32(f16_to_double(b)))) == b);
    REQUIRE(double_to_bf16(f32_to_double(double_to_f32(bf16_to_double(b)))) == b);
  }
}

TEST_CASE("random f32 through f64 is the identity") {
  testkit::SynthRng rng(11);
  for (int i = 0; i < 100000; ++i) {
    const auto bits = static_cast<std::uint32_t>(rng.next());
    const float f = std::bit_cast<float>(bits);
    if (std::isnan(f)) continue;
    REQUIRE(double_to_f32(f32_to_double(bits)) == bits);
    REQUIRE(same_bits(f32_to_double(bits), static_cast<double>(f)));
  }
}

TEST_CASE("buffer encode/decode") {
  const std::vector<double> v = {1.0, -2.5, 0.125};
  for (DType t : {DType::F64, DType::F32, DType::F16, DType::BF16}) {
    const auto raw = encode(t, v);
    CHECK(raw.size() == v.size() * byte_width(t));
    CHECK(decode(t, raw) == v);
  }
  const auto raw = encode(DType::F16, std::vector<double>{1.0});
  CHECK(raw[0] == std::byte{0x00});
  CHECK(raw[1] == std::byte{0x3C});
}
